#include "rmcse/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <json.hpp>

#include "rmcse/error.hpp"

namespace rmcse {

namespace {

constexpr double kRadToDeg = 180.0 / std::numbers::pi;

double sigma_of(const Measurement& m) { return std::max(m.sigma, kSigmaFloor); }

void fill_polar(EstimationResult& r) {
    const int n = r.voltage.size();
    r.angle_deg.resize(n);
    for (int i = 0; i < n; ++i) r.angle_deg(i) = std::arg(r.voltage.v(i)) * kRadToDeg;
}

ComplexVector branch_currents(const ComplexState& state, const Network& network) {
    ComplexVector out(network.num_branches());
    for (int k = 0; k < network.num_branches(); ++k) {
        out(k) = line_current(state, network.branches()[static_cast<std::size_t>(k)]);
    }
    return out;
}

InjectionVector to_injections(const ComplexVector& s) {
    const auto n = s.size();
    InjectionVector inj;
    inj.x.resize(2 * n);
    inj.x.head(n) = s.real();
    inj.x.tail(n) = s.imag();
    return inj;
}

}  // namespace

// ---------------------------------------------------------------------------

StateMatrixSchema::StateMatrixSchema(const Network& network) : slack_(network.slack_bus()) {
    for (const Branch& br : network.branches()) branches_.emplace_back(br.from_bus, br.to_bus);
}

StateCell StateMatrixSchema::cell(int row, int col) const {
    if (row < 0 || row >= rows() || col < 0 || col >= state_columns) {
        throw InvalidArgumentError("state matrix cell out of range");
    }
    const auto [i, j] = branches_[static_cast<std::size_t>(row)];
    using S = StateCell::Source;
    static constexpr S bus_sources[] = {S::e, S::f, S::u, S::p, S::q};
    if (col < col_e_j) return {bus_sources[col], i};
    if (col < col_i_re) return {bus_sources[col - col_e_j], j};
    return {col == col_i_re ? S::i_re : S::i_im, row};
}

std::vector<std::pair<int, int>> StateMatrixSchema::cells_for(const MeasurementTag& tag) const {
    std::vector<std::pair<int, int>> out;
    auto bus_cells = [&](int bus, int offset) {
        for (int r = 0; r < rows(); ++r) {
            const auto [i, j] = branches_[static_cast<std::size_t>(r)];
            if (i == bus) out.emplace_back(r, col_e_i + offset);
            if (j == bus) out.emplace_back(r, col_e_j + offset);
        }
    };
    switch (tag.kind) {
        case MeasurementKind::ref_volt_re: bus_cells(slack_, 0); break;
        case MeasurementKind::ref_volt_im: bus_cells(slack_, 1); break;
        case MeasurementKind::vmag: bus_cells(tag.index, 2); break;
        case MeasurementKind::pinj: bus_cells(tag.index, 3); break;
        case MeasurementKind::qinj: bus_cells(tag.index, 4); break;
        case MeasurementKind::iline_re: out.emplace_back(tag.index, col_i_re); break;
        case MeasurementKind::iline_im: out.emplace_back(tag.index, col_i_im); break;
    }
    return out;
}

Eigen::MatrixXd build_state_matrix(const ComplexState& state, const Network& network) {
    const StateMatrixSchema schema(network);
    const ComplexVector s = injected_power(state, network);
    const ComplexVector cur = branch_currents(state, network);
    Eigen::MatrixXd m(schema.rows(), state_columns);
    for (int r = 0; r < schema.rows(); ++r) {
        for (int c = 0; c < state_columns; ++c) {
            const StateCell cell = schema.cell(r, c);
            double value = 0.0;
            switch (cell.source) {
                case StateCell::Source::e: value = state.v(cell.index).real(); break;
                case StateCell::Source::f: value = state.v(cell.index).imag(); break;
                case StateCell::Source::u: value = std::abs(state.v(cell.index)); break;
                case StateCell::Source::p: value = s(cell.index).real(); break;
                case StateCell::Source::q: value = s(cell.index).imag(); break;
                case StateCell::Source::i_re: value = cur(cell.index).real(); break;
                case StateCell::Source::i_im: value = cur(cell.index).imag(); break;
            }
            m(r, c) = value;
        }
    }
    return m;
}

std::string method_name(Method method) {
    switch (method) {
        case Method::wls: return "wls";
        case Method::wls_lnr: return "wls_lnr";
        case Method::mcse: return "mcse";
        case Method::rmcse: return "rmcse";
    }
    return "?";
}

Method method_from_name(const std::string& name) {
    for (Method m : {Method::wls, Method::wls_lnr, Method::mcse, Method::rmcse}) {
        if (method_name(m) == name) return m;
    }
    if (name == "wls-lnr") return Method::wls_lnr;
    throw InvalidArgumentError("unknown method '" + name + "'");
}

std::string serialize_result(const EstimationResult& result, bool audit) {
    nlohmann::ordered_json doc;
    doc["method"] = method_name(result.method);
    doc["status"] = result.solver_status;
    doc["iterations"] = result.iterations;
    doc["objective"] = result.objective;
    nlohmann::ordered_json buses = nlohmann::ordered_json::array();
    for (int i = 0; i < result.voltage.size(); ++i) {
        nlohmann::ordered_json b;
        b["bus"] = i;
        b["vmag"] = result.vmag(i);
        b["angle_deg"] = result.angle_deg(i);
        if (audit) {
            b["vmag_rect"] = std::abs(result.voltage.v(i));
            b["p"] = result.injections.p(i);
            b["q"] = result.injections.q(i);
        }
        buses.push_back(b);
    }
    doc["buses"] = buses;
    nlohmann::ordered_json branches = nlohmann::ordered_json::array();
    for (Eigen::Index k = 0; k < result.line_currents.size(); ++k) {
        branches.push_back({{"branch", k}, {"i_re", result.line_currents(k).real()}, {"i_im", result.line_currents(k).imag()}});
    }
    doc["branches"] = branches;
    nlohmann::ordered_json removed = nlohmann::ordered_json::array();
    for (const MeasurementTag& t : result.removed) removed.push_back(tag_label(t));
    doc["removed"] = removed;
    if (result.method == Method::wls_lnr) doc["lnr_stopped_unobservable"] = result.lnr_stopped_unobservable;
    return doc.dump(2) + "\n";
}

// ---------------------------------------------------------------------------

EstimationResult wls(const MeasurementSet& set, const Network& network, const ComplexState& init,
                     const WlsOptions& options) {
    const int n = network.num_buses();
    if (init.size() != n) throw InvalidArgumentError("initial state has the wrong size");
    const MeasurementModel model(network);
    const std::vector<MeasurementTag> tags = tags_of(set);
    const auto count = static_cast<Eigen::Index>(tags.size());
    Eigen::VectorXd z(count), weight(count);
    for (Eigen::Index r = 0; r < count; ++r) {
        const Measurement& m = set.measurements[static_cast<std::size_t>(r)];
        z(r) = m.value;
        weight(r) = 1.0 / (sigma_of(m) * sigma_of(m));
    }

    ComplexVector v = init.v;
    {
        const int rank = numerical_rank(model.jacobian(tags, v));
        if (rank < 2 * n) {
            throw UnobservableError("measurement Jacobian rank " + std::to_string(rank) + " < " +
                                        std::to_string(2 * n) + " states",
                                    rank, 2 * n);
        }
    }

    double step = std::numeric_limits<double>::infinity();
    int iter = 0;
    while (iter < options.max_iter) {
        ++iter;
        const Eigen::MatrixXd H = model.jacobian(tags, v);
        const Eigen::VectorXd r = z - model.evaluate(tags, v);
        const Eigen::MatrixXd G = H.transpose() * weight.asDiagonal() * H;
        const Eigen::LDLT<Eigen::MatrixXd> ldlt(G);
        if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
            throw UnobservableError("gain matrix is singular", numerical_rank(H), 2 * n);
        }
        const Eigen::VectorXd wr = weight.cwiseProduct(r);
        const Eigen::VectorXd grad = H.transpose() * wr;
        // Gain matrix with the residual curvature sum_i w_i r_i d2h_i added back;
        // plain Gauss-Newton cycles when that term is large along weak directions.
        Eigen::MatrixXd curvature(2 * n, 2 * n);
        for (int k = 0; k < 2 * n; ++k) {
            constexpr double h = 1e-6;
            const Complex d = k < n ? Complex(h, 0.0) : Complex(0.0, h);
            ComplexVector up = v, down = v;
            up(k % n) += d;
            down(k % n) -= d;
            curvature.col(k) = ((model.jacobian(tags, up) - model.jacobian(tags, down)) / (2.0 * h)).transpose() * wr;
        }
        Eigen::MatrixXd newton = G - curvature;
        newton = 0.5 * (newton + newton.transpose()).eval();
        const Eigen::LDLT<Eigen::MatrixXd> full(newton);
        const Eigen::VectorXd dx = full.info() == Eigen::Success && full.isPositive() ? Eigen::VectorXd(full.solve(grad))
                                                                                       : Eigen::VectorXd(ldlt.solve(grad));
        if (!dx.allFinite()) throw DivergenceError("WLS update is not finite", r.lpNorm<Eigen::Infinity>());
        step = dx.lpNorm<Eigen::Infinity>();
        const double cost = r.dot(wr);
        const double slope = -2.0 * grad.dot(dx);
        double t = 1.0;
        ComplexVector trial = v;
        for (int k = 0; k < 30; ++k) {
            for (int i = 0; i < n; ++i) trial(i) = v(i) + t * Complex(dx(i), dx(n + i));
            const Eigen::VectorXd rt = z - model.evaluate(tags, trial);
            if (rt.cwiseProduct(rt).dot(weight) <= cost + 1e-4 * t * slope) break;
            t *= 0.5;
        }
        v = trial;
        if (step < options.tol) break;
    }
    if (!(step < options.tol)) {
        throw DivergenceError("WLS did not converge in " + std::to_string(options.max_iter) + " iterations", step);
    }

    EstimationResult res;
    res.method = Method::wls;
    res.voltage.v = v;
    res.vmag = v.cwiseAbs();
    fill_polar(res);
    res.injections = to_injections(injected_power(v, model.ybus()));
    res.line_currents = branch_currents(res.voltage, network);
    res.solver_status = "converged";
    res.iterations = iter;
    const Eigen::VectorXd r = z - model.evaluate(tags, v);
    res.objective = r.cwiseProduct(r).dot(weight);
    return res;
}

Eigen::VectorXd normalized_residuals(const EstimationResult& result, const MeasurementSet& set,
                                     const Network& network) {
    const int n = network.num_buses();
    const MeasurementModel model(network);
    const std::vector<MeasurementTag> tags = tags_of(set);
    const Eigen::MatrixXd H = model.jacobian(tags, result.voltage.v);
    const Eigen::VectorXd h = model.evaluate(tags, result.voltage.v);
    const auto count = static_cast<Eigen::Index>(tags.size());
    Eigen::VectorXd var(count), r(count);
    for (Eigen::Index i = 0; i < count; ++i) {
        const Measurement& m = set.measurements[static_cast<std::size_t>(i)];
        var(i) = sigma_of(m) * sigma_of(m);
        r(i) = m.value - h(i);
    }
    const Eigen::MatrixXd G = H.transpose() * var.cwiseInverse().asDiagonal() * H;
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(G);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || numerical_rank(H) < 2 * n) {
        throw UnobservableError("gain matrix is singular", numerical_rank(H), 2 * n);
    }
    const Eigen::MatrixXd GiHt = ldlt.solve(H.transpose());
    Eigen::VectorXd rn(count);
    for (Eigen::Index i = 0; i < count; ++i) {
        const double omega = var(i) - H.row(i).dot(GiHt.col(i));
        rn(i) = omega / var(i) < 1e-10 ? std::numeric_limits<double>::quiet_NaN() : std::abs(r(i)) / std::sqrt(omega);
    }
    return rn;
}

EstimationResult wls_lnr(const MeasurementSet& set, const Network& network, const ComplexState& init,
                         const LnrOptions& options) {
    const int n = network.num_buses();
    const MeasurementModel model(network);
    MeasurementSet current = set;
    std::vector<MeasurementTag> removed;
    int total_iterations = 0;
    bool stopped = false;
    for (;;) {
        EstimationResult res = wls(current, network, init, options.wls);
        total_iterations += res.iterations;
        const Eigen::VectorXd rn = normalized_residuals(res, current, network);
        Eigen::Index worst = -1;
        for (Eigen::Index i = 0; i < rn.size(); ++i) {
            if (std::isnan(rn(i))) continue;
            if (worst < 0 || rn(i) > rn(worst)) worst = i;
        }
        if (worst >= 0 && rn(worst) > options.threshold) {
            MeasurementSet reduced = current;
            reduced.measurements.erase(reduced.measurements.begin() + worst);
            const int rank = numerical_rank(model.jacobian(tags_of(reduced), res.voltage.v));
            if (rank == 2 * n) {
                removed.push_back(current.measurements[static_cast<std::size_t>(worst)].tag);
                current = std::move(reduced);
                continue;
            }
            stopped = true;
        }
        res.method = Method::wls_lnr;
        res.removed = std::move(removed);
        res.lnr_stopped_unobservable = stopped;
        res.iterations = total_iterations;
        return res;
    }
}

// ---------------------------------------------------------------------------

CompletionProgram build_completion_program(const MeasurementSet& set, const Network& network,
                                           const LinearModel& linmodel, const RmcseWeights& weights,
                                           std::optional<double> delta) {
    using conic::AffineExpr;
    const int n = network.num_buses();
    const int m = network.num_branches();
    const int slack = network.slack_bus();
    const Measurement* ref_re = set.find({MeasurementKind::ref_volt_re, slack});
    const Measurement* ref_im = set.find({MeasurementKind::ref_volt_im, slack});
    if (ref_re == nullptr || ref_im == nullptr) {
        throw InvalidArgumentError("measurement set lacks the reference voltage phasor");
    }
    for (double w : {weights.w1, weights.w2, weights.w3, weights.w4}) {
        if (!(w >= 0.0)) throw InvalidArgumentError("weights must be non-negative");
    }
    if (delta && !(*delta >= 0.0)) throw InvalidArgumentError("delta must be non-negative");

    CompletionProgram cp;
    cp.num_buses = n;
    cp.slack = slack;
    conic::ConicProgram& prog = cp.program;
    cp.e = prog.add_variables(n);
    cp.f = prog.add_variables(n);
    cp.u = prog.add_variables(n);
    cp.p = prog.add_variables(n);
    cp.q = prog.add_variables(n);
    cp.i_re = prog.add_variables(m);
    cp.i_im = prog.add_variables(m);

    const StateMatrixSchema schema(network);
    auto var_of = [&](const StateCell& cell) {
        switch (cell.source) {
            case StateCell::Source::e: return cp.e[static_cast<std::size_t>(cell.index)];
            case StateCell::Source::f: return cp.f[static_cast<std::size_t>(cell.index)];
            case StateCell::Source::u: return cp.u[static_cast<std::size_t>(cell.index)];
            case StateCell::Source::p: return cp.p[static_cast<std::size_t>(cell.index)];
            case StateCell::Source::q: return cp.q[static_cast<std::size_t>(cell.index)];
            case StateCell::Source::i_re: return cp.i_re[static_cast<std::size_t>(cell.index)];
            case StateCell::Source::i_im: return cp.i_im[static_cast<std::size_t>(cell.index)];
        }
        return conic::Var{};
    };
    cp.x = conic::AffineMatrix(schema.rows(), state_columns);
    for (int r = 0; r < schema.rows(); ++r) {
        for (int c = 0; c < state_columns; ++c) cp.x(r, c) = var_of(schema.cell(r, c));
    }
    cp.nuclear = conic::add_nuclear_norm_epigraph(prog, cp.x);

    // (a) Ohm's law per branch.
    for (int k = 0; k < m; ++k) {
        const Branch& br = network.branches()[static_cast<std::size_t>(k)];
        const Complex y = branch_admittance(br);
        const auto ks = static_cast<std::size_t>(k);
        const auto i = static_cast<std::size_t>(br.from_bus);
        const auto j = static_cast<std::size_t>(br.to_bus);
        // (dv)(g + jb) with dv = de + j df
        AffineExpr de = AffineExpr(cp.e[i]) - AffineExpr(cp.e[j]);
        AffineExpr df = AffineExpr(cp.f[i]) - AffineExpr(cp.f[j]);
        AffineExpr re = AffineExpr(cp.i_re[ks]) - (de * y.real() - df * y.imag());
        AffineExpr im = AffineExpr(cp.i_im[ks]) - (de * y.imag() + df * y.real());
        cp.eps.push_back(conic::add_soc_norm(prog, {re, im}));
    }

    // (b), (c) linear power-flow model at the non-slack buses.
    cp.gamma = prog.add_variable();
    cp.alpha = prog.add_variable();
    for (std::size_t row = 0; row < linmodel.load_buses.size(); ++row) {
        const auto r = static_cast<Eigen::Index>(row);
        const auto bus = static_cast<std::size_t>(linmodel.load_buses[row]);
        AffineExpr vre = AffineExpr(cp.e[bus]) - linmodel.w(r).real();
        AffineExpr vim = AffineExpr(cp.f[bus]) - linmodel.w(r).imag();
        AffineExpr mag = AffineExpr(cp.u[bus]) - std::abs(linmodel.w(r));
        for (int col = 0; col < 2 * n; ++col) {
            const conic::Var xv = col < n ? cp.p[static_cast<std::size_t>(col)] : cp.q[static_cast<std::size_t>(col - n)];
            const Complex d = linmodel.D(r, col);
            vre.add_term(xv, -d.real());
            vim.add_term(xv, -d.imag());
            mag.add_term(xv, -linmodel.K(r, col));
        }
        prog.add_second_order({cp.gamma, vre, vim});
        conic::add_abs_bound(prog, mag, cp.alpha);
    }

    // (d) residual over the observed cells; the reference phasor is pinned instead.
    std::vector<AffineExpr> residual;
    for (const Measurement& meas : set.measurements) {
        if (meas.tag.is_reference()) continue;
        for (const auto& [r, c] : schema.cells_for(meas.tag)) residual.push_back(cp.x(r, c) - meas.value);
    }
    if (residual.empty()) residual.emplace_back(0.0);
    cp.s_frob = conic::add_soc_norm(prog, residual);

    // (e) every slack voltage cell, the magnitude included.
    const auto sl = static_cast<std::size_t>(slack);
    prog.add_zero({AffineExpr(cp.e[sl]) - ref_re->value, AffineExpr(cp.f[sl]) - ref_im->value,
                   AffineExpr(cp.u[sl]) - std::hypot(ref_re->value, ref_im->value)});

    AffineExpr objective = cp.nuclear;
    for (conic::Var v : cp.eps) objective.add_term(v, weights.w2);
    objective.add_term(cp.gamma, weights.w3);
    objective.add_term(cp.alpha, weights.w4);
    if (delta) {
        prog.add_nonnegative({*delta - AffineExpr(cp.s_frob)});
    } else {
        objective.add_term(cp.s_frob, weights.w1);
    }
    prog.minimize(objective);
    return cp;
}

EstimationResult extract_result(const conic::ConicSolution& solution, const CompletionProgram& cp,
                                const Network& network) {
    if (!solution.has_primal()) {
        throw ExtractionError("solver returned no primal point (" + conic::to_string(solution.status) + ")");
    }
    const int n = cp.num_buses;
    EstimationResult res;
    res.voltage.v.resize(n);
    res.vmag.resize(n);
    res.injections.x.resize(2 * n);
    for (int i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(i);
        res.voltage.v(i) = Complex(solution.value(cp.e[k]), solution.value(cp.f[k]));
        res.vmag(i) = solution.value(cp.u[k]);
        res.injections.x(i) = solution.value(cp.p[k]);
        res.injections.x(n + i) = solution.value(cp.q[k]);
    }
    fill_polar(res);
    res.line_currents.resize(network.num_branches());
    for (std::size_t k = 0; k < cp.i_re.size(); ++k) {
        res.line_currents(static_cast<Eigen::Index>(k)) = Complex(solution.value(cp.i_re[k]), solution.value(cp.i_im[k]));
    }
    res.solver_status = conic::to_string(solution.status);
    res.iterations = solution.iterations;
    res.objective = solution.objective_value;
    return res;
}

EstimationResult rmcse(const MeasurementSet& set, const Network& network, const LinearModel& linmodel,
                       const RmcseWeights& weights, const conic::SolverSettings& settings) {
    const CompletionProgram cp = build_completion_program(set, network, linmodel, weights);
    EstimationResult res = extract_result(conic::solve(cp.program, settings), cp, network);
    res.method = Method::rmcse;
    return res;
}

double default_delta(const MeasurementSet& set, const Network& network) {
    const StateMatrixSchema schema(network);
    double sum = 0.0;
    for (const Measurement& m : set.measurements) {
        if (m.tag.is_reference()) continue;
        sum += static_cast<double>(schema.cells_for(m.tag).size()) * sigma_of(m) * sigma_of(m);
    }
    return std::sqrt(sum);
}

EstimationResult mcse(const MeasurementSet& set, const Network& network, const LinearModel& linmodel, double delta,
                      const RmcseWeights& weights, const conic::SolverSettings& settings) {
    const CompletionProgram cp = build_completion_program(set, network, linmodel, weights, delta);
    const conic::ConicSolution sol = conic::solve(cp.program, settings);
    EstimationResult res;
    if (sol.has_primal()) {
        res = extract_result(sol, cp, network);
    } else {
        res.solver_status = conic::to_string(sol.status);
        res.iterations = sol.iterations;
    }
    res.method = Method::mcse;
    return res;
}

double rmcse_objective_at(const ComplexState& state, const MeasurementSet& set, const Network& network,
                          const LinearModel& linmodel, const RmcseWeights& weights) {
    const Eigen::MatrixXd x = build_state_matrix(state, network);
    const StateMatrixSchema schema(network);
    double value = Eigen::JacobiSVD<Eigen::MatrixXd>(x).singularValues().sum();

    double frob = 0.0;
    for (const Measurement& m : set.measurements) {
        if (m.tag.is_reference()) continue;
        for (const auto& [r, c] : schema.cells_for(m.tag)) frob += (x(r, c) - m.value) * (x(r, c) - m.value);
    }
    value += weights.w1 * std::sqrt(frob);

    const ComplexVector cur = branch_currents(state, network);
    for (Eigen::Index k = 0; k < cur.size(); ++k) {
        const Branch& br = network.branches()[static_cast<std::size_t>(k)];
        value += weights.w2 * std::abs(cur(k) - (state.v(br.from_bus) - state.v(br.to_bus)) * branch_admittance(br));
    }

    const InjectionVector inj = to_injections(injected_power(state, network));
    const ComplexVector v_lin = linmodel.predict_voltage(inj);
    const Eigen::VectorXd mag_lin = linmodel.predict_magnitude(inj);
    double gamma = 0.0, alpha = 0.0;
    for (std::size_t row = 0; row < linmodel.load_buses.size(); ++row) {
        const auto r = static_cast<Eigen::Index>(row);
        const Complex v = state.v(linmodel.load_buses[row]);
        gamma = std::max(gamma, std::abs(v - v_lin(r)));
        alpha = std::max(alpha, std::abs(std::abs(v) - mag_lin(r)));
    }
    return value + weights.w3 * gamma + weights.w4 * alpha;
}

}  // namespace rmcse
