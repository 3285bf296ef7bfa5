#include "rmcse/powerflow.hpp"

#include <cmath>

#include "rmcse/error.hpp"

namespace rmcse {

InjectionVector InjectionVector::from_loads(const Network& network) {
    const int n = network.num_buses();
    InjectionVector inj{Eigen::VectorXd::Zero(2 * n)};
    for (const Bus& bus : network.buses()) {
        if (bus.kind == BusKind::slack) continue;
        inj.x(bus.id) = -bus.p_load;
        inj.x(n + bus.id) = -bus.q_load;
    }
    return inj;
}

ComplexVector injected_power(const ComplexVector& v, const ComplexMatrix& ybus) {
    const ComplexVector current = ybus * v;
    return v.array() * current.array().conjugate();
}

ComplexVector injected_power(const ComplexState& state, const Network& network) {
    return injected_power(state.v, build_ybus(network));
}

InjectionJacobian injection_jacobian(const ComplexVector& v, const ComplexMatrix& ybus) {
    const int n = static_cast<int>(v.size());
    const ComplexVector current = ybus * v;
    InjectionJacobian jac{ComplexMatrix(n, n), ComplexMatrix(n, n)};
    const Complex j(0.0, 1.0);
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < n; ++k) {
            const Complex term = v(i) * std::conj(ybus(i, k));
            jac.dS_de(i, k) = term;
            jac.dS_df(i, k) = -j * term;
        }
        jac.dS_de(i, i) += std::conj(current(i));
        jac.dS_df(i, i) += j * std::conj(current(i));
    }
    return jac;
}

Complex line_current(const ComplexState& state, const Branch& branch) {
    return (state.v(branch.from_bus) - state.v(branch.to_bus)) * branch_admittance(branch);
}

ComplexState solve_ac(const Network& network, const InjectionVector& injections, const PowerFlowOptions& options) {
    const int n = network.num_buses();
    if (injections.x.size() != 2 * n) throw InvalidArgumentError("injection vector must have length 2n");
    const int slack = network.slack_bus();
    const ComplexMatrix ybus = build_ybus(network);

    std::vector<int> pq;
    for (int i = 0; i < n; ++i) {
        if (i != slack) pq.push_back(i);
    }
    const int m = static_cast<int>(pq.size());

    ComplexState state = ComplexState::flat(n, options.slack_voltage);
    if (m == 0) return state;

    Eigen::VectorXd mismatch(2 * m);
    double worst = 0.0;
    for (int iter = 0;; ++iter) {
        const ComplexVector s = injected_power(state.v, ybus);
        for (int a = 0; a < m; ++a) {
            const int i = pq[static_cast<std::size_t>(a)];
            mismatch(a) = injections.p(i) - s(i).real();
            mismatch(m + a) = injections.q(i) - s(i).imag();
        }
        worst = mismatch.lpNorm<Eigen::Infinity>();
        if (worst < options.tol) return state;
        if (iter >= options.max_iter || !std::isfinite(worst)) {
            throw DivergenceError("power flow did not converge in " + std::to_string(options.max_iter) +
                                      " iterations (mismatch " + std::to_string(worst) + ")",
                                  worst);
        }

        const InjectionJacobian jac = injection_jacobian(state.v, ybus);
        Eigen::MatrixXd J(2 * m, 2 * m);
        for (int a = 0; a < m; ++a) {
            const int i = pq[static_cast<std::size_t>(a)];
            for (int b = 0; b < m; ++b) {
                const int k = pq[static_cast<std::size_t>(b)];
                J(a, b) = jac.dS_de(i, k).real();
                J(a, m + b) = jac.dS_df(i, k).real();
                J(m + a, b) = jac.dS_de(i, k).imag();
                J(m + a, m + b) = jac.dS_df(i, k).imag();
            }
        }
        const Eigen::VectorXd step = J.partialPivLu().solve(mismatch);
        for (int a = 0; a < m; ++a) {
            const int i = pq[static_cast<std::size_t>(a)];
            state.v(i) += Complex(step(a), step(m + a));
        }
    }
}

ComplexVector LinearModel::predict_voltage(const InjectionVector& injections) const {
    return w + D * injections.x.cast<Complex>();
}

Eigen::VectorXd LinearModel::predict_magnitude(const InjectionVector& injections) const {
    return w.cwiseAbs() + K * injections.x;
}

LinearModel build_linear_model(const Network& network, Complex slack_voltage) {
    const int n = network.num_buses();
    const int slack = network.slack_bus();
    const ComplexMatrix ybus = build_ybus(network);

    LinearModel model;
    model.slack_voltage = slack_voltage;
    for (int i = 0; i < n; ++i) {
        if (i != slack) model.load_buses.push_back(i);
    }
    const int m = static_cast<int>(model.load_buses.size());

    ComplexMatrix y_ll(m, m);
    ComplexVector y_l0(m);
    for (int a = 0; a < m; ++a) {
        const int i = model.load_buses[static_cast<std::size_t>(a)];
        y_l0(a) = ybus(i, slack);
        for (int b = 0; b < m; ++b) y_ll(a, b) = ybus(i, model.load_buses[static_cast<std::size_t>(b)]);
    }
    const Eigen::FullPivLU<ComplexMatrix> lu(y_ll);
    if (m > 0 && !lu.isInvertible()) throw ModelError("Y_LL is singular; network is not radial or is disconnected");
    const ComplexMatrix z_ll = m > 0 ? ComplexMatrix(lu.inverse()) : ComplexMatrix(0, 0);

    model.w = -(z_ll * y_l0) * slack_voltage;
    model.D = ComplexMatrix::Zero(m, 2 * n);
    const Complex j(0.0, 1.0);
    for (int b = 0; b < m; ++b) {
        const int k = model.load_buses[static_cast<std::size_t>(b)];
        const Complex scale = 1.0 / std::conj(model.w(b));
        for (int a = 0; a < m; ++a) {
            model.D(a, k) = z_ll(a, b) * scale;
            model.D(a, n + k) = -j * z_ll(a, b) * scale;
        }
    }
    model.K.resize(m, 2 * n);
    for (int a = 0; a < m; ++a) {
        const Complex rot = std::conj(model.w(a)) / std::abs(model.w(a));
        for (int c = 0; c < 2 * n; ++c) model.K(a, c) = (rot * model.D(a, c)).real();
    }
    return model;
}

}  // namespace rmcse
