#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include <Eigen/Dense>

#include "rmcse/conic.hpp"
#include "rmcse/error.hpp"

namespace rmcse::conic {

AffineExpr& AffineExpr::operator+=(const AffineExpr& other) {
    terms_.insert(terms_.end(), other.terms_.begin(), other.terms_.end());
    constant_ += other.constant_;
    return *this;
}

AffineExpr& AffineExpr::operator-=(const AffineExpr& other) {
    for (const auto& [v, c] : other.terms_) terms_.emplace_back(v, -c);
    constant_ -= other.constant_;
    return *this;
}

AffineExpr& AffineExpr::operator*=(double k) {
    for (auto& term : terms_) term.second *= k;
    constant_ *= k;
    return *this;
}

double AffineExpr::evaluate(std::span<const double> x) const {
    double value = constant_;
    for (const auto& [v, c] : terms_) value += c * x[static_cast<std::size_t>(v)];
    return value;
}

AffineExpr AffineExpr::simplified() const {
    std::map<int, double> merged;
    for (const auto& [v, c] : terms_) merged[v] += c;
    AffineExpr out(constant_);
    for (const auto& [v, c] : merged) {
        if (c != 0.0) out.terms_.emplace_back(v, c);
    }
    return out;
}

// ---------------------------------------------------------------------------

Var ConicProgram::add_variable() { return Var{num_vars_++}; }

std::vector<Var> ConicProgram::add_variables(int count) {
    std::vector<Var> vars;
    vars.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) vars.push_back(add_variable());
    return vars;
}

void ConicProgram::check(const AffineExpr& e) const {
    for (const auto& [v, c] : e.terms()) {
        if (v < 0 || v >= num_vars_) throw InvalidArgumentError("expression references unknown variable " + std::to_string(v));
        if (!std::isfinite(c)) throw InvalidArgumentError("non-finite coefficient");
    }
    if (!std::isfinite(e.constant())) throw InvalidArgumentError("non-finite constant");
}

void ConicProgram::add_zero(std::vector<AffineExpr> rows) {
    for (auto& r : rows) {
        check(r);
        r = r.simplified();
    }
    if (!rows.empty()) constraints_.push_back({ConeKind::zero, 0, std::move(rows)});
}

void ConicProgram::add_nonnegative(std::vector<AffineExpr> rows) {
    for (auto& r : rows) {
        check(r);
        r = r.simplified();
    }
    if (!rows.empty()) constraints_.push_back({ConeKind::nonnegative, 0, std::move(rows)});
}

void ConicProgram::add_second_order(std::vector<AffineExpr> rows) {
    if (rows.empty()) throw InvalidArgumentError("second-order cone needs at least one row");
    for (auto& r : rows) {
        check(r);
        r = r.simplified();
    }
    constraints_.push_back({ConeKind::second_order, 0, std::move(rows)});
}

void ConicProgram::add_psd(const AffineMatrix& matrix) {
    if (matrix.rows() != matrix.cols() || matrix.rows() == 0) {
        throw InvalidArgumentError("PSD constraint needs a non-empty square matrix");
    }
    const int d = matrix.rows();
    std::vector<AffineExpr> rows(static_cast<std::size_t>(svec_size(d)));
    for (int j = 0; j < d; ++j) {
        for (int i = 0; i <= j; ++i) {
            check(matrix(i, j));
            AffineExpr e = matrix(i, j).simplified();
            if (i != j) e *= std::sqrt(2.0);
            rows[static_cast<std::size_t>(svec_index(i, j))] = std::move(e);
        }
    }
    constraints_.push_back({ConeKind::psd, d, std::move(rows)});
}

namespace {

void write_expr(std::ostream& out, const AffineExpr& e) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", e.constant());
    out << buf << ' ' << e.terms().size();
    for (const auto& [v, c] : e.terms()) {
        std::snprintf(buf, sizeof buf, "%.17g", c);
        out << ' ' << v << ' ' << buf;
    }
    out << '\n';
}

}  // namespace

std::string ConicProgram::dump() const {
    std::ostringstream out;
    out << "vars " << num_vars_ << '\n';
    out << "objective ";
    write_expr(out, objective_);
    for (const ConeConstraint& cone : constraints_) {
        static constexpr const char* names[] = {"zero", "nonneg", "soc", "psd"};
        out << "cone " << names[static_cast<int>(cone.kind)] << ' ' << cone.rows.size();
        if (cone.kind == ConeKind::psd) out << ' ' << cone.psd_dim;
        out << '\n';
        for (const AffineExpr& row : cone.rows) {
            out << "row ";
            write_expr(out, row);
        }
    }
    return out.str();
}

std::string to_string(SolveStatus status) {
    switch (status) {
        case SolveStatus::optimal: return "optimal";
        case SolveStatus::infeasible: return "infeasible";
        case SolveStatus::unbounded: return "unbounded";
        case SolveStatus::numerical_limit: return "numerical_limit";
    }
    return "?";
}

FeasibilityAudit audit_feasibility(const ConicProgram& program, std::span<const double> x) {
    FeasibilityAudit audit;
    bool first_nonneg = true, first_soc = true, first_psd = true;
    for (const ConeConstraint& cone : program.constraints()) {
        std::vector<double> values;
        values.reserve(cone.rows.size());
        for (const AffineExpr& row : cone.rows) values.push_back(row.evaluate(x));
        switch (cone.kind) {
            case ConeKind::zero:
                for (double v : values) audit.zero_max_abs = std::max(audit.zero_max_abs, std::abs(v));
                break;
            case ConeKind::nonnegative:
                for (double v : values) {
                    audit.nonneg_min = first_nonneg ? v : std::min(audit.nonneg_min, v);
                    first_nonneg = false;
                }
                break;
            case ConeKind::second_order: {
                double tail = 0.0;
                for (std::size_t i = 1; i < values.size(); ++i) tail += values[i] * values[i];
                const double margin = values[0] - std::sqrt(tail);
                audit.soc_min_margin = first_soc ? margin : std::min(audit.soc_min_margin, margin);
                first_soc = false;
                break;
            }
            case ConeKind::psd: {
                const int d = cone.psd_dim;
                Eigen::MatrixXd m(d, d);
                for (int j = 0; j < d; ++j) {
                    for (int i = 0; i <= j; ++i) {
                        double v = values[static_cast<std::size_t>(svec_index(i, j))];
                        if (i != j) v /= std::sqrt(2.0);
                        m(i, j) = m(j, i) = v;
                    }
                }
                const double lo = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(m, Eigen::EigenvaluesOnly)
                                      .eigenvalues()
                                      .minCoeff();
                audit.psd_min_eig = first_psd ? lo : std::min(audit.psd_min_eig, lo);
                first_psd = false;
                break;
            }
        }
    }
    return audit;
}

// ---------------------------------------------------------------------------

AffineExpr add_nuclear_norm_epigraph(ConicProgram& program, const AffineMatrix& x) {
    const int r = x.rows();
    const int c = x.cols();
    if (r == 0 || c == 0) throw InvalidArgumentError("nuclear norm of an empty matrix");

    const std::vector<Var> w1 = program.add_variables(svec_size(r));
    const std::vector<Var> w2 = program.add_variables(svec_size(c));
    AffineMatrix block(r + c, r + c);
    for (int j = 0; j < r; ++j) {
        for (int i = 0; i <= j; ++i) block(i, j) = w1[static_cast<std::size_t>(svec_index(i, j))];
    }
    for (int i = 0; i < r; ++i) {
        for (int j = 0; j < c; ++j) block(i, r + j) = x(i, j);
    }
    for (int j = 0; j < c; ++j) {
        for (int i = 0; i <= j; ++i) block(r + i, r + j) = w2[static_cast<std::size_t>(svec_index(i, j))];
    }
    program.add_psd(block);

    AffineExpr t;
    for (int i = 0; i < r; ++i) t.add_term(w1[static_cast<std::size_t>(svec_index(i, i))], 0.5);
    for (int j = 0; j < c; ++j) t.add_term(w2[static_cast<std::size_t>(svec_index(j, j))], 0.5);
    return t;
}

Var add_soc_norm(ConicProgram& program, const std::vector<AffineExpr>& vec) {
    const Var s = program.add_variable();
    std::vector<AffineExpr> rows;
    rows.reserve(vec.size() + 1);
    rows.emplace_back(s);
    rows.insert(rows.end(), vec.begin(), vec.end());
    program.add_second_order(std::move(rows));
    return s;
}

void add_abs_bound(ConicProgram& program, const AffineExpr& expr, const AffineExpr& bound) {
    program.add_nonnegative({bound - expr, bound + expr});
}

}  // namespace rmcse::conic
