#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

namespace rmcse::conic {

struct Var {
    int index = -1;
};

/// sum_k coef_k * x_{var_k} + constant
class AffineExpr {
public:
    AffineExpr() = default;
    AffineExpr(double constant) : constant_(constant) {}  // NOLINT(google-explicit-constructor)
    AffineExpr(Var v) : terms_{{v.index, 1.0}} {}         // NOLINT(google-explicit-constructor)

    static AffineExpr term(Var v, double coef) {
        AffineExpr e;
        if (coef != 0.0) e.terms_.emplace_back(v.index, coef);
        return e;
    }

    const std::vector<std::pair<int, double>>& terms() const noexcept { return terms_; }
    double constant() const noexcept { return constant_; }
    bool is_constant() const noexcept { return terms_.empty(); }

    void add_term(Var v, double coef) {
        if (coef != 0.0) terms_.emplace_back(v.index, coef);
    }

    AffineExpr& operator+=(const AffineExpr& other);
    AffineExpr& operator-=(const AffineExpr& other);
    AffineExpr& operator*=(double k);

    friend AffineExpr operator+(AffineExpr a, const AffineExpr& b) { return a += b; }
    friend AffineExpr operator-(AffineExpr a, const AffineExpr& b) { return a -= b; }
    friend AffineExpr operator*(AffineExpr a, double k) { return a *= k; }
    friend AffineExpr operator*(double k, AffineExpr a) { return a *= k; }
    friend AffineExpr operator-(AffineExpr a) { return a *= -1.0; }

    double evaluate(std::span<const double> x) const;

    /// Merges duplicate variables and drops zero coefficients.
    AffineExpr simplified() const;

private:
    std::vector<std::pair<int, double>> terms_;
    double constant_ = 0.0;
};

/// Dense matrix of affine expressions, row-major.
class AffineMatrix {
public:
    AffineMatrix() = default;
    AffineMatrix(int rows, int cols) : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows * cols)) {}

    int rows() const noexcept { return rows_; }
    int cols() const noexcept { return cols_; }
    AffineExpr& operator()(int r, int c) { return data_[static_cast<std::size_t>(r * cols_ + c)]; }
    const AffineExpr& operator()(int r, int c) const { return data_[static_cast<std::size_t>(r * cols_ + c)]; }

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<AffineExpr> data_;
};

enum class ConeKind { zero, nonnegative, second_order, psd };

/// Symmetric d x d blocks are vectorized column by column over the upper
/// triangle, (0,0), (0,1), (1,1), (0,2), ..., with off-diagonal entries
/// multiplied by sqrt(2) so that inner products are preserved.
constexpr int svec_size(int d) { return d * (d + 1) / 2; }
constexpr int svec_index(int i, int j) { return i <= j ? j * (j + 1) / 2 + i : i * (i + 1) / 2 + j; }

struct ConeConstraint {
    ConeKind kind = ConeKind::nonnegative;
    int psd_dim = 0;
    std::vector<AffineExpr> rows;
};

class ConicProgram {
public:
    Var add_variable();
    std::vector<Var> add_variables(int count);
    int num_vars() const noexcept { return num_vars_; }

    void minimize(AffineExpr objective) { objective_ = std::move(objective); }
    const AffineExpr& objective() const noexcept { return objective_; }

    /// Every row equals zero.
    void add_zero(std::vector<AffineExpr> rows);
    /// Every row is >= 0.
    void add_nonnegative(std::vector<AffineExpr> rows);
    /// rows[0] >= || rows[1..] ||_2
    void add_second_order(std::vector<AffineExpr> rows);
    /// The symmetric matrix (upper triangle read) is positive semidefinite.
    void add_psd(const AffineMatrix& matrix);

    const std::vector<ConeConstraint>& constraints() const noexcept { return constraints_; }

    /// Sparse text dump for debugging:
    ///   vars <n>
    ///   objective <const> <nterms> {<var> <coef>}
    ///   cone <zero|nonneg|soc|psd> <nrows> [<dim>]
    ///   row <const> <nterms> {<var> <coef>}
    std::string dump() const;

private:
    void check(const AffineExpr& e) const;

    int num_vars_ = 0;
    AffineExpr objective_;
    std::vector<ConeConstraint> constraints_;
};

enum class SolveStatus { optimal, infeasible, unbounded, numerical_limit };
std::string to_string(SolveStatus status);

struct SolverSettings {
    double feastol = 1e-8;
    double abstol = 1e-8;
    double reltol = 1e-8;
    int max_iter = 200;
};

struct FeasibilityAudit {
    double zero_max_abs = 0.0;  // max |row| over zero cones
    double nonneg_min = 0.0;    // min row over nonnegative cones
    double soc_min_margin = 0.0;
    double psd_min_eig = 0.0;

    bool ok(double tol = 1e-6) const {
        return zero_max_abs < tol && nonneg_min > -tol && soc_min_margin > -tol && psd_min_eig > -tol;
    }
};

FeasibilityAudit audit_feasibility(const ConicProgram& program, std::span<const double> x);

struct ConicSolution {
    SolveStatus status = SolveStatus::numerical_limit;
    std::vector<double> primal;  // empty unless optimal or numerical_limit
    double objective_value = 0.0;
    int iterations = 0;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    double gap = 0.0;
    FeasibilityAudit audit;

    bool has_primal() const noexcept { return !primal.empty(); }
    double value(Var v) const { return primal.at(static_cast<std::size_t>(v.index)); }
    double value(const AffineExpr& e) const { return e.evaluate(primal); }
};

/// Homogeneous self-dual primal-dual interior-point method with
/// Nesterov-Todd scaling and Mehrotra correction.
ConicSolution solve(const ConicProgram& program, const SolverSettings& settings = {});

/// Adds W1, W2 and [[W1, X], [X^T, W2]] >= 0; returns t = (tr W1 + tr W2) / 2,
/// which equals the nuclear norm of X when minimized.
AffineExpr add_nuclear_norm_epigraph(ConicProgram& program, const AffineMatrix& x);

/// New variable s with (s, vec) in the second-order cone.
Var add_soc_norm(ConicProgram& program, const std::vector<AffineExpr>& vec);

/// expr <= bound and -expr <= bound.
void add_abs_bound(ConicProgram& program, const AffineExpr& expr, const AffineExpr& bound);

}  // namespace rmcse::conic
