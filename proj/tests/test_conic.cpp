#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "rmcse/conic.hpp"
#include "rmcse/error.hpp"

using namespace rmcse::conic;

namespace {

AffineMatrix fixed(const Eigen::MatrixXd& m) {
    AffineMatrix a(static_cast<int>(m.rows()), static_cast<int>(m.cols()));
    for (int i = 0; i < m.rows(); ++i) {
        for (int j = 0; j < m.cols(); ++j) a(i, j) = m(i, j);
    }
    return a;
}

double nuclear_by_sdp(const Eigen::MatrixXd& m) {
    ConicProgram p;
    const AffineExpr t = add_nuclear_norm_epigraph(p, fixed(m));
    p.minimize(t);
    const ConicSolution s = solve(p);
    REQUIRE(s.status == SolveStatus::optimal);
    return s.objective_value;
}

double nuclear_by_svd(const Eigen::MatrixXd& m) { return Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues().sum(); }

}  // namespace

TEST_CASE("svec layout") {
    CHECK(svec_size(3) == 6);
    CHECK(svec_index(0, 0) == 0);
    CHECK(svec_index(0, 1) == 1);
    CHECK(svec_index(1, 1) == 2);
    CHECK(svec_index(0, 2) == 3);
    CHECK(svec_index(2, 1) == svec_index(1, 2));
}

TEST_CASE("affine expressions") {
    ConicProgram p;
    const Var x = p.add_variable();
    const Var y = p.add_variable();
    const AffineExpr e = 2.0 * AffineExpr(x) - AffineExpr(y) + 3.0 + AffineExpr(x);
    const std::vector<double> at{1.0, 4.0};
    CHECK(e.evaluate(at) == doctest::Approx(2.0));
    CHECK(e.simplified().terms().size() == 2);
    CHECK((AffineExpr(x) - AffineExpr(x)).simplified().is_constant());
    ConicProgram other;
    CHECK_THROWS(other.add_nonnegative({AffineExpr(y)}));
}

TEST_CASE("small programs") {
    {
        ConicProgram p;
        const Var x = p.add_variable();
        p.minimize(x);
        p.add_nonnegative({AffineExpr(x) - 3.0});
        const ConicSolution s = solve(p);
        CHECK(s.status == SolveStatus::optimal);
        CHECK(s.value(x) == doctest::Approx(3.0).epsilon(1e-7));
    }
    {
        ConicProgram p;
        const Var t = p.add_variable();
        p.minimize(t);
        p.add_second_order({t, 3.0, 4.0});
        CHECK(solve(p).objective_value == doctest::Approx(5.0).epsilon(1e-7));
    }
    {
        // min x + y on the disc of radius 2 with x - y = 1: optimum -sqrt(7).
        ConicProgram p;
        const Var x = p.add_variable();
        const Var y = p.add_variable();
        p.minimize(AffineExpr(x) + AffineExpr(y));
        p.add_zero({AffineExpr(x) - AffineExpr(y) - 1.0});
        p.add_second_order({2.0, x, y});
        const ConicSolution s = solve(p);
        CHECK(s.status == SolveStatus::optimal);
        CHECK(s.objective_value == doctest::Approx(-std::sqrt(7.0)).epsilon(1e-7));
        CHECK(s.audit.ok());
    }
    {
        ConicProgram p;
        const Var x = p.add_variable();
        p.minimize(x);
        p.add_nonnegative({AffineExpr(x) - 3.0, 1.0 - AffineExpr(x)});
        const ConicSolution s = solve(p);
        CHECK(s.status == SolveStatus::infeasible);
        CHECK_FALSE(s.has_primal());
    }
    {
        ConicProgram p;
        const Var x = p.add_variable();
        p.minimize(x);
        p.add_nonnegative({1.0 - AffineExpr(x)});
        CHECK(solve(p).status == SolveStatus::unbounded);
    }
}

TEST_CASE("semidefinite: minimum eigenvalue") {
    // min <C, X> s.t. tr X = 1, X >= 0 equals lambda_min(C).
    std::mt19937_64 rng(5);
    std::normal_distribution<double> gauss;
    for (int d : {2, 3, 5}) {
        Eigen::MatrixXd c(d, d);
        for (int i = 0; i < d; ++i) {
            for (int j = 0; j < d; ++j) c(i, j) = gauss(rng);
        }
        c = 0.5 * (c + c.transpose()).eval();
        ConicProgram p;
        AffineMatrix x(d, d);
        AffineExpr objective, trace;
        for (int i = 0; i < d; ++i) {
            for (int j = i; j < d; ++j) {
                const Var v = p.add_variable();
                x(i, j) = v;
                x(j, i) = v;
                objective += AffineExpr::term(v, i == j ? c(i, i) : 2.0 * c(i, j));
                if (i == j) trace += AffineExpr(v);
            }
        }
        p.add_psd(x);
        p.add_zero({trace - 1.0});
        p.minimize(objective);
        const ConicSolution s = solve(p);
        REQUIRE(s.status == SolveStatus::optimal);
        const double oracle = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(c).eigenvalues()(0);
        CHECK(s.objective_value == doctest::Approx(oracle).epsilon(1e-7));
        CHECK(s.audit.psd_min_eig > -1e-6);
    }
}

TEST_CASE("nuclear norm epigraph") {
    CHECK(std::abs(nuclear_by_sdp(Eigen::MatrixXd::Zero(3, 2))) < 1e-7);
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(2, 2);
    d(0, 0) = 3.0;
    d(1, 1) = 4.0;
    CHECK(nuclear_by_sdp(d) == doctest::Approx(7.0).epsilon(1e-7));

    std::mt19937_64 rng(17);
    std::normal_distribution<double> gauss;
    Eigen::MatrixXd m(5, 4);
    for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < 4; ++j) m(i, j) = gauss(rng);
    }
    CHECK(std::abs(nuclear_by_sdp(m) - nuclear_by_svd(m)) < 1e-6);

    Eigen::VectorXd u(4), v(3);
    for (int i = 0; i < 4; ++i) u(i) = gauss(rng);
    for (int i = 0; i < 3; ++i) v(i) = gauss(rng);
    u.normalize();
    v.normalize();
    CHECK(std::abs(nuclear_by_sdp(u * v.transpose()) - 1.0) < 1e-6);
}

TEST_CASE("norm helpers") {
    {
        ConicProgram p;
        const Var s = add_soc_norm(p, {3.0, 4.0});
        p.minimize(s);
        CHECK(solve(p).objective_value == doctest::Approx(5.0).epsilon(1e-7));
    }
    {
        ConicProgram p;
        const Var s = add_soc_norm(p, {0.0, 0.0});
        p.minimize(s);
        CHECK(std::abs(solve(p).objective_value) < 1e-7);
    }
    {
        std::mt19937_64 rng(3);
        std::normal_distribution<double> gauss;
        std::vector<AffineExpr> vec;
        double norm2 = 0.0;
        for (int i = 0; i < 10; ++i) {
            const double x = gauss(rng);
            vec.emplace_back(x);
            norm2 += x * x;
        }
        ConicProgram p;
        const Var s = add_soc_norm(p, vec);
        p.minimize(s);
        CHECK(std::abs(solve(p).objective_value - std::sqrt(norm2)) < 1e-8);
    }
    for (double fixed_value : {-2.0, 0.0}) {
        ConicProgram p;
        const Var b = p.add_variable();
        add_abs_bound(p, fixed_value, b);
        p.minimize(b);
        CHECK(std::abs(solve(p).objective_value - std::abs(fixed_value)) < 1e-7);
    }
    {
        ConicProgram p;
        const Var b = p.add_variable();
        for (double x : {0.5, -3.25, 2.0, 1.0}) add_abs_bound(p, x, b);
        p.minimize(b);
        CHECK(solve(p).objective_value == doctest::Approx(3.25).epsilon(1e-7));
    }
}

TEST_CASE("feasibility audit and determinism") {
    std::mt19937_64 rng(23);
    std::normal_distribution<double> gauss;
    Eigen::MatrixXd m(6, 4);
    for (int i = 0; i < 6; ++i) {
        for (int j = 0; j < 4; ++j) m(i, j) = gauss(rng);
    }
    ConicProgram p;
    AffineMatrix x(6, 4);
    std::vector<AffineExpr> residual;
    for (int i = 0; i < 6; ++i) {
        for (int j = 0; j < 4; ++j) {
            const Var v = p.add_variable();
            x(i, j) = v;
            if ((i + j) % 2 == 0) residual.push_back(AffineExpr(v) - m(i, j));
        }
    }
    const AffineExpr t = add_nuclear_norm_epigraph(p, x);
    const Var r = add_soc_norm(p, residual);
    p.minimize(t + 5.0 * AffineExpr(r));
    const ConicSolution a = solve(p);
    const ConicSolution b = solve(p);
    REQUIRE(a.status == SolveStatus::optimal);
    CHECK(a.audit.ok(1e-6));
    const FeasibilityAudit again = audit_feasibility(p, a.primal);
    CHECK(again.psd_min_eig == a.audit.psd_min_eig);
    CHECK(a.primal == b.primal);
    CHECK(a.iterations == b.iterations);
    CHECK(p.dump().rfind("vars ", 0) == 0);
}

TEST_CASE("fifty random matrices against the SVD oracle") {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> size(1, 8);
    std::normal_distribution<double> gauss;
    double worst = 0.0;
    for (int k = 0; k < 50; ++k) {
        const int r = size(rng), c = size(rng);
        Eigen::MatrixXd m(r, c);
        for (int i = 0; i < r; ++i) {
            for (int j = 0; j < c; ++j) m(i, j) = gauss(rng);
        }
        worst = std::max(worst, std::abs(nuclear_by_sdp(m) - nuclear_by_svd(m)));
    }
    CHECK(worst < 1e-5);
}
