#pragma once

#include <vector>

#include "rmcse/network.hpp"

namespace rmcse {

/// Complex per-unit bus voltages, indexed by bus id.
struct ComplexState {
    ComplexVector v;

    int size() const noexcept { return static_cast<int>(v.size()); }
    static ComplexState flat(int n, Complex slack = {1.0, 0.0}) { return {ComplexVector::Constant(n, slack)}; }
};

/// Real injection vector laid out as [p_0 .. p_{n-1}, q_0 .. q_{n-1}] in per-unit.
/// Loads are negative injections.
struct InjectionVector {
    Eigen::VectorXd x;

    int num_buses() const noexcept { return static_cast<int>(x.size() / 2); }
    double p(int bus) const { return x(bus); }
    double q(int bus) const { return x(num_buses() + bus); }

    /// Injections implied by the network's load table (slack entries zero).
    static InjectionVector from_loads(const Network& network);
};

struct PowerFlowOptions {
    double tol = 1e-10;
    int max_iter = 30;
    Complex slack_voltage{1.0, 0.0};
};

/// Newton-Raphson in rectangular coordinates from a flat start. Throws
/// DivergenceError when the power mismatch does not drop below `tol`.
ComplexState solve_ac(const Network& network, const InjectionVector& injections, const PowerFlowOptions& options = {});

/// S_i = v_i * conj(sum_j Y_ij v_j).
ComplexVector injected_power(const ComplexState& state, const Network& network);
ComplexVector injected_power(const ComplexVector& v, const ComplexMatrix& ybus);

/// Partial derivatives of the complex injections S with respect to the real
/// (e) and imaginary (f) voltage parts: dS_de(i, k) = dS_i / de_k.
struct InjectionJacobian {
    ComplexMatrix dS_de;
    ComplexMatrix dS_df;
};
InjectionJacobian injection_jacobian(const ComplexVector& v, const ComplexMatrix& ybus);

/// Current flowing from `from_bus` to `to_bus` through the series admittance.
Complex line_current(const ComplexState& state, const Branch& branch);

/// Fixed-point linearization at zero load. Rows are non-slack buses in
/// ascending id order; columns follow the InjectionVector layout.
struct LinearModel {
    ComplexMatrix D;
    Eigen::MatrixXd K;
    ComplexVector w;
    std::vector<int> load_buses;
    Complex slack_voltage{1.0, 0.0};

    /// Predicted non-slack voltages w + D x.
    ComplexVector predict_voltage(const InjectionVector& injections) const;
    /// Predicted non-slack magnitudes |w| + K x.
    Eigen::VectorXd predict_magnitude(const InjectionVector& injections) const;
};

LinearModel build_linear_model(const Network& network, Complex slack_voltage = {1.0, 0.0});

}  // namespace rmcse
