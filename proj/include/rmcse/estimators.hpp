#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rmcse/conic.hpp"
#include "rmcse/measurements.hpp"
#include "rmcse/network.hpp"
#include "rmcse/powerflow.hpp"

namespace rmcse {

/// Column layout of one state-matrix row for branch (i, j).
enum StateColumn : int {
    col_e_i = 0,
    col_f_i,
    col_u_i,
    col_p_i,
    col_q_i,
    col_e_j,
    col_f_j,
    col_u_j,
    col_p_j,
    col_q_j,
    col_i_re,
    col_i_im,
    state_columns
};

/// What a state-matrix cell stands for: a bus quantity (voltage parts,
/// magnitude, injection) or a branch current part.
struct StateCell {
    enum class Source { e, f, u, p, q, i_re, i_im };
    Source source = Source::e;
    int index = 0;  // bus id or branch index

    bool operator==(const StateCell&) const = default;
};

/// One row per branch, 12 fixed columns. A bus shared by several branches maps
/// to the same underlying quantity in every row it appears in.
class StateMatrixSchema {
public:
    explicit StateMatrixSchema(const Network& network);

    int rows() const noexcept { return static_cast<int>(branches_.size()); }
    int cols() const noexcept { return state_columns; }
    StateCell cell(int row, int col) const;

    /// Every (row, col) occupied by the quantity a measurement observes.
    /// Reference-phasor tags map to the slack bus voltage cells.
    std::vector<std::pair<int, int>> cells_for(const MeasurementTag& tag) const;

private:
    std::vector<std::pair<int, int>> branches_;
    int slack_ = 0;
};

Eigen::MatrixXd build_state_matrix(const ComplexState& state, const Network& network);

enum class Method { wls, wls_lnr, mcse, rmcse };
std::string method_name(Method method);
Method method_from_name(const std::string& name);

struct EstimationResult {
    Method method = Method::wls;
    ComplexState voltage;
    Eigen::VectorXd vmag;       // magnitude column u for the completion methods
    Eigen::VectorXd angle_deg;
    InjectionVector injections;
    ComplexVector line_currents;
    /// "converged" for the least-squares methods, otherwise the conic status.
    std::string solver_status;
    std::vector<MeasurementTag> removed;  // WLS-LNR only
    /// Set when LNR stopped because the next removal would lose observability.
    bool lnr_stopped_unobservable = false;
    int iterations = 0;
    double objective = 0.0;  // conic objective; weighted residual sum for WLS

    bool has_estimate() const noexcept { return voltage.size() > 0; }
};

/// JSON object with per-bus {vmag, angle_deg}, per-branch currents, status and
/// statistics. `audit` adds |e + jf| per bus and the estimated injections.
std::string serialize_result(const EstimationResult& result, bool audit = false);

// ---------------------------------------------------------------------------
// Weighted least squares

struct WlsOptions {
    double tol = 1e-8;
    int max_iter = 50;
};

/// Newton iteration over the rectangular state, falling back to Gauss-Newton
/// where the full Hessian is indefinite, with backtracking. Throws UnobservableError if the
/// Jacobian at `init` has rank below 2n and DivergenceError if it does not converge.
EstimationResult wls(const MeasurementSet& set, const Network& network, const ComplexState& init,
                     const WlsOptions& options = {});

/// |r_i| / sqrt(Omega_ii) at the estimate; NaN marks critical measurements
/// (Omega_ii / sigma_i^2 below 1e-10) whose residual cannot identify an error.
Eigen::VectorXd normalized_residuals(const EstimationResult& result, const MeasurementSet& set,
                                     const Network& network);

struct LnrOptions {
    double threshold = 3.0;
    WlsOptions wls;
};

/// Repeats WLS, removing the measurement with the largest normalized residual
/// while it exceeds the threshold.
EstimationResult wls_lnr(const MeasurementSet& set, const Network& network, const ComplexState& init,
                         const LnrOptions& options = {});

// ---------------------------------------------------------------------------
// Matrix completion

struct RmcseWeights {
    double w1 = 2.0;
    double w2 = 200.0;
    double w3 = 200.0;
    double w4 = 200.0;
};

/// Program variables plus the state matrix assembled from them.
struct CompletionProgram {
    conic::ConicProgram program;
    std::vector<conic::Var> e, f, u, p, q, i_re, i_im, eps;
    conic::Var gamma, alpha, s_frob;
    conic::AffineExpr nuclear;
    conic::AffineMatrix x;
    int num_buses = 0;
    int slack = 0;
};

/// Builds the completion program. Without `delta` the Frobenius residual is
/// penalized by w1 in the objective; with it the residual is bounded by delta.
CompletionProgram build_completion_program(const MeasurementSet& set, const Network& network,
                                           const LinearModel& linmodel, const RmcseWeights& weights,
                                           std::optional<double> delta = std::nullopt);

/// Reads the estimate out of a solved completion program. Throws
/// ExtractionError when the solution carries no primal point.
EstimationResult extract_result(const conic::ConicSolution& solution, const CompletionProgram& cp,
                                const Network& network);

EstimationResult rmcse(const MeasurementSet& set, const Network& network, const LinearModel& linmodel,
                       const RmcseWeights& weights = {}, const conic::SolverSettings& settings = {});

/// sqrt(sum sigma^2) over the observed state-matrix cells.
double default_delta(const MeasurementSet& set, const Network& network);

/// Infeasible programs come back with solver_status "infeasible" and no estimate.
EstimationResult mcse(const MeasurementSet& set, const Network& network, const LinearModel& linmodel,
                      double delta, const RmcseWeights& weights = {}, const conic::SolverSettings& settings = {});

/// RMCSE objective evaluated at a known state with the smallest slack values
/// that make it feasible (nuclear norm from an SVD).
double rmcse_objective_at(const ComplexState& state, const MeasurementSet& set, const Network& network,
                          const LinearModel& linmodel, const RmcseWeights& weights = {});

}  // namespace rmcse
