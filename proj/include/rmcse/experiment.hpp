#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rmcse/estimators.hpp"

namespace rmcse {

struct Mape {
    double mag_pct = 0.0;
    double ang_pct = 0.0;
    /// Magnitude MAPE computed from |e + jf| instead of the reported magnitude.
    double mag_rect_pct = 0.0;
    /// Non-slack buses left out of the angle average because |true angle| < 1e-9 deg.
    int ang_excluded = 0;
};

/// Magnitude MAPE over all buses; angle MAPE (degrees) over non-slack buses.
Mape mape(const EstimationResult& est, const ComplexState& truth, int slack);

/// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);
/// mix64(mix64(mix64(master) ^ grid) ^ trial)
std::uint64_t trial_seed(std::uint64_t master, std::uint64_t grid, std::uint64_t trial);

/// Initial WLS state from the linear model, driven by the measured injections
/// (unmeasured ones taken as zero) and anchored at the measured reference phasor.
ComplexState linear_initial_state(const MeasurementSet& set, const Network& network, const LinearModel& linmodel);

struct ExperimentConfig {
    std::string case_source = "builtin:ieee33";
    std::vector<double> fad_grid{0.3, 0.5, 0.7, 0.9};
    std::vector<double> bad_pct_grid{0.0, 0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.10};
    int trials = 30;
    std::uint64_t seed = 42;
    std::vector<Method> methods{Method::wls, Method::wls_lnr, Method::mcse, Method::rmcse};
    RmcseWeights weights;
    std::optional<std::size_t> measurement_count;
    double lnr_threshold = 3.0;
    std::optional<double> delta;
    double sigma_frac = 0.01;
    double bad_sigma_frac = 1.0;
    /// Single-bad-datum study: measurement and scale factor.
    MeasurementTag bad_target{MeasurementKind::pinj, 17};
    double bad_factor = 2.0;
    /// Worker threads; 0 picks the hardware concurrency.
    int jobs = 0;

    /// Throws InvalidArgumentError on trials < 1 or grid values outside their ranges.
    void validate() const;
};

/// One (grid point, method, trial) outcome. A failed estimator leaves the
/// metric fields empty and names the error in `status`.
struct TrialRow {
    int grid_index = 0;
    double fad = 0.0;
    double bad_pct = 0.0;
    Method method = Method::wls;
    int trial = 0;
    std::string status;
    bool failed = false;
    std::size_t count = 0;
    int rank = 0;
    int unobservable = 0;
    int removed = 0;
    int bad_removed = 0;
    int iterations = 0;
    Mape error;
};

struct SummaryRow {
    int grid_index = 0;
    double fad = 0.0;
    double bad_pct = 0.0;
    Method method = Method::wls;
    int ok_trials = 0;
    double mag_mean = 0.0, mag_min = 0.0, mag_max = 0.0;
    double ang_mean = 0.0, ang_min = 0.0, ang_max = 0.0;
    double rank_mean = 0.0;
    double unobservable_mean = 0.0;
    int fail_unobservable = 0;
    int fail_divergence = 0;
    int fail_infeasible = 0;
    int fail_other = 0;
};

struct SweepReport {
    std::string kind;  // "fad" or "baddata"
    ExperimentConfig config;
    std::vector<TrialRow> rows;         // sorted by (grid, method, trial)
    std::vector<SummaryRow> summary;    // one per (grid, method)
    bool audit = false;                 // adds the mag_rect_mape column

    const SummaryRow* find(int grid_index, Method method) const;
    std::string to_csv() const;
    std::string to_json() const;
};

/// Per-trial seed: trial_seed(seed, grid_index, trial).
SweepReport run_fad_sweep(const ExperimentConfig& config);

/// Uses config.fad_grid[0] as the sampling level. Trial t draws its measurement
/// set from trial_seed(seed, 0, t) and the bad data at percentage p from
/// trial_seed(seed, 1 + round(10000 p), t).
SweepReport run_bad_sweep(const ExperimentConfig& config);

struct SingleBadBus {
    Method method = Method::wls;
    int bus = 0;
    double vmag_true = 0.0, ang_true = 0.0;
    double vmag_clean = 0.0, vmag_bad = 0.0;
    double ang_clean = 0.0, ang_bad = 0.0;
};

struct SingleBadMethod {
    Method method = Method::wls;
    std::string status_clean, status_bad;
    Mape clean, bad;
    std::vector<MeasurementTag> removed_bad;
};

struct SingleBadReport {
    ExperimentConfig config;
    double fad = 0.7;
    std::size_t count = 0;
    std::vector<SingleBadMethod> methods;
    std::vector<SingleBadBus> buses;

    const SingleBadMethod* find(Method method) const;
    std::string to_csv() const;
    std::string to_json() const;
};

/// One draw at config.fad_grid[0] with the target measurement forced into the
/// set (seed trial_seed(seed, 0, 0)); every method runs on the clean set and on
/// the set with the target scaled by config.bad_factor. In the clean set the
/// target reads its noise-free value.
SingleBadReport run_single_bad(const ExperimentConfig& config);

/// Runs one estimator, dispatching on method. `delta` defaults to default_delta.
EstimationResult run_method(Method method, const MeasurementSet& set, const Network& network,
                            const LinearModel& linmodel, const ExperimentConfig& config);

/// Formats with 9 significant digits.
std::string format_number(double value);

/// Command-line entry point; returns the process exit code
/// (0 success, 1 runtime failure, 2 usage error).
int cli_dispatch(int argc, const char* const* argv);

}  // namespace rmcse
