#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rmcse/network.hpp"
#include "rmcse/powerflow.hpp"

namespace rmcse {

enum class MeasurementKind { ref_volt_re, ref_volt_im, vmag, pinj, qinj, iline_re, iline_im };

/// Kind plus the bus (voltage/injection kinds) or branch (current kinds) it refers to.
/// Reference-phasor kinds always carry the slack bus.
struct MeasurementTag {
    MeasurementKind kind = MeasurementKind::vmag;
    int index = 0;

    bool is_reference() const noexcept {
        return kind == MeasurementKind::ref_volt_re || kind == MeasurementKind::ref_volt_im;
    }
    bool is_branch_kind() const noexcept {
        return kind == MeasurementKind::iline_re || kind == MeasurementKind::iline_im;
    }
    auto operator<=>(const MeasurementTag&) const = default;
};

/// "RefVoltRe", "Vmag", ... as used in serialized sets and reports.
std::string kind_name(MeasurementKind kind);
MeasurementKind kind_from_name(const std::string& name);
/// e.g. "Pinj(17)".
std::string tag_label(const MeasurementTag& tag);

struct Measurement {
    MeasurementTag tag;
    double value = 0.0;
    double sigma = 0.0;
    double truth = 0.0;   // evaluation only
    bool is_bad = false;  // evaluation only
};

struct MeasurementSet {
    std::vector<Measurement> measurements;
    int num_buses = 0;
    int num_branches = 0;

    std::size_t size() const noexcept { return measurements.size(); }
    bool contains(const MeasurementTag& tag) const { return find(tag) != nullptr; }
    const Measurement* find(const MeasurementTag& tag) const;
    Measurement* find(const MeasurementTag& tag);
};

using Rng = std::mt19937_64;

inline constexpr double kSigmaFloor = 1e-4;

/// Noise-free truth for every measurable quantity: 2 + n + 2n + 2m entries.
MeasurementSet full_measurement_set(const ComplexState& state, const Network& network);

/// value = truth + N(0, sigma), sigma = max(sigma_frac |truth|, kSigmaFloor).
MeasurementSet add_noise(const MeasurementSet& set, double sigma_frac, Rng& rng);

/// round-half-up of fad * |set|.
std::size_t fad_count(double fad, std::size_t total);

/// Keeps both reference measurements plus a uniform random subset of the rest,
/// `count` in total (defaults to fad_count). `force` tags are always retained.
MeasurementSet sample_fad(const MeasurementSet& set, double fad, Rng& rng,
                          std::optional<std::size_t> count = std::nullopt,
                          const std::vector<MeasurementTag>& force = {});

MeasurementSet inject_bad_scaled(const MeasurementSet& set, const MeasurementTag& tag, double factor);

struct BadDataOptions {
    double sigma_frac = 1.0;
    bool include_reference = false;
};

/// Re-draws round(pct * |set|) distinct measurements as truth + N(0, sigma_frac |truth|).
MeasurementSet inject_bad_random(const MeasurementSet& set, double pct, Rng& rng, const BadDataOptions& options = {});

/// Measurement functions h(x) over the rectangular state [e_0..e_{n-1}, f_0..f_{n-1}].
class MeasurementModel {
public:
    explicit MeasurementModel(const Network& network);

    const Network& network() const noexcept { return *network_; }
    const ComplexMatrix& ybus() const noexcept { return ybus_; }
    int num_states() const noexcept { return 2 * network_->num_buses(); }

    Eigen::VectorXd evaluate(const std::vector<MeasurementTag>& tags, const ComplexVector& v) const;
    Eigen::MatrixXd jacobian(const std::vector<MeasurementTag>& tags, const ComplexVector& v) const;

private:
    const Network* network_;
    ComplexMatrix ybus_;
    std::vector<Complex> branch_y_;
};

std::vector<MeasurementTag> tags_of(const MeasurementSet& set);

/// Numerical rank with singular values below rel_tol * sigma_max treated as zero.
int numerical_rank(const Eigen::MatrixXd& matrix, double rel_tol = 1e-8);

struct Observability {
    int rank = 0;
    int unobservable = 0;
    double redundancy = 0.0;
};

Observability observability(const MeasurementSet& set, const Network& network, const ComplexState& state);

/// Measurements whose removal lowers the Jacobian rank.
std::vector<MeasurementTag> critical_measurements(const MeasurementSet& set, const Network& network,
                                                  const ComplexState& state);

/// JSON array of {"kind", "bus"|"branch", "value", "sigma"}; `audit` adds truth and is_bad.
std::string serialize_measurements(const MeasurementSet& set, bool audit = false);
MeasurementSet parse_measurements(const std::string& text, const Network& network);

}  // namespace rmcse
