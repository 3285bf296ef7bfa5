#pragma once

#include <complex>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace rmcse {

using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;
using ComplexVector = Eigen::VectorXcd;

enum class BusKind { slack, load };

/// Loads are per-unit on the network MVA base.
struct Bus {
    int id = 0;
    BusKind kind = BusKind::load;
    double p_load = 0.0;
    double q_load = 0.0;

    bool operator==(const Bus&) const = default;
};

/// Series impedance in per-unit.
struct Branch {
    int from_bus = 0;
    int to_bus = 0;
    double r = 0.0;
    double x = 0.0;

    bool operator==(const Branch&) const = default;
};

/// Radial distribution network. Immutable after construction; the constructor
/// enforces contiguous bus ids, a single slack bus and a spanning-tree topology.
class Network {
public:
    Network(std::vector<Bus> buses, std::vector<Branch> branches, double base_mva, double base_kv);

    const std::vector<Bus>& buses() const noexcept { return buses_; }
    const std::vector<Branch>& branches() const noexcept { return branches_; }
    int num_buses() const noexcept { return static_cast<int>(buses_.size()); }
    int num_branches() const noexcept { return static_cast<int>(branches_.size()); }
    int slack_bus() const noexcept { return slack_; }
    double base_mva() const noexcept { return base_mva_; }
    double base_kv() const noexcept { return base_kv_; }
    double base_impedance() const noexcept { return base_kv_ * base_kv_ / base_mva_; }

    /// Branch indices incident to each bus.
    const std::vector<std::vector<int>>& incidence() const noexcept { return incidence_; }

    /// Copy with every load multiplied by `factor`.
    Network with_load_scale(double factor) const;

    bool operator==(const Network& other) const;

private:
    std::vector<Bus> buses_;
    std::vector<Branch> branches_;
    double base_mva_;
    double base_kv_;
    int slack_ = -1;
    std::vector<std::vector<int>> incidence_;
};

/// 1 / (r + jx). Throws InvalidBranchError for a zero impedance.
Complex branch_admittance(const Branch& branch);

/// Nodal admittance matrix of a shunt-free network.
ComplexMatrix build_ybus(const Network& network);

/// Parses either the native JSON schema or a MATPOWER-style case body
/// (detected from the first non-blank character).
Network parse_case(std::string_view text);
Network parse_case_json(std::string_view text);
Network parse_case_matpower(std::string_view text);

/// Loads "builtin:ieee33" or a case file from disk.
Network load_case(const std::string& source);

/// Native JSON schema; parse_case(serialize_case(net)) == net.
std::string serialize_case(const Network& network);

/// Baran-Wu 33-bus feeder, 12.66 kV, 10 MVA base, slack at bus 0.
Network builtin_ieee33();

}  // namespace rmcse
