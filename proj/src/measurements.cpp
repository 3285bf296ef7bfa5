#include "rmcse/measurements.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "rmcse/error.hpp"

namespace rmcse {

namespace {

constexpr MeasurementKind kAllKinds[] = {MeasurementKind::ref_volt_re, MeasurementKind::ref_volt_im,
                                         MeasurementKind::vmag,        MeasurementKind::pinj,
                                         MeasurementKind::qinj,        MeasurementKind::iline_re,
                                         MeasurementKind::iline_im};

}  // namespace

std::string kind_name(MeasurementKind kind) {
    switch (kind) {
        case MeasurementKind::ref_volt_re: return "RefVoltRe";
        case MeasurementKind::ref_volt_im: return "RefVoltIm";
        case MeasurementKind::vmag: return "Vmag";
        case MeasurementKind::pinj: return "Pinj";
        case MeasurementKind::qinj: return "Qinj";
        case MeasurementKind::iline_re: return "IlineRe";
        case MeasurementKind::iline_im: return "IlineIm";
    }
    return "?";
}

MeasurementKind kind_from_name(const std::string& name) {
    for (MeasurementKind kind : kAllKinds) {
        if (kind_name(kind) == name) return kind;
    }
    throw ParseError("unknown measurement kind '" + name + "'");
}

std::string tag_label(const MeasurementTag& tag) {
    return kind_name(tag.kind) + "(" + std::to_string(tag.index) + ")";
}

const Measurement* MeasurementSet::find(const MeasurementTag& tag) const {
    for (const Measurement& m : measurements) {
        if (m.tag == tag) return &m;
    }
    return nullptr;
}

Measurement* MeasurementSet::find(const MeasurementTag& tag) {
    for (Measurement& m : measurements) {
        if (m.tag == tag) return &m;
    }
    return nullptr;
}

std::vector<MeasurementTag> tags_of(const MeasurementSet& set) {
    std::vector<MeasurementTag> tags;
    tags.reserve(set.size());
    for (const Measurement& m : set.measurements) tags.push_back(m.tag);
    return tags;
}

// ---------------------------------------------------------------------------

MeasurementModel::MeasurementModel(const Network& network) : network_(&network), ybus_(build_ybus(network)) {
    for (const Branch& br : network.branches()) branch_y_.push_back(branch_admittance(br));
}

Eigen::VectorXd MeasurementModel::evaluate(const std::vector<MeasurementTag>& tags, const ComplexVector& v) const {
    const ComplexVector s = injected_power(v, ybus_);
    Eigen::VectorXd h(static_cast<Eigen::Index>(tags.size()));
    for (std::size_t r = 0; r < tags.size(); ++r) {
        const MeasurementTag& t = tags[r];
        double value = 0.0;
        switch (t.kind) {
            case MeasurementKind::ref_volt_re: value = v(t.index).real(); break;
            case MeasurementKind::ref_volt_im: value = v(t.index).imag(); break;
            case MeasurementKind::vmag: value = std::abs(v(t.index)); break;
            case MeasurementKind::pinj: value = s(t.index).real(); break;
            case MeasurementKind::qinj: value = s(t.index).imag(); break;
            case MeasurementKind::iline_re:
            case MeasurementKind::iline_im: {
                const Branch& br = network_->branches()[static_cast<std::size_t>(t.index)];
                const Complex i = (v(br.from_bus) - v(br.to_bus)) * branch_y_[static_cast<std::size_t>(t.index)];
                value = t.kind == MeasurementKind::iline_re ? i.real() : i.imag();
                break;
            }
        }
        h(static_cast<Eigen::Index>(r)) = value;
    }
    return h;
}

Eigen::MatrixXd MeasurementModel::jacobian(const std::vector<MeasurementTag>& tags, const ComplexVector& v) const {
    const int n = network_->num_buses();
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(tags.size()), 2 * n);
    bool need_injections = false;
    for (const MeasurementTag& t : tags) {
        need_injections |= t.kind == MeasurementKind::pinj || t.kind == MeasurementKind::qinj;
    }
    InjectionJacobian inj;
    if (need_injections) inj = injection_jacobian(v, ybus_);

    for (std::size_t r = 0; r < tags.size(); ++r) {
        const auto row = static_cast<Eigen::Index>(r);
        const MeasurementTag& t = tags[r];
        switch (t.kind) {
            case MeasurementKind::ref_volt_re: H(row, t.index) = 1.0; break;
            case MeasurementKind::ref_volt_im: H(row, n + t.index) = 1.0; break;
            case MeasurementKind::vmag: {
                const double mag = std::abs(v(t.index));
                if (mag > 0.0) {
                    H(row, t.index) = v(t.index).real() / mag;
                    H(row, n + t.index) = v(t.index).imag() / mag;
                }
                break;
            }
            case MeasurementKind::pinj:
            case MeasurementKind::qinj: {
                const bool active = t.kind == MeasurementKind::pinj;
                for (int k = 0; k < n; ++k) {
                    const Complex de = inj.dS_de(t.index, k);
                    const Complex df = inj.dS_df(t.index, k);
                    H(row, k) = active ? de.real() : de.imag();
                    H(row, n + k) = active ? df.real() : df.imag();
                }
                break;
            }
            case MeasurementKind::iline_re:
            case MeasurementKind::iline_im: {
                const Branch& br = network_->branches()[static_cast<std::size_t>(t.index)];
                const Complex y = branch_y_[static_cast<std::size_t>(t.index)];
                const Complex jy = Complex(0.0, 1.0) * y;
                const bool re = t.kind == MeasurementKind::iline_re;
                H(row, br.from_bus) += re ? y.real() : y.imag();
                H(row, n + br.from_bus) += re ? jy.real() : jy.imag();
                H(row, br.to_bus) -= re ? y.real() : y.imag();
                H(row, n + br.to_bus) -= re ? jy.real() : jy.imag();
                break;
            }
        }
    }
    return H;
}

// ---------------------------------------------------------------------------

MeasurementSet full_measurement_set(const ComplexState& state, const Network& network) {
    const int n = network.num_buses();
    const int m = network.num_branches();
    std::vector<MeasurementTag> tags;
    tags.push_back({MeasurementKind::ref_volt_re, network.slack_bus()});
    tags.push_back({MeasurementKind::ref_volt_im, network.slack_bus()});
    for (int i = 0; i < n; ++i) tags.push_back({MeasurementKind::vmag, i});
    for (int i = 0; i < n; ++i) tags.push_back({MeasurementKind::pinj, i});
    for (int i = 0; i < n; ++i) tags.push_back({MeasurementKind::qinj, i});
    for (int k = 0; k < m; ++k) {
        tags.push_back({MeasurementKind::iline_re, k});
        tags.push_back({MeasurementKind::iline_im, k});
    }

    const MeasurementModel model(network);
    const Eigen::VectorXd truth = model.evaluate(tags, state.v);
    MeasurementSet set;
    set.num_buses = n;
    set.num_branches = m;
    for (std::size_t r = 0; r < tags.size(); ++r) {
        const double t = truth(static_cast<Eigen::Index>(r));
        set.measurements.push_back(Measurement{tags[r], t, 0.0, t, false});
    }
    return set;
}

MeasurementSet add_noise(const MeasurementSet& set, double sigma_frac, Rng& rng) {
    if (sigma_frac < 0.0) throw InvalidArgumentError("sigma_frac must be non-negative");
    MeasurementSet out = set;
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (Measurement& m : out.measurements) {
        m.sigma = std::max(sigma_frac * std::abs(m.truth), kSigmaFloor);
        m.value = sigma_frac > 0.0 ? m.truth + m.sigma * gauss(rng) : m.truth;
    }
    return out;
}

std::size_t fad_count(double fad, std::size_t total) {
    // The epsilon keeps products such as 0.7 * 165 = 115.5 on the half-up side.
    return static_cast<std::size_t>(std::floor(fad * static_cast<double>(total) + 0.5 + 1e-9));
}

MeasurementSet sample_fad(const MeasurementSet& set, double fad, Rng& rng, std::optional<std::size_t> count,
                          const std::vector<MeasurementTag>& force) {
    if (!(fad > 0.0 && fad <= 1.0) && !count) throw InvalidArgumentError("fad must lie in (0, 1]");
    const std::size_t target = count ? *count : fad_count(fad, set.size());
    if (target < 2) throw InvalidArgumentError("fad too small: fewer than the two reference measurements retained");
    if (target > set.size()) throw InvalidArgumentError("requested measurement count exceeds the available set");

    std::vector<std::size_t> keep;
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < set.size(); ++i) {
        const MeasurementTag& tag = set.measurements[i].tag;
        const bool forced = tag.is_reference() || std::find(force.begin(), force.end(), tag) != force.end();
        (forced ? keep : pool).push_back(i);
    }
    if (keep.size() > target) throw InvalidArgumentError("forced measurements exceed the requested count");

    // Partial Fisher-Yates over the eligible pool.
    const std::size_t draw = target - keep.size();
    for (std::size_t i = 0; i < draw; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
        std::swap(pool[i], pool[pick(rng)]);
        keep.push_back(pool[i]);
    }
    std::sort(keep.begin(), keep.end());

    MeasurementSet out;
    out.num_buses = set.num_buses;
    out.num_branches = set.num_branches;
    for (std::size_t i : keep) out.measurements.push_back(set.measurements[i]);
    return out;
}

MeasurementSet inject_bad_scaled(const MeasurementSet& set, const MeasurementTag& tag, double factor) {
    MeasurementSet out = set;
    Measurement* m = out.find(tag);
    if (!m) throw NotFoundError("measurement " + tag_label(tag) + " not in set");
    m->value = factor * m->truth;
    m->is_bad = true;
    return out;
}

MeasurementSet inject_bad_random(const MeasurementSet& set, double pct, Rng& rng, const BadDataOptions& options) {
    if (pct < 0.0 || pct > 1.0) throw InvalidArgumentError("bad-data percentage must lie in [0, 1]");
    MeasurementSet out = set;
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (options.include_reference || !out.measurements[i].tag.is_reference()) eligible.push_back(i);
    }
    const std::size_t k = std::min(fad_count(pct, out.size()), eligible.size());
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, eligible.size() - 1);
        std::swap(eligible[i], eligible[pick(rng)]);
        Measurement& m = out.measurements[eligible[i]];
        const double spread = std::max(options.sigma_frac * std::abs(m.truth), kSigmaFloor);
        m.value = m.truth + spread * gauss(rng);
        m.is_bad = true;
    }
    return out;
}

// ---------------------------------------------------------------------------

int numerical_rank(const Eigen::MatrixXd& matrix, double rel_tol) {
    if (matrix.size() == 0) return 0;
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(matrix);
    const Eigen::VectorXd& sv = svd.singularValues();
    if (sv.size() == 0 || sv(0) == 0.0) return 0;
    int rank = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i) {
        if (sv(i) > rel_tol * sv(0)) ++rank;
    }
    return rank;
}

Observability observability(const MeasurementSet& set, const Network& network, const ComplexState& state) {
    const MeasurementModel model(network);
    const Eigen::MatrixXd H = model.jacobian(tags_of(set), state.v);
    Observability obs;
    obs.rank = numerical_rank(H);
    obs.unobservable = model.num_states() - obs.rank;
    obs.redundancy = static_cast<double>(set.size()) / model.num_states();
    return obs;
}

std::vector<MeasurementTag> critical_measurements(const MeasurementSet& set, const Network& network,
                                                  const ComplexState& state) {
    const MeasurementModel model(network);
    const std::vector<MeasurementTag> tags = tags_of(set);
    const Eigen::MatrixXd H = model.jacobian(tags, state.v);
    const int full_rank = numerical_rank(H);
    std::vector<MeasurementTag> critical;
    const auto rows = H.rows();
    for (Eigen::Index r = 0; r < rows; ++r) {
        Eigen::MatrixXd reduced(rows - 1, H.cols());
        reduced.topRows(r) = H.topRows(r);
        reduced.bottomRows(rows - r - 1) = H.bottomRows(rows - r - 1);
        if (numerical_rank(reduced) < full_rank) critical.push_back(tags[static_cast<std::size_t>(r)]);
    }
    return critical;
}

// ---------------------------------------------------------------------------

std::string serialize_measurements(const MeasurementSet& set, bool audit) {
    nlohmann::ordered_json doc = nlohmann::ordered_json::array();
    for (const Measurement& m : set.measurements) {
        nlohmann::ordered_json item;
        item["kind"] = kind_name(m.tag.kind);
        item[m.tag.is_branch_kind() ? "branch" : "bus"] = m.tag.index;
        item["value"] = m.value;
        item["sigma"] = m.sigma;
        if (audit) {
            item["truth"] = m.truth;
            item["is_bad"] = m.is_bad;
        }
        doc.push_back(item);
    }
    return doc.dump(2) + "\n";
}

MeasurementSet parse_measurements(const std::string& text, const Network& network) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(e.what());
    }
    if (!doc.is_array()) throw ParseError("measurement document must be a JSON array");
    MeasurementSet set;
    set.num_buses = network.num_buses();
    set.num_branches = network.num_branches();
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const auto& item = doc[i];
        const std::string where = "measurements[" + std::to_string(i) + "]";
        if (!item.is_object() || !item.contains("kind") || !item["kind"].is_string()) {
            throw ParseError(where + ".kind: expected string");
        }
        Measurement m;
        m.tag.kind = kind_from_name(item["kind"].get<std::string>());
        const char* key = m.tag.is_branch_kind() ? "branch" : "bus";
        if (!item.contains(key) || !item[key].is_number_integer()) {
            throw ParseError(where + "." + key + ": expected integer");
        }
        m.tag.index = item[key].get<int>();
        const int limit = m.tag.is_branch_kind() ? network.num_branches() : network.num_buses();
        if (m.tag.index < 0 || m.tag.index >= limit) throw ValidationError(where + ": index out of range");
        if (m.tag.is_reference() && m.tag.index != network.slack_bus()) {
            throw ValidationError(where + ": reference measurements exist only for the slack bus");
        }
        if (!item.contains("value") || !item["value"].is_number()) throw ParseError(where + ".value: expected number");
        if (!item.contains("sigma") || !item["sigma"].is_number()) throw ParseError(where + ".sigma: expected number");
        m.value = item["value"].get<double>();
        m.sigma = item["sigma"].get<double>();
        if (!(m.sigma > 0.0)) throw ValidationError(where + ".sigma must be positive");
        m.truth = item.value("truth", m.value);
        m.is_bad = item.value("is_bad", false);
        if (set.contains(m.tag)) throw ValidationError(where + ": duplicate measurement " + tag_label(m.tag));
        set.measurements.push_back(m);
    }
    return set;
}

}  // namespace rmcse
