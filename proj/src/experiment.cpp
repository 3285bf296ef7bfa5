#include "rmcse/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <numbers>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "rmcse/error.hpp"

namespace rmcse {

namespace {

constexpr const char* kVersion = "1.0.0";

/// Value as it appears in a report, so that summaries recompute exactly.
double as_printed(double value) { return std::strtod(format_number(value).c_str(), nullptr); }

void parallel_for(int count, int jobs, const std::function<void(int)>& body) {
    if (jobs <= 0) jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    jobs = std::min(jobs, count);
    if (jobs <= 1) {
        for (int i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> workers;
    for (int w = 0; w < jobs; ++w) {
        workers.emplace_back([&] {
            for (int i = next++; i < count; i = next++) {
                try {
                    body(i);
                } catch (...) {
                    const std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    }
    for (std::thread& t : workers) t.join();
    if (failure) std::rethrow_exception(failure);
}

struct Setup {
    Network network;
    ComplexState truth;
    LinearModel linmodel;
    MeasurementSet full;
};

Setup make_setup(const ExperimentConfig& config) {
    Network network = load_case(config.case_source);
    ComplexState truth = solve_ac(network, InjectionVector::from_loads(network));
    LinearModel linmodel = build_linear_model(network);
    MeasurementSet full = full_measurement_set(truth, network);
    return {std::move(network), std::move(truth), std::move(linmodel), std::move(full)};
}

MeasurementSet draw_set(const Setup& setup, const ExperimentConfig& config, double fad, std::uint64_t seed,
                        const std::vector<MeasurementTag>& force = {}) {
    Rng rng(seed);
    const MeasurementSet noisy = add_noise(setup.full, config.sigma_frac, rng);
    return sample_fad(noisy, fad, rng, config.measurement_count, force);
}

std::vector<Method> sorted_methods(std::vector<Method> methods) {
    std::sort(methods.begin(), methods.end());
    methods.erase(std::unique(methods.begin(), methods.end()), methods.end());
    return methods;
}

/// Runs one method on one set and fills the outcome fields of `row`.
void evaluate_method(TrialRow& row, const MeasurementSet& set, const Setup& setup, const ExperimentConfig& config,
                     const Observability& obs) {
    const int states = 2 * setup.network.num_buses();
    const bool least_squares = row.method == Method::wls || row.method == Method::wls_lnr;
    if (least_squares && obs.rank < states) {
        row.failed = true;
        row.status = "unobservable";
        return;
    }
    try {
        const EstimationResult res = run_method(row.method, set, setup.network, setup.linmodel, config);
        if (!res.has_estimate()) {
            row.failed = true;
            row.status = res.solver_status;
            return;
        }
        row.status = res.solver_status;
        row.iterations = res.iterations;
        row.removed = static_cast<int>(res.removed.size());
        for (const MeasurementTag& tag : res.removed) {
            const Measurement* m = set.find(tag);
            if (m != nullptr && m->is_bad) ++row.bad_removed;
        }
        row.error = mape(res, setup.truth, setup.network.slack_bus());
    } catch (const UnobservableError&) {
        row.failed = true;
        row.status = "unobservable";
    } catch (const DivergenceError&) {
        row.failed = true;
        row.status = "divergence";
    } catch (const ExtractionError&) {
        row.failed = true;
        row.status = "numerical_limit";
    }
}

std::vector<SummaryRow> summarize(const std::vector<TrialRow>& rows) {
    std::vector<SummaryRow> out;
    std::size_t i = 0;
    while (i < rows.size()) {
        std::size_t j = i;
        while (j < rows.size() && rows[j].grid_index == rows[i].grid_index && rows[j].method == rows[i].method) ++j;
        SummaryRow s;
        s.grid_index = rows[i].grid_index;
        s.fad = rows[i].fad;
        s.bad_pct = rows[i].bad_pct;
        s.method = rows[i].method;
        double mag_sum = 0.0, ang_sum = 0.0, rank_sum = 0.0, unobs_sum = 0.0;
        for (std::size_t k = i; k < j; ++k) {
            const TrialRow& r = rows[k];
            rank_sum += r.rank;
            unobs_sum += r.unobservable;
            if (r.failed) {
                if (r.status == "unobservable") {
                    ++s.fail_unobservable;
                } else if (r.status == "divergence") {
                    ++s.fail_divergence;
                } else if (r.status == "infeasible") {
                    ++s.fail_infeasible;
                } else {
                    ++s.fail_other;
                }
                continue;
            }
            const double mag = as_printed(r.error.mag_pct);
            const double ang = as_printed(r.error.ang_pct);
            if (s.ok_trials == 0) {
                s.mag_min = s.mag_max = mag;
                s.ang_min = s.ang_max = ang;
            }
            s.mag_min = std::min(s.mag_min, mag);
            s.mag_max = std::max(s.mag_max, mag);
            s.ang_min = std::min(s.ang_min, ang);
            s.ang_max = std::max(s.ang_max, ang);
            mag_sum += mag;
            ang_sum += ang;
            ++s.ok_trials;
        }
        const auto n = static_cast<double>(j - i);
        s.rank_mean = rank_sum / n;
        s.unobservable_mean = unobs_sum / n;
        if (s.ok_trials > 0) {
            s.mag_mean = mag_sum / s.ok_trials;
            s.ang_mean = ang_sum / s.ok_trials;
        }
        out.push_back(s);
        i = j;
    }
    return out;
}

void sort_rows(std::vector<TrialRow>& rows) {
    std::sort(rows.begin(), rows.end(), [](const TrialRow& a, const TrialRow& b) {
        return std::tie(a.grid_index, a.method, a.trial) < std::tie(b.grid_index, b.method, b.trial);
    });
}

nlohmann::ordered_json config_json(const ExperimentConfig& c) {
    nlohmann::ordered_json j;
    j["case"] = c.case_source;
    j["seed"] = c.seed;
    j["trials"] = c.trials;
    j["fad_grid"] = c.fad_grid;
    j["bad_pct_grid"] = c.bad_pct_grid;
    std::vector<std::string> methods;
    for (Method m : c.methods) methods.push_back(method_name(m));
    j["methods"] = methods;
    j["weights"] = {c.weights.w1, c.weights.w2, c.weights.w3, c.weights.w4};
    j["measurement_count"] = c.measurement_count ? nlohmann::ordered_json(*c.measurement_count) : nlohmann::ordered_json();
    j["lnr_threshold"] = c.lnr_threshold;
    j["delta"] = c.delta ? nlohmann::ordered_json(*c.delta) : nlohmann::ordered_json();
    j["sigma_frac"] = c.sigma_frac;
    j["bad_sigma_frac"] = c.bad_sigma_frac;
    j["bad_target"] = tag_label(c.bad_target);
    j["bad_factor"] = c.bad_factor;
    return j;
}

/// Numbers go into JSON as the same 9-significant-digit text used in CSV.
nlohmann::ordered_json num(double value) { return nlohmann::ordered_json::parse(format_number(value)); }

}  // namespace

// ---------------------------------------------------------------------------

Mape mape(const EstimationResult& est, const ComplexState& truth, int slack) {
    const int n = truth.size();
    if (est.voltage.size() != n || est.vmag.size() != n) throw InvalidArgumentError("estimate and truth differ in size");
    Mape out;
    double mag = 0.0, rect = 0.0, ang = 0.0;
    int ang_count = 0;
    for (int i = 0; i < n; ++i) {
        const double t = std::abs(truth.v(i));
        mag += std::abs((est.vmag(i) - t) / t);
        rect += std::abs((std::abs(est.voltage.v(i)) - t) / t);
        if (i == slack) continue;
        const double ta = std::arg(truth.v(i)) * 180.0 / std::numbers::pi;
        if (std::abs(ta) < 1e-9) {
            ++out.ang_excluded;
            continue;
        }
        const double ea = std::arg(est.voltage.v(i)) * 180.0 / std::numbers::pi;
        ang += std::abs((ea - ta) / ta);
        ++ang_count;
    }
    out.mag_pct = 100.0 * mag / n;
    out.mag_rect_pct = 100.0 * rect / n;
    out.ang_pct = ang_count > 0 ? 100.0 * ang / ang_count : 0.0;
    return out;
}

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t trial_seed(std::uint64_t master, std::uint64_t grid, std::uint64_t trial) {
    return mix64(mix64(mix64(master) ^ grid) ^ trial);
}

ComplexState linear_initial_state(const MeasurementSet& set, const Network& network, const LinearModel& linmodel) {
    const int n = network.num_buses();
    const int slack = network.slack_bus();
    Complex ref = linmodel.slack_voltage;
    if (const Measurement* m = set.find({MeasurementKind::ref_volt_re, slack})) ref.real(m->value);
    if (const Measurement* m = set.find({MeasurementKind::ref_volt_im, slack})) ref.imag(m->value);
    InjectionVector x;
    x.x = Eigen::VectorXd::Zero(2 * n);
    for (const Measurement& m : set.measurements) {
        if (m.tag.kind == MeasurementKind::pinj) x.x(m.tag.index) = m.value;
        if (m.tag.kind == MeasurementKind::qinj) x.x(n + m.tag.index) = m.value;
    }
    const ComplexVector v = linmodel.predict_voltage(x);
    const Complex rotate = ref / linmodel.slack_voltage;
    ComplexState init = ComplexState::flat(n, ref);
    for (std::size_t r = 0; r < linmodel.load_buses.size(); ++r) {
        init.v(linmodel.load_buses[r]) = v(static_cast<Eigen::Index>(r)) * rotate;
    }
    return init;
}

void ExperimentConfig::validate() const {
    if (trials < 1) throw InvalidArgumentError("trials must be at least 1");
    if (fad_grid.empty()) throw InvalidArgumentError("FAD grid is empty");
    for (double f : fad_grid) {
        if (!(f > 0.0 && f <= 1.0)) throw InvalidArgumentError("FAD values must lie in (0, 1]");
    }
    for (double p : bad_pct_grid) {
        if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgumentError("bad-data percentages must lie in [0, 1]");
    }
    if (methods.empty()) throw InvalidArgumentError("no methods selected");
    if (!(sigma_frac >= 0.0)) throw InvalidArgumentError("sigma fraction must be non-negative");
    if (!(lnr_threshold > 0.0)) throw InvalidArgumentError("LNR threshold must be positive");
    if (delta && !(*delta >= 0.0)) throw InvalidArgumentError("delta must be non-negative");
    for (double w : {weights.w1, weights.w2, weights.w3, weights.w4}) {
        if (!(w >= 0.0)) throw InvalidArgumentError("weights must be non-negative");
    }
}

EstimationResult run_method(Method method, const MeasurementSet& set, const Network& network,
                            const LinearModel& linmodel, const ExperimentConfig& config) {
    switch (method) {
        case Method::wls: return wls(set, network, linear_initial_state(set, network, linmodel));
        case Method::wls_lnr: {
            LnrOptions options;
            options.threshold = config.lnr_threshold;
            return wls_lnr(set, network, linear_initial_state(set, network, linmodel), options);
        }
        case Method::mcse:
            return mcse(set, network, linmodel, config.delta ? *config.delta : default_delta(set, network),
                        config.weights);
        case Method::rmcse: return rmcse::rmcse(set, network, linmodel, config.weights);
    }
    throw InvalidArgumentError("unknown method");
}

std::string format_number(double value) {
    if (!std::isfinite(value)) return std::isnan(value) ? "nan" : (value > 0 ? "inf" : "-inf");
    if (value == 0.0) return "0";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", value);
    return buf;
}

// ---------------------------------------------------------------------------

SweepReport run_fad_sweep(const ExperimentConfig& config) {
    config.validate();
    const Setup setup = make_setup(config);
    const std::vector<Method> methods = sorted_methods(config.methods);
    const int grids = static_cast<int>(config.fad_grid.size());
    std::vector<std::vector<TrialRow>> per_task(static_cast<std::size_t>(grids * config.trials));

    parallel_for(grids * config.trials, config.jobs, [&](int task) {
        const int g = task / config.trials;
        const int t = task % config.trials;
        const double fad = config.fad_grid[static_cast<std::size_t>(g)];
        const MeasurementSet set = draw_set(setup, config, fad, trial_seed(config.seed, static_cast<std::uint64_t>(g),
                                                                           static_cast<std::uint64_t>(t)));
        const Observability obs = observability(set, setup.network, setup.truth);
        for (Method m : methods) {
            TrialRow row;
            row.grid_index = g;
            row.fad = fad;
            row.method = m;
            row.trial = t;
            row.count = set.size();
            row.rank = obs.rank;
            row.unobservable = obs.unobservable;
            evaluate_method(row, set, setup, config, obs);
            per_task[static_cast<std::size_t>(task)].push_back(row);
        }
    });

    SweepReport report;
    report.kind = "fad";
    report.config = config;
    for (auto& rows : per_task) report.rows.insert(report.rows.end(), rows.begin(), rows.end());
    sort_rows(report.rows);
    report.summary = summarize(report.rows);
    return report;
}

SweepReport run_bad_sweep(const ExperimentConfig& config) {
    config.validate();
    if (config.bad_pct_grid.empty()) throw InvalidArgumentError("bad-data grid is empty");
    const Setup setup = make_setup(config);
    const std::vector<Method> methods = sorted_methods(config.methods);
    const double fad = config.fad_grid.front();
    const int grids = static_cast<int>(config.bad_pct_grid.size());
    std::vector<std::vector<TrialRow>> per_task(static_cast<std::size_t>(grids * config.trials));

    parallel_for(grids * config.trials, config.jobs, [&](int task) {
        const int g = task / config.trials;
        const int t = task % config.trials;
        const double pct = config.bad_pct_grid[static_cast<std::size_t>(g)];
        const MeasurementSet clean = draw_set(setup, config, fad, trial_seed(config.seed, 0, static_cast<std::uint64_t>(t)));
        // Keyed by the percentage in basis points, so a sub-grid reproduces the same draws.
        const auto key = static_cast<std::uint64_t>(std::llround(pct * 10000.0));
        Rng rng(trial_seed(config.seed, 1 + key, static_cast<std::uint64_t>(t)));
        BadDataOptions options;
        options.sigma_frac = config.bad_sigma_frac;
        const MeasurementSet set = inject_bad_random(clean, pct, rng, options);
        const Observability obs = observability(set, setup.network, setup.truth);
        for (Method m : methods) {
            TrialRow row;
            row.grid_index = g;
            row.fad = fad;
            row.bad_pct = pct;
            row.method = m;
            row.trial = t;
            row.count = set.size();
            row.rank = obs.rank;
            row.unobservable = obs.unobservable;
            evaluate_method(row, set, setup, config, obs);
            per_task[static_cast<std::size_t>(task)].push_back(row);
        }
    });

    SweepReport report;
    report.kind = "baddata";
    report.config = config;
    for (auto& rows : per_task) report.rows.insert(report.rows.end(), rows.begin(), rows.end());
    sort_rows(report.rows);
    report.summary = summarize(report.rows);
    return report;
}

const SummaryRow* SweepReport::find(int grid_index, Method method) const {
    for (const SummaryRow& s : summary) {
        if (s.grid_index == grid_index && s.method == method) return &s;
    }
    return nullptr;
}

std::string SweepReport::to_csv() const {
    std::ostringstream out;
    out << "fad,bad_pct,method,trial,status,count,rank,unobservable,removed,bad_removed,iterations,"
           "mag_mape,ang_mape,ang_excluded";
    if (audit) out << ",mag_rect_mape";
    out << ",ok_trials,mag_mean,mag_min,mag_max,ang_mean,ang_min,ang_max,rank_mean,unobservable_mean,"
           "fail_unobservable,fail_divergence,fail_infeasible,fail_other\n";
    const std::string summary_blank = ",,,,,,,,,,,,,";
    for (const TrialRow& r : rows) {
        out << format_number(r.fad) << ',' << format_number(r.bad_pct) << ',' << method_name(r.method) << ','
            << r.trial << ',' << r.status << ',' << r.count << ',' << r.rank << ',' << r.unobservable << ',';
        if (r.failed) {
            out << ",,,,,";
            if (audit) out << ',';
        } else {
            out << r.removed << ',' << r.bad_removed << ',' << r.iterations << ',' << format_number(r.error.mag_pct)
                << ',' << format_number(r.error.ang_pct) << ',' << r.error.ang_excluded;
            if (audit) out << ',' << format_number(r.error.mag_rect_pct);
        }
        out << summary_blank << '\n';
    }
    for (const SummaryRow& s : summary) {
        out << format_number(s.fad) << ',' << format_number(s.bad_pct) << ',' << method_name(s.method)
            << ",summary,,,,,,,,,,";
        if (audit) out << ',';
        out << ',' << s.ok_trials << ',';
        if (s.ok_trials > 0) {
            out << format_number(s.mag_mean) << ',' << format_number(s.mag_min) << ',' << format_number(s.mag_max) << ','
                << format_number(s.ang_mean) << ',' << format_number(s.ang_min) << ',' << format_number(s.ang_max);
        } else {
            out << ",,,,,";
        }
        out << ',' << format_number(s.rank_mean) << ',' << format_number(s.unobservable_mean) << ','
            << s.fail_unobservable << ',' << s.fail_divergence << ',' << s.fail_infeasible << ',' << s.fail_other
            << '\n';
    }
    return out.str();
}

std::string SweepReport::to_json() const {
    nlohmann::ordered_json doc;
    doc["tool"] = "rmcse";
    doc["version"] = kVersion;
    doc["kind"] = kind;
    doc["config"] = config_json(config);
    nlohmann::ordered_json trials = nlohmann::ordered_json::array();
    for (const TrialRow& r : rows) {
        nlohmann::ordered_json j;
        j["fad"] = num(r.fad);
        j["bad_pct"] = num(r.bad_pct);
        j["method"] = method_name(r.method);
        j["trial"] = r.trial;
        j["status"] = r.status;
        j["count"] = r.count;
        j["rank"] = r.rank;
        j["unobservable"] = r.unobservable;
        if (!r.failed) {
            j["removed"] = r.removed;
            j["bad_removed"] = r.bad_removed;
            j["iterations"] = r.iterations;
            j["mag_mape"] = num(r.error.mag_pct);
            j["ang_mape"] = num(r.error.ang_pct);
            j["ang_excluded"] = r.error.ang_excluded;
            if (audit) j["mag_rect_mape"] = num(r.error.mag_rect_pct);
        }
        trials.push_back(j);
    }
    doc["trials"] = trials;
    nlohmann::ordered_json sums = nlohmann::ordered_json::array();
    for (const SummaryRow& s : summary) {
        nlohmann::ordered_json j;
        j["fad"] = num(s.fad);
        j["bad_pct"] = num(s.bad_pct);
        j["method"] = method_name(s.method);
        j["ok_trials"] = s.ok_trials;
        if (s.ok_trials > 0) {
            j["mag_mean"] = num(s.mag_mean);
            j["mag_min"] = num(s.mag_min);
            j["mag_max"] = num(s.mag_max);
            j["ang_mean"] = num(s.ang_mean);
            j["ang_min"] = num(s.ang_min);
            j["ang_max"] = num(s.ang_max);
        }
        j["rank_mean"] = num(s.rank_mean);
        j["unobservable_mean"] = num(s.unobservable_mean);
        j["failures"] = {{"unobservable", s.fail_unobservable},
                         {"divergence", s.fail_divergence},
                         {"infeasible", s.fail_infeasible},
                         {"other", s.fail_other}};
        sums.push_back(j);
    }
    doc["summary"] = sums;
    return doc.dump(2) + "\n";
}

// ---------------------------------------------------------------------------

SingleBadReport run_single_bad(const ExperimentConfig& config) {
    config.validate();
    const Setup setup = make_setup(config);
    const std::vector<Method> methods = sorted_methods(config.methods);
    SingleBadReport report;
    report.config = config;
    report.fad = config.fad_grid.front();
    // The clean run reads the target at its true value so the delta isolates the scaling.
    MeasurementSet clean = draw_set(setup, config, report.fad, trial_seed(config.seed, 0, 0), {config.bad_target});
    clean.find(config.bad_target)->value = clean.find(config.bad_target)->truth;
    const MeasurementSet bad = inject_bad_scaled(clean, config.bad_target, config.bad_factor);
    report.count = clean.size();
    const int n = setup.network.num_buses();
    const int slack = setup.network.slack_bus();

    std::vector<std::pair<EstimationResult, EstimationResult>> results(methods.size());
    std::vector<std::pair<std::string, std::string>> errors(methods.size());
    parallel_for(static_cast<int>(2 * methods.size()), config.jobs, [&](int task) {
        const auto k = static_cast<std::size_t>(task / 2);
        const bool with_bad = task % 2 == 1;
        EstimationResult& slot = with_bad ? results[k].second : results[k].first;
        std::string& err = with_bad ? errors[k].second : errors[k].first;
        try {
            slot = run_method(methods[k], with_bad ? bad : clean, setup.network, setup.linmodel, config);
            err = slot.solver_status;
        } catch (const UnobservableError&) {
            err = "unobservable";
        } catch (const DivergenceError&) {
            err = "divergence";
        } catch (const ExtractionError&) {
            err = "numerical_limit";
        }
    });

    for (std::size_t k = 0; k < methods.size(); ++k) {
        SingleBadMethod sm;
        sm.method = methods[k];
        sm.status_clean = errors[k].first;
        sm.status_bad = errors[k].second;
        const EstimationResult& a = results[k].first;
        const EstimationResult& b = results[k].second;
        if (a.has_estimate()) sm.clean = mape(a, setup.truth, slack);
        if (b.has_estimate()) sm.bad = mape(b, setup.truth, slack);
        sm.removed_bad = b.removed;
        report.methods.push_back(sm);
        if (!a.has_estimate() || !b.has_estimate()) continue;
        for (int i = 0; i < n; ++i) {
            SingleBadBus bus;
            bus.method = methods[k];
            bus.bus = i;
            bus.vmag_true = std::abs(setup.truth.v(i));
            bus.ang_true = std::arg(setup.truth.v(i)) * 180.0 / std::numbers::pi;
            bus.vmag_clean = a.vmag(i);
            bus.vmag_bad = b.vmag(i);
            bus.ang_clean = a.angle_deg(i);
            bus.ang_bad = b.angle_deg(i);
            report.buses.push_back(bus);
        }
    }
    return report;
}

const SingleBadMethod* SingleBadReport::find(Method method) const {
    for (const SingleBadMethod& m : methods) {
        if (m.method == method) return &m;
    }
    return nullptr;
}

std::string SingleBadReport::to_csv() const {
    std::ostringstream out;
    out << "method,bus,vmag_true,ang_true,vmag_clean,vmag_bad,vmag_delta,ang_clean,ang_bad,ang_delta\n";
    for (const SingleBadBus& b : buses) {
        out << method_name(b.method) << ',' << b.bus << ',' << format_number(b.vmag_true) << ','
            << format_number(b.ang_true) << ',' << format_number(b.vmag_clean) << ',' << format_number(b.vmag_bad)
            << ',' << format_number(b.vmag_bad - b.vmag_clean) << ',' << format_number(b.ang_clean) << ','
            << format_number(b.ang_bad) << ',' << format_number(b.ang_bad - b.ang_clean) << '\n';
    }
    // MAPE rows: vmag_* columns carry magnitude MAPE, ang_* columns angle MAPE.
    for (const SingleBadMethod& m : methods) {
        out << method_name(m.method) << ",mape,,," << format_number(m.clean.mag_pct) << ','
            << format_number(m.bad.mag_pct) << ',' << format_number(m.bad.mag_pct - m.clean.mag_pct) << ','
            << format_number(m.clean.ang_pct) << ',' << format_number(m.bad.ang_pct) << ','
            << format_number(m.bad.ang_pct - m.clean.ang_pct) << '\n';
    }
    return out.str();
}

std::string SingleBadReport::to_json() const {
    nlohmann::ordered_json doc;
    doc["tool"] = "rmcse";
    doc["version"] = kVersion;
    doc["kind"] = "single-bad";
    doc["config"] = config_json(config);
    doc["fad"] = num(fad);
    doc["count"] = count;
    nlohmann::ordered_json ms = nlohmann::ordered_json::array();
    for (const SingleBadMethod& m : methods) {
        nlohmann::ordered_json j;
        j["method"] = method_name(m.method);
        j["status_clean"] = m.status_clean;
        j["status_bad"] = m.status_bad;
        j["mag_mape_clean"] = num(m.clean.mag_pct);
        j["mag_mape_bad"] = num(m.bad.mag_pct);
        j["ang_mape_clean"] = num(m.clean.ang_pct);
        j["ang_mape_bad"] = num(m.bad.ang_pct);
        std::vector<std::string> removed;
        for (const MeasurementTag& t : m.removed_bad) removed.push_back(tag_label(t));
        j["removed_bad"] = removed;
        ms.push_back(j);
    }
    doc["methods"] = ms;
    nlohmann::ordered_json bs = nlohmann::ordered_json::array();
    for (const SingleBadBus& b : buses) {
        bs.push_back({{"method", method_name(b.method)},
                      {"bus", b.bus},
                      {"vmag_true", num(b.vmag_true)},
                      {"ang_true", num(b.ang_true)},
                      {"vmag_clean", num(b.vmag_clean)},
                      {"vmag_bad", num(b.vmag_bad)},
                      {"ang_clean", num(b.ang_clean)},
                      {"ang_bad", num(b.ang_bad)}});
    }
    doc["buses"] = bs;
    return doc.dump(2) + "\n";
}

}  // namespace rmcse
