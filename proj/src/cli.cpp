#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "rmcse/error.hpp"
#include "rmcse/experiment.hpp"

namespace rmcse {

namespace {

struct Shared {
    std::string case_source = "builtin:ieee33";
    std::uint64_t seed = 42;
    std::string out = "-";
    std::string format = "csv";
    bool audit = false;
    int jobs = 0;
};

struct EstimateFlags {
    std::string method = "rmcse";
    std::vector<double> fad{0.7};
    std::optional<std::size_t> count;
    double sigma_frac = 0.01;
    std::vector<double> weights{2.0, 200.0, 200.0, 200.0};
    std::optional<double> delta;
    double lnr_threshold = 3.0;
    std::string measurements;
    std::string dump_measurements;
};

void add_shared(CLI::App* app, Shared& s) {
    app->add_option("--case", s.case_source, "Case file path or builtin:ieee33");
    app->add_option("--seed", s.seed, "Master seed");
    app->add_option("--out", s.out, "Output path, - for standard output");
    app->add_option("--format", s.format, "Report format")->check(CLI::IsMember({"csv", "json"}));
    app->add_flag("--audit", s.audit, "Include evaluation-only columns");
    app->add_option("--jobs", s.jobs, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
}

void add_estimation(CLI::App* app, EstimateFlags& f, bool fad_list) {
    if (fad_list) {
        app->add_option("--fad", f.fad, "Fraction of available data (comma separated)")->delimiter(',');
    } else {
        app->add_option("--fad", f.fad[0], "Fraction of available data");
    }
    app->add_option("--count", f.count, "Explicit measurement count");
    app->add_option("--sigma-frac", f.sigma_frac, "Noise standard deviation relative to |truth|");
    app->add_option("--weights", f.weights, "w1,w2,w3,w4")->delimiter(',')->expected(4);
    app->add_option("--delta", f.delta, "MCSE residual bound");
    app->add_option("--lnr-threshold", f.lnr_threshold, "Normalized residual threshold");
}

std::vector<Method> parse_methods(const std::string& list) {
    std::vector<Method> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(method_from_name(item));
    }
    return out;
}

MeasurementTag parse_tag(const std::string& text) {
    const auto open = text.find('(');
    const auto close = text.rfind(')');
    if (open == std::string::npos || close != text.size() - 1 || close <= open + 1) {
        throw InvalidArgumentError("measurement tag must look like Pinj(17)");
    }
    MeasurementTag tag;
    tag.kind = kind_from_name(text.substr(0, open));
    try {
        std::size_t used = 0;
        tag.index = std::stoi(text.substr(open + 1, close - open - 1), &used);
        if (used != close - open - 1) throw std::invalid_argument("trailing");
    } catch (const std::logic_error&) {
        throw InvalidArgumentError("bad index in measurement tag '" + text + "'");
    }
    return tag;
}

ExperimentConfig make_config(const Shared& s, const EstimateFlags& f) {
    ExperimentConfig c;
    c.case_source = s.case_source;
    c.seed = s.seed;
    c.jobs = s.jobs;
    c.fad_grid = f.fad;
    c.measurement_count = f.count;
    c.sigma_frac = f.sigma_frac;
    c.weights = {f.weights[0], f.weights[1], f.weights[2], f.weights[3]};
    c.delta = f.delta;
    c.lnr_threshold = f.lnr_threshold;
    return c;
}

void write_output(const std::string& path, const std::string& text) {
    if (path == "-") {
        std::cout << text << std::flush;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    out << text;
    if (!out) throw Error("failed writing '" + path + "'");
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError("cannot read '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string powerflow_report(const Network& network, const ComplexState& state, const std::string& format) {
    const int n = network.num_buses();
    if (format == "json") {
        nlohmann::ordered_json doc;
        nlohmann::ordered_json buses = nlohmann::ordered_json::array();
        for (int i = 0; i < n; ++i) {
            const Complex v = state.v(i);
            buses.push_back({{"bus", i},
                             {"vmag", std::abs(v)},
                             {"angle_deg", std::arg(v) * 180.0 / std::numbers::pi},
                             {"e", v.real()},
                             {"f", v.imag()}});
        }
        doc["buses"] = buses;
        return doc.dump(2) + "\n";
    }
    std::string out = "bus,vmag,angle_deg,e,f\n";
    for (int i = 0; i < n; ++i) {
        const Complex v = state.v(i);
        out += std::to_string(i) + ',' + format_number(std::abs(v)) + ',' +
               format_number(std::arg(v) * 180.0 / std::numbers::pi) + ',' + format_number(v.real()) + ',' +
               format_number(v.imag()) + '\n';
    }
    return out;
}

std::string estimate_csv(const EstimationResult& r, bool audit) {
    std::string out = audit ? "bus,vmag,angle_deg,vmag_rect,p,q\n" : "bus,vmag,angle_deg\n";
    for (int i = 0; i < r.voltage.size(); ++i) {
        out += std::to_string(i) + ',' + format_number(r.vmag(i)) + ',' + format_number(r.angle_deg(i));
        if (audit) {
            out += ',' + format_number(std::abs(r.voltage.v(i))) + ',' + format_number(r.injections.p(i)) + ',' +
                   format_number(r.injections.q(i));
        }
        out += '\n';
    }
    return out;
}

}  // namespace

int cli_dispatch(int argc, const char* const* argv) {
    CLI::App app{"Matrix-completion state estimation for radial distribution feeders"};
    app.require_subcommand(1);

    Shared shared;
    EstimateFlags flags;
    double load_scale = 1.0;
    int trials = 30;
    std::string methods = "wls,wls_lnr,mcse,rmcse";
    std::vector<double> bad_pct{0.0, 0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.10};
    double bad_sigma = 1.0;
    double factor = 2.0;
    std::string target = "Pinj(17)";

    CLI::App* pf = app.add_subcommand("powerflow", "Solve the AC power flow and print bus voltages");
    add_shared(pf, shared);
    pf->add_option("--load-scale", load_scale, "Multiplier on every load");

    CLI::App* est = app.add_subcommand("estimate", "Run one estimator on one measurement set");
    add_shared(est, shared);
    add_estimation(est, flags, false);
    est->add_option("--method", flags.method, "wls, wls_lnr, mcse or rmcse");
    est->add_option("--measurements", flags.measurements, "Measurement set JSON instead of a seeded draw");
    est->add_option("--dump-measurements", flags.dump_measurements, "Write the measurement set used as JSON");

    CLI::App* fad = app.add_subcommand("sweep-fad", "Monte Carlo sweep over FAD levels");
    add_shared(fad, shared);
    add_estimation(fad, flags, true);
    fad->add_option("--trials", trials, "Trials per grid point");
    fad->add_option("--methods", methods, "Comma separated methods");

    CLI::App* bad = app.add_subcommand("sweep-baddata", "Monte Carlo sweep over bad-data percentages");
    add_shared(bad, shared);
    add_estimation(bad, flags, false);
    bad->add_option("--bad-pct", bad_pct, "Bad-data fractions (comma separated)")->delimiter(',');
    bad->add_option("--bad-sigma-frac", bad_sigma, "Bad-data deviation relative to |truth|");
    bad->add_option("--trials", trials, "Trials per grid point");
    bad->add_option("--methods", methods, "Comma separated methods");

    CLI::App* single = app.add_subcommand("single-bad", "Clean versus single scaled measurement");
    add_shared(single, shared);
    add_estimation(single, flags, false);
    single->add_option("--factor", factor, "Scale applied to the target measurement");
    single->add_option("--target", target, "Target measurement, e.g. Pinj(17) (0-based bus)");
    single->add_option("--methods", methods, "Comma separated methods");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    ExperimentConfig config;
    try {
        config = make_config(shared, flags);
        config.trials = trials;
        config.methods = parse_methods(methods);
        config.bad_pct_grid = bad_pct;
        config.bad_sigma_frac = bad_sigma;
        config.bad_factor = factor;
        config.bad_target = parse_tag(target);
        if (*est) config.methods = {method_from_name(flags.method)};
        config.validate();
        if (!(load_scale >= 0.0)) throw InvalidArgumentError("load scale must be non-negative");
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }

    try {
        if (*pf) {
            const Network network = load_case(shared.case_source).with_load_scale(load_scale);
            const ComplexState state = solve_ac(network, InjectionVector::from_loads(network));
            write_output(shared.out, powerflow_report(network, state, shared.format));
        } else if (*est) {
            const Network network = load_case(shared.case_source);
            const LinearModel linmodel = build_linear_model(network);
            MeasurementSet set;
            if (!flags.measurements.empty()) {
                set = parse_measurements(read_file(flags.measurements), network);
            } else {
                const ComplexState truth = solve_ac(network, InjectionVector::from_loads(network));
                Rng rng(trial_seed(config.seed, 0, 0));
                const MeasurementSet noisy = add_noise(full_measurement_set(truth, network), config.sigma_frac, rng);
                set = sample_fad(noisy, config.fad_grid.front(), rng, config.measurement_count);
            }
            if (!flags.dump_measurements.empty()) {
                write_output(flags.dump_measurements, serialize_measurements(set, shared.audit));
            }
            const EstimationResult result = run_method(config.methods.front(), set, network, linmodel, config);
            if (!result.has_estimate()) throw Error("no estimate: solver status " + result.solver_status);
            write_output(shared.out, shared.format == "json" ? serialize_result(result, shared.audit)
                                                             : estimate_csv(result, shared.audit));
        } else if (*fad) {
            SweepReport report = run_fad_sweep(config);
            report.audit = shared.audit;
            write_output(shared.out, shared.format == "json" ? report.to_json() : report.to_csv());
        } else if (*bad) {
            SweepReport report = run_bad_sweep(config);
            report.audit = shared.audit;
            write_output(shared.out, shared.format == "json" ? report.to_json() : report.to_csv());
        } else if (*single) {
            const SingleBadReport report = run_single_bad(config);
            write_output(shared.out, shared.format == "json" ? report.to_json() : report.to_csv());
        }
    } catch (const InvalidArgumentError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

}  // namespace rmcse
