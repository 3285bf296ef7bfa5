#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "rmcse/error.hpp"
#include "rmcse/experiment.hpp"

using namespace rmcse;

namespace {

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        rows.push_back(cells);
    }
    return rows;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "rmcse");
    std::vector<const char*> argv;
    for (const std::string& a : args) argv.push_back(a.c_str());
    return cli_dispatch(static_cast<int>(argv.size()), argv.data());
}

std::filesystem::path temp_dir() {
    const auto dir = std::filesystem::temp_directory_path() / "rmcse_experiment_test";
    std::filesystem::create_directories(dir);
    return dir;
}

ExperimentConfig quick(std::vector<Method> methods, std::vector<double> fads, int trials) {
    ExperimentConfig c;
    c.methods = std::move(methods);
    c.fad_grid = std::move(fads);
    c.trials = trials;
    c.jobs = 2;
    return c;
}

}  // namespace

TEST_CASE("mape definitions") {
    const Network net = builtin_ieee33();
    const ComplexState truth = solve_ac(net, InjectionVector::from_loads(net));
    EstimationResult est;
    est.voltage = truth;
    est.vmag = truth.v.cwiseAbs();
    Mape m = mape(est, truth, 0);
    CHECK(m.mag_pct == 0.0);
    CHECK(m.ang_pct == 0.0);
    CHECK(m.ang_excluded == 0);

    est.vmag *= 1.01;
    m = mape(est, truth, 0);
    CHECK(m.mag_pct == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(m.mag_rect_pct == doctest::Approx(0.0).scale(1.0));

    // Doubling every angle is a 100% angle error.
    EstimationResult rot = est;
    for (int i = 0; i < 33; ++i) rot.voltage.v(i) = std::polar(std::abs(truth.v(i)), 2.0 * std::arg(truth.v(i)));
    CHECK(mape(rot, truth, 0).ang_pct == doctest::Approx(100.0).epsilon(1e-9));

    const ComplexState flat = ComplexState::flat(33);
    EstimationResult at_flat;
    at_flat.voltage = flat;
    at_flat.vmag = flat.v.cwiseAbs();
    const Mape none = mape(at_flat, flat, 0);
    CHECK(none.ang_excluded == 32);
    CHECK(none.ang_pct == 0.0);

    EstimationResult wrong;
    CHECK_THROWS_AS(mape(wrong, truth, 0), InvalidArgumentError);
}

TEST_CASE("seed derivation") {
    // First output of a splitmix64 stream seeded with 0.
    CHECK(mix64(0) == 0xe220a8397b1dcdafULL);
    CHECK(trial_seed(42, 1, 2) == mix64(mix64(mix64(42) ^ 1) ^ 2));
    CHECK(trial_seed(42, 0, 1) != trial_seed(42, 1, 0));
    CHECK(format_number(0.1234567891234) == "0.123456789");
    CHECK(format_number(0.0) == "0");
    CHECK(format_number(-2.5e-12) == "-2.5e-12");
}

TEST_CASE("config validation") {
    ExperimentConfig c;
    CHECK_NOTHROW(c.validate());
    c.trials = 0;
    CHECK_THROWS_AS(c.validate(), InvalidArgumentError);
    c = ExperimentConfig{};
    c.fad_grid = {0.5, 1.5};
    CHECK_THROWS_AS(c.validate(), InvalidArgumentError);
    c = ExperimentConfig{};
    c.fad_grid = {0.0};
    CHECK_THROWS_AS(c.validate(), InvalidArgumentError);
    c = ExperimentConfig{};
    c.bad_pct_grid = {-0.1};
    CHECK_THROWS_AS(c.validate(), InvalidArgumentError);
    c = ExperimentConfig{};
    c.methods.clear();
    CHECK_THROWS_AS(c.validate(), InvalidArgumentError);
}

TEST_CASE("seeded wls run is pinned") {
    const Network net = builtin_ieee33();
    const ComplexState truth = solve_ac(net, InjectionVector::from_loads(net));
    const LinearModel lm = build_linear_model(net);
    Rng rng(trial_seed(42, 0, 0));
    const MeasurementSet s = sample_fad(add_noise(full_measurement_set(truth, net), 0.01, rng), 0.7, rng);
    const Mape m = mape(run_method(Method::wls, s, net, lm, ExperimentConfig{}), truth, 0);
    CHECK(m.mag_pct == doctest::Approx(0.186958237).epsilon(1e-7));
    CHECK(m.ang_pct == doctest::Approx(31.9601065).epsilon(1e-7));
}

TEST_CASE("noiseless full-data sweep") {
    ExperimentConfig c = quick({Method::wls}, {1.0}, 3);
    c.sigma_frac = 0.0;
    const SweepReport r = run_fad_sweep(c);
    REQUIRE(r.rows.size() == 3);
    for (const TrialRow& row : r.rows) {
        CHECK_FALSE(row.failed);
        CHECK(row.count == 165);
        CHECK(row.error.mag_pct < 1e-8);
        CHECK(row.error.ang_pct < 1e-6);
    }
}

TEST_CASE("sweep report layout and summaries") {
    ExperimentConfig c = quick({Method::wls_lnr, Method::wls}, {0.5, 0.7}, 4);
    const SweepReport r = run_fad_sweep(c);
    CHECK(r.rows.size() == 2 * 2 * 4);
    CHECK(r.summary.size() == 4);
    // Every (grid, method, trial) appears once, sorted.
    for (std::size_t i = 1; i < r.rows.size(); ++i) {
        const TrialRow& a = r.rows[i - 1];
        const TrialRow& b = r.rows[i];
        CHECK(std::tie(a.grid_index, a.method, a.trial) < std::tie(b.grid_index, b.method, b.trial));
    }

    const auto csv = parse_csv(r.to_csv());
    REQUIRE(csv.size() == 1 + 16 + 4);
    const std::vector<std::string>& header = csv[0];
    CHECK(header.size() == 27);
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
    for (const auto& row : csv) CHECK(row.size() == header.size());

    // Recompute each summary from the trial rows printed in the same file.
    for (std::size_t s = 17; s < csv.size(); ++s) {
        const auto& sum = csv[s];
        CHECK(sum[col["trial"]] == "summary");
        double mag = 0.0, ang = 0.0, rank = 0.0, lo = 1e300, hi = -1e300;
        int ok = 0, total = 0, unobs = 0;
        for (std::size_t t = 1; t < 17; ++t) {
            const auto& row = csv[t];
            if (row[col["fad"]] != sum[col["fad"]] || row[col["method"]] != sum[col["method"]]) continue;
            ++total;
            rank += std::stod(row[col["rank"]]);
            if (row[col["mag_mape"]].empty()) {
                if (row[col["status"]] == "unobservable") ++unobs;
                continue;
            }
            const double v = std::stod(row[col["mag_mape"]]);
            mag += v;
            ang += std::stod(row[col["ang_mape"]]);
            lo = std::min(lo, v);
            hi = std::max(hi, v);
            ++ok;
        }
        CHECK(total == 4);
        CHECK(std::stoi(sum[col["ok_trials"]]) == ok);
        CHECK(std::stoi(sum[col["fail_unobservable"]]) == unobs);
        CHECK(sum[col["rank_mean"]] == format_number(rank / total));
        if (ok > 0) {
            CHECK(sum[col["mag_mean"]] == format_number(mag / ok));
            CHECK(sum[col["ang_mean"]] == format_number(ang / ok));
            CHECK(sum[col["mag_min"]] == format_number(lo));
            CHECK(sum[col["mag_max"]] == format_number(hi));
        }
    }

    SweepReport audited = r;
    audited.audit = true;
    const auto audited_csv = parse_csv(audited.to_csv());
    CHECK(audited_csv[0].size() == 28);
    CHECK(audited_csv[0][14] == "mag_rect_mape");
    for (const auto& row : audited_csv) CHECK(row.size() == 28);
    CHECK(r.to_json().find("\"config\"") != std::string::npos);
    CHECK(r.to_csv() == run_fad_sweep(c).to_csv());
    c.jobs = 1;
    CHECK(r.to_json() == run_fad_sweep(c).to_json());
}

TEST_CASE("bad-data sweep shares the measurement draw") {
    ExperimentConfig c = quick({Method::wls}, {0.7}, 3);
    c.bad_pct_grid = {0.0, 0.05, 0.10};
    const SweepReport bad = run_bad_sweep(c);
    REQUIRE(bad.rows.size() == 9);
    const SweepReport clean = run_fad_sweep(c);
    for (int t = 0; t < 3; ++t) {
        const TrialRow& zero = bad.rows[static_cast<std::size_t>(t)];
        const TrialRow& ref = clean.rows[static_cast<std::size_t>(t)];
        CHECK(zero.bad_pct == 0.0);
        CHECK(zero.status == ref.status);
        if (!zero.failed) CHECK(zero.error.mag_pct == ref.error.mag_pct);
        for (int g = 1; g < 3; ++g) {
            const TrialRow& other = bad.rows[static_cast<std::size_t>(3 * g + t)];
            CHECK(other.count == zero.count);
            CHECK(other.rank == zero.rank);
        }
    }
    CHECK(run_bad_sweep(c).to_csv() == bad.to_csv());
}

TEST_CASE("single bad datum") {
    ExperimentConfig c = quick({Method::wls, Method::rmcse}, {0.7}, 1);
    c.bad_factor = 1.0;
    const SingleBadReport same = run_single_bad(c);
    REQUIRE(same.buses.size() == 66);
    for (const SingleBadBus& b : same.buses) {
        CHECK(b.vmag_bad == b.vmag_clean);
        CHECK(b.ang_bad == b.ang_clean);
    }

    c.methods = {Method::wls};
    c.bad_factor = 2.0;
    const SingleBadReport doubled = run_single_bad(c);
    REQUIRE(doubled.buses.size() == 33);
    int upward = 0;
    for (const SingleBadBus& b : doubled.buses) upward += b.vmag_bad > b.vmag_clean;
    CHECK(upward >= 32);
    const auto rows = parse_csv(doubled.to_csv());
    CHECK(rows.size() == 1 + 33 + 1);
    CHECK(rows.back()[1] == "mape");
}

TEST_CASE("command line") {
    const auto dir = temp_dir();
    const auto pf = dir / "pf.csv";
    CHECK(run_cli({"powerflow", "--out", pf.string()}) == 0);
    const auto lines = parse_csv(slurp(pf));
    CHECK(lines.size() == 34);
    CHECK(lines[0][0] == "bus");
    CHECK(std::stod(lines[18][1]) == doctest::Approx(0.9131).epsilon(1e-4));

    CHECK(run_cli({"powerflow", "--bogus"}) == 2);
    CHECK(run_cli({}) == 2);
    CHECK(run_cli({"sweep-fad", "--fad", "1.5", "--trials", "1", "--out", (dir / "x.csv").string()}) == 2);
    CHECK(run_cli({"sweep-fad", "--trials", "0", "--out", (dir / "x.csv").string()}) == 2);
    CHECK(run_cli({"sweep-fad", "--methods", "lav", "--out", (dir / "x.csv").string()}) == 2);
    CHECK(run_cli({"powerflow", "--case", (dir / "missing.json").string(), "--out", pf.string()}) == 1);
    CHECK(run_cli({"powerflow", "--format", "xml"}) == 2);

    const auto a = dir / "a.csv", b = dir / "b.csv";
    const std::vector<std::string> sweep{"sweep-fad", "--fad", "0.5,0.7", "--trials", "2", "--seed", "5", "--methods",
                                         "wls,wls_lnr"};
    auto with_out = [&](const std::filesystem::path& p) {
        std::vector<std::string> args = sweep;
        args.push_back("--out");
        args.push_back(p.string());
        return args;
    };
    CHECK(run_cli(with_out(a)) == 0);
    CHECK(run_cli(with_out(b)) == 0);
    CHECK(slurp(a) == slurp(b));
    CHECK(parse_csv(slurp(a)).size() == 1 + 2 * 2 * 2 + 4);

    const auto est = dir / "est.json", meas = dir / "meas.json", est2 = dir / "est2.json";
    CHECK(run_cli({"estimate", "--method", "wls", "--fad", "0.9", "--format", "json", "--out", est.string(),
                   "--dump-measurements", meas.string()}) == 0);
    CHECK(run_cli({"estimate", "--method", "wls", "--measurements", meas.string(), "--format", "json", "--out",
                   est2.string()}) == 0);
    CHECK(slurp(est) == slurp(est2));
    CHECK(slurp(est).find("\"buses\"") != std::string::npos);
}
