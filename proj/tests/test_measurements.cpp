#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <map>

#include "rmcse/error.hpp"
#include "rmcse/measurements.hpp"

using namespace rmcse;

namespace {

struct Fixture {
    Network net = builtin_ieee33();
    ComplexState truth = solve_ac(net, InjectionVector::from_loads(net));
    MeasurementSet full = full_measurement_set(truth, net);
};

Network two_bus() {
    return Network({Bus{0, BusKind::slack, 0, 0}, Bus{1, BusKind::load, 0.01, 0.005}}, {Branch{0, 1, 0.1, 0.1}}, 10,
                   12.66);
}

/// Direct evaluation of one measurement from the voltages.
double direct_value(const MeasurementTag& tag, const ComplexVector& v, const Network& net) {
    switch (tag.kind) {
        case MeasurementKind::ref_volt_re: return v(tag.index).real();
        case MeasurementKind::ref_volt_im: return v(tag.index).imag();
        case MeasurementKind::vmag: return std::abs(v(tag.index));
        case MeasurementKind::pinj:
        case MeasurementKind::qinj: {
            const ComplexMatrix y = build_ybus(net);
            const Complex current = (y.row(tag.index) * v)(0);
            const Complex s = v(tag.index) * std::conj(current);
            return tag.kind == MeasurementKind::pinj ? s.real() : s.imag();
        }
        case MeasurementKind::iline_re:
        case MeasurementKind::iline_im: {
            const Branch& br = net.branches()[static_cast<std::size_t>(tag.index)];
            const Complex i = branch_admittance(br) * (v(br.from_bus) - v(br.to_bus));
            return tag.kind == MeasurementKind::iline_re ? i.real() : i.imag();
        }
    }
    return 0.0;
}

}  // namespace

TEST_CASE("full inventory") {
    Fixture f;
    CHECK(f.full.size() == 165);
    std::map<MeasurementKind, int> count;
    for (const Measurement& m : f.full.measurements) ++count[m.tag.kind];
    CHECK(count[MeasurementKind::ref_volt_re] == 1);
    CHECK(count[MeasurementKind::ref_volt_im] == 1);
    CHECK(count[MeasurementKind::vmag] == 33);
    CHECK(count[MeasurementKind::pinj] == 33);
    CHECK(count[MeasurementKind::qinj] == 33);
    CHECK(count[MeasurementKind::iline_re] == 32);
    CHECK(count[MeasurementKind::iline_im] == 32);

    const Network tiny = two_bus();
    const ComplexState st = solve_ac(tiny, InjectionVector::from_loads(tiny));
    CHECK(full_measurement_set(st, tiny).size() == 10);

    // Truth values agree with a direct evaluation from the same state.
    for (const Measurement& m : f.full.measurements) {
        CHECK(m.truth == doctest::Approx(direct_value(m.tag, f.truth.v, f.net)).epsilon(1e-12).scale(1.0));
        CHECK(m.value == m.truth);
    }
    // Power balance: measured injections match the load table.
    for (int i = 1; i < 33; ++i) {
        CHECK(f.full.find({MeasurementKind::pinj, i})->truth == doctest::Approx(-f.net.buses()[i].p_load).epsilon(1e-9));
    }
}

TEST_CASE("noise model") {
    Fixture f;
    Rng a(7), b(7);
    const MeasurementSet n1 = add_noise(f.full, 0.01, a);
    const MeasurementSet n2 = add_noise(f.full, 0.01, b);
    for (std::size_t i = 0; i < n1.size(); ++i) {
        CHECK(n1.measurements[i].value == n2.measurements[i].value);
        CHECK(n1.measurements[i].sigma == std::max(0.01 * std::abs(n1.measurements[i].truth), kSigmaFloor));
    }

    Rng c(1);
    const MeasurementSet clean = add_noise(f.full, 0.0, c);
    for (const Measurement& m : clean.measurements) {
        CHECK(m.value == m.truth);
        CHECK(m.sigma == kSigmaFloor);
    }

    Rng d(11);
    double sum = 0.0;
    int draws = 0;
    while (draws < 10000) {
        const MeasurementSet s = add_noise(f.full, 0.01, d);
        for (const Measurement& m : s.measurements) {
            sum += (m.value - m.truth) / m.sigma;
            if (++draws == 10000) break;
        }
    }
    CHECK(std::abs(sum / draws) < 0.05);
    CHECK_THROWS_AS(add_noise(f.full, -1.0, d), InvalidArgumentError);
}

TEST_CASE("FAD sampling") {
    Fixture f;
    CHECK(fad_count(0.7, 165) == 116);
    CHECK(fad_count(0.5, 165) == 83);
    CHECK(fad_count(0.3, 165) == 50);
    CHECK(fad_count(0.1, 117) == 12);

    Rng rng(3);
    CHECK(sample_fad(f.full, 1.0, rng).size() == 165);
    for (double fad : {0.2, 0.3, 0.5, 0.7, 0.9}) {
        for (int t = 0; t < 5; ++t) {
            const MeasurementSet s = sample_fad(f.full, fad, rng);
            CHECK(s.size() == fad_count(fad, 165));
            CHECK(s.contains({MeasurementKind::ref_volt_re, 0}));
            CHECK(s.contains({MeasurementKind::ref_volt_im, 0}));
            std::vector<MeasurementTag> tags = tags_of(s);
            std::sort(tags.begin(), tags.end());
            CHECK(std::adjacent_find(tags.begin(), tags.end()) == tags.end());
        }
    }
    CHECK(sample_fad(f.full, 0.5, rng, 84).size() == 84);
    const MeasurementTag target{MeasurementKind::pinj, 17};
    for (int t = 0; t < 10; ++t) CHECK(sample_fad(f.full, 0.1, rng, std::nullopt, {target}).contains(target));

    Rng r1(5), r2(5);
    CHECK(tags_of(sample_fad(f.full, 0.5, r1)) == tags_of(sample_fad(f.full, 0.5, r2)));
    CHECK_THROWS_AS(sample_fad(f.full, 0.0, rng), InvalidArgumentError);
    CHECK_THROWS_AS(sample_fad(f.full, 1.5, rng), InvalidArgumentError);
}

TEST_CASE("bad data injection") {
    Fixture f;
    const MeasurementTag target{MeasurementKind::pinj, 17};
    const double truth = f.full.find(target)->truth;
    CHECK(inject_bad_scaled(f.full, target, 2.0).find(target)->value == 2.0 * truth);
    CHECK(inject_bad_scaled(f.full, target, 0.0).find(target)->value == 0.0);
    const MeasurementSet same = inject_bad_scaled(f.full, target, 1.0);
    CHECK(same.find(target)->value == truth);
    CHECK(same.find(target)->is_bad);
    CHECK(inject_bad_scaled(f.full, target, 2.0).find(target)->sigma == f.full.find(target)->sigma);

    Rng rng(9);
    const MeasurementSet set = sample_fad(add_noise(f.full, 0.01, rng), 1.0, rng, 117);
    Rng z(1);
    const MeasurementSet none = inject_bad_random(set, 0.0, z);
    for (std::size_t i = 0; i < set.size(); ++i) {
        CHECK(none.measurements[i].value == set.measurements[i].value);
        CHECK_FALSE(none.measurements[i].is_bad);
    }
    Rng a(4), b(4);
    const MeasurementSet bad = inject_bad_random(set, 0.10, a);
    const MeasurementSet bad2 = inject_bad_random(set, 0.10, b);
    int flagged = 0;
    for (std::size_t i = 0; i < bad.size(); ++i) {
        if (bad.measurements[i].is_bad) {
            ++flagged;
            CHECK_FALSE(bad.measurements[i].tag.is_reference());
        }
        CHECK(bad.measurements[i].value == bad2.measurements[i].value);
        CHECK(bad.measurements[i].is_bad == bad2.measurements[i].is_bad);
    }
    CHECK(flagged == 12);
}

TEST_CASE("jacobian against central differences") {
    Fixture f;
    const MeasurementModel model(f.net);
    const std::vector<MeasurementTag> tags = tags_of(f.full);
    Rng rng(21);
    std::uniform_real_distribution<double> mag(0.9, 1.05), ang(-0.1, 0.1);
    for (int trial = 0; trial < 10; ++trial) {
        ComplexVector v(33);
        for (int i = 0; i < 33; ++i) v(i) = std::polar(mag(rng), ang(rng));
        const Eigen::MatrixXd H = model.jacobian(tags, v);
        Eigen::MatrixXd fd(H.rows(), H.cols());
        constexpr double h = 1e-6;
        for (int k = 0; k < 66; ++k) {
            ComplexVector up = v, down = v;
            const Complex d = k < 33 ? Complex(h, 0) : Complex(0, h);
            up(k % 33) += d;
            down(k % 33) -= d;
            fd.col(k) = (model.evaluate(tags, up) - model.evaluate(tags, down)) / (2 * h);
        }
        const double rel = (H - fd).cwiseAbs().maxCoeff() / H.cwiseAbs().maxCoeff();
        CHECK(rel < 1e-5);
        const Eigen::VectorXd direct = model.evaluate(tags, v);
        for (std::size_t r = 0; r < tags.size(); ++r) {
            CHECK(direct(static_cast<Eigen::Index>(r)) ==
                  doctest::Approx(direct_value(tags[r], v, f.net)).epsilon(1e-12).scale(1.0));
        }
    }
}

TEST_CASE("observability") {
    Fixture f;
    const Observability full = observability(f.full, f.net, f.truth);
    CHECK(full.rank == 66);
    CHECK(full.unobservable == 0);
    CHECK(full.redundancy == doctest::Approx(165.0 / 66.0));

    Rng rng(2);
    const MeasurementSet s117 = sample_fad(f.full, 0.7, rng, 117);
    CHECK(observability(s117, f.net, f.truth).redundancy == doctest::Approx(117.0 / 66.0));

    MeasurementSet refs;
    refs.num_buses = 33;
    refs.num_branches = 32;
    refs.measurements = {*f.full.find({MeasurementKind::ref_volt_re, 0}), *f.full.find({MeasurementKind::ref_volt_im, 0})};
    const Observability two = observability(refs, f.net, f.truth);
    CHECK(two.rank == 2);
    CHECK(two.unobservable == 64);

    for (double fad : {0.3, 0.5, 0.7}) {
        const MeasurementSet s = sample_fad(f.full, fad, rng);
        const Observability o = observability(s, f.net, f.truth);
        CHECK(o.rank <= std::min<int>(static_cast<int>(s.size()), 66));
        CHECK(o.rank + o.unobservable == 66);
    }
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(3, 3);
    m(0, 0) = 1.0;
    m(1, 1) = 1e-9;
    CHECK(numerical_rank(m) == 1);
}

TEST_CASE("critical measurements") {
    Fixture f;
    // Leave-one-out oracle: every single removal from the full set keeps rank 66.
    CHECK(critical_measurements(f.full, f.net, f.truth).empty());

    MeasurementSet refs_dropped = f.full;
    refs_dropped.measurements.erase(refs_dropped.measurements.begin(), refs_dropped.measurements.begin() + 2);
    CHECK(observability(refs_dropped, f.net, f.truth).rank == 66);

    Rng rng(13);
    const MeasurementSet s = sample_fad(f.full, 0.5, rng);
    const std::vector<MeasurementTag> crit = critical_measurements(s, f.net, f.truth);
    const int rank = observability(s, f.net, f.truth).rank;
    for (const Measurement& m : s.measurements) {
        MeasurementSet less = s;
        less.measurements.erase(std::find_if(less.measurements.begin(), less.measurements.end(),
                                             [&](const Measurement& x) { return x.tag == m.tag; }));
        const bool drops = observability(less, f.net, f.truth).rank < rank;
        CHECK(drops == (std::find(crit.begin(), crit.end(), m.tag) != crit.end()));
    }

    // A minimally determined set: every measurement is critical.
    MeasurementSet minimal = refs_dropped;
    minimal.measurements.resize(2);
    CHECK(critical_measurements(minimal, f.net, f.truth).size() == 2);
}

TEST_CASE("serialization round trip") {
    Fixture f;
    Rng rng(8);
    const MeasurementSet s = sample_fad(add_noise(f.full, 0.01, rng), 0.5, rng);
    const std::string text = serialize_measurements(s);
    CHECK(text.find("truth") == std::string::npos);
    CHECK(serialize_measurements(s, true).find("is_bad") != std::string::npos);
    const MeasurementSet back = parse_measurements(text, f.net);
    REQUIRE(back.size() == s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        CHECK(back.measurements[i].tag == s.measurements[i].tag);
        CHECK(back.measurements[i].value == s.measurements[i].value);
        CHECK(back.measurements[i].sigma == s.measurements[i].sigma);
    }
    CHECK(tag_label({MeasurementKind::pinj, 17}) == "Pinj(17)");
    CHECK(kind_from_name("IlineIm") == MeasurementKind::iline_im);
    CHECK_THROWS(parse_measurements("[{\"kind\": \"Bogus\", \"bus\": 1, \"value\": 1, \"sigma\": 1}]", f.net));
}
