#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "rmcse/error.hpp"
#include "rmcse/network.hpp"

using namespace rmcse;

namespace {

const char* kTwoBus = R"({
  "base_mva": 10, "base_kv": 12.66,
  "buses": [
    {"id": 0, "kind": "slack", "p_load_mw": 0, "q_load_mvar": 0},
    {"id": 1, "kind": "load", "p_load_mw": 0.1, "q_load_mvar": 0.06}
  ],
  "branches": [{"from": 0, "to": 1, "r_ohm": 0.0922, "x_ohm": 0.047}]
})";

Network two_bus(double r, double x) {
    return Network({Bus{0, BusKind::slack, 0.0, 0.0}, Bus{1, BusKind::load, 0.01, 0.0}}, {Branch{0, 1, r, x}}, 10.0,
                   12.66);
}

}  // namespace

TEST_CASE("branch admittance") {
    const Complex a = branch_admittance(Branch{0, 1, 0.1, 0.1});
    CHECK(a.real() == doctest::Approx(5.0).epsilon(1e-14));
    CHECK(a.imag() == doctest::Approx(-5.0).epsilon(1e-14));

    const Complex b = branch_admittance(Branch{0, 1, 0.0, 1.0});
    CHECK(std::abs(b - Complex(0.0, -1.0)) < 1e-15);

    CHECK_THROWS_AS(branch_admittance(Branch{0, 1, 0.0, 0.0}), InvalidBranchError);

    // Hand conversion: z_pu = z_ohm * 10 / 12.66^2, y = 1 / z_pu.
    const Network net = builtin_ieee33();
    const double zb = 12.66 * 12.66 / 10.0;
    const Complex z(0.0922 / zb, 0.0470 / zb);
    const Complex y = branch_admittance(net.branches()[0]);
    CHECK(std::abs(y - 1.0 / z) < 1e-10);
    CHECK(y.real() == doctest::Approx(137.979748717).epsilon(1e-10));
    CHECK(y.imag() == doctest::Approx(-70.3367482614).epsilon(1e-10));
}

TEST_CASE("ybus stamping") {
    const ComplexMatrix y2 = build_ybus(two_bus(0.1, 0.1));
    CHECK(std::abs(y2(0, 0) - Complex(5, -5)) < 1e-12);
    CHECK(std::abs(y2(0, 1) - Complex(-5, 5)) < 1e-12);
    CHECK(std::abs(y2(1, 0) - Complex(-5, 5)) < 1e-12);
    CHECK(std::abs(y2(1, 1) - Complex(5, -5)) < 1e-12);

    const Network net = builtin_ieee33();
    const ComplexMatrix y = build_ybus(net);
    REQUIRE(y.rows() == 33);
    REQUIRE(y.cols() == 33);
    int nonzeros = 0;
    for (int i = 0; i < 33; ++i) {
        CHECK(std::abs(y.row(i).sum()) < 1e-9);
        for (int j = 0; j < 33; ++j) {
            if (y(i, j) != Complex(0.0, 0.0)) ++nonzeros;
            CHECK(y(i, j) == y(j, i));
        }
    }
    CHECK(nonzeros == 97);
    for (const Branch& br : net.branches()) {
        CHECK(y(br.from_bus, br.to_bus) == -branch_admittance(br));
    }
}

TEST_CASE("builtin feeder") {
    const Network net = builtin_ieee33();
    CHECK(net.num_buses() == 33);
    CHECK(net.num_branches() == 32);
    CHECK(net.slack_bus() == 0);
    double p = 0.0, q = 0.0;
    for (const Bus& b : net.buses()) {
        p += b.p_load;
        q += b.q_load;
    }
    // 3715 kW / 2300 kvar on a 10 MVA base.
    CHECK(p * net.base_mva() == doctest::Approx(3.715).epsilon(1e-12));
    CHECK(q * net.base_mva() == doctest::Approx(2.3).epsilon(1e-12));
    CHECK(load_case("builtin:ieee33") == net);
}

TEST_CASE("case parsing") {
    const Network net = parse_case(kTwoBus);
    CHECK(net.num_buses() == 2);
    CHECK(net.num_branches() == 1);
    CHECK(net.buses()[1].p_load == doctest::Approx(0.01));

    const Network feeder = builtin_ieee33();
    CHECK(parse_case(serialize_case(feeder)) == feeder);
    CHECK(parse_case(serialize_case(net)) == net);

    const char* dup = R"({"base_mva": 10, "base_kv": 12.66,
      "buses": [{"id": 0, "kind": "slack", "p_load_mw": 0, "q_load_mvar": 0},
                {"id": 0, "kind": "load", "p_load_mw": 0, "q_load_mvar": 0}],
      "branches": [{"from": 0, "to": 1, "r_ohm": 1, "x_ohm": 1}]})";
    CHECK_THROWS_AS(parse_case(dup), ValidationError);

    CHECK_THROWS_AS(parse_case("{\"base_mva\": 10}"), ParseError);
    CHECK_THROWS_AS(parse_case("{ not json"), ParseError);

    const char* loop = R"({"base_mva": 10, "base_kv": 12.66,
      "buses": [{"id": 0, "kind": "slack", "p_load_mw": 0, "q_load_mvar": 0},
                {"id": 1, "kind": "load", "p_load_mw": 0, "q_load_mvar": 0},
                {"id": 2, "kind": "load", "p_load_mw": 0, "q_load_mvar": 0}],
      "branches": [{"from": 0, "to": 1, "r_ohm": 1, "x_ohm": 1}, {"from": 1, "to": 2, "r_ohm": 1, "x_ohm": 1},
                   {"from": 2, "to": 0, "r_ohm": 1, "x_ohm": 1}]})";
    CHECK_THROWS_AS(parse_case(loop), ValidationError);
}

TEST_CASE("matpower subset") {
    const char* text = R"(function mpc = tiny
mpc.baseMVA = 10;
mpc.bus = [
  1 3 0   0    0 0 1 1 0 12.66 1 1.1 0.9;
  2 1 0.1 0.06 0 0 1 1 0 12.66 1 1.1 0.9;
  3 1 0.2 0.1  0 0 1 1 0 12.66 1 1.1 0.9;
];
mpc.branch = [
  1 2 0.01 0.02 0 0 0 0 0 0 1 -360 360;
  2 3 0.03 0.04 0 0 0 0 0 0 1 -360 360;
];
)";
    const Network net = parse_case(text);
    CHECK(net.num_buses() == 3);
    CHECK(net.slack_bus() == 0);
    CHECK(net.branches()[1].from_bus == 1);
    CHECK(net.branches()[1].x == doctest::Approx(0.04));
    CHECK(net.buses()[2].q_load == doctest::Approx(0.01));
    CHECK_THROWS_AS(parse_case("mpc.baseMVA = 10;\nmpc.bus = [\n1 3 0 0 0 0 1 1 0 12.66;\n"), ParseError);
}

TEST_CASE("load scaling and incidence") {
    const Network net = builtin_ieee33();
    const Network half = net.with_load_scale(0.5);
    for (int i = 0; i < net.num_buses(); ++i) {
        CHECK(half.buses()[i].p_load == doctest::Approx(0.5 * net.buses()[i].p_load));
    }
    std::set<int> seen;
    for (int b = 0; b < net.num_buses(); ++b) {
        for (int k : net.incidence()[static_cast<std::size_t>(b)]) {
            const Branch& br = net.branches()[static_cast<std::size_t>(k)];
            CHECK((br.from_bus == b || br.to_bus == b));
            seen.insert(k);
        }
    }
    CHECK(seen.size() == 32);
}
