#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "wpt/swcap.hpp"

using namespace wpt;
using namespace wpt::swcap;

namespace {
constexpr double kTable1L = 80e-6;
constexpr double kTable1C1 = 3e-9;
constexpr double kTable1C2 = 130e-9;
constexpr double kTable2C1 = 10e-9;
constexpr double kTable2C2 = 44e-9;
}  // namespace

TEST_CASE("resonant_capacitance closed form") {
    CHECK(resonant_capacitance(50e3, 80e-6) == doctest::Approx(126.65e-9).epsilon(1e-4));
    CHECK(resonant_capacitance(79e3, 80e-6) == doctest::Approx(50.73e-9).epsilon(1e-3));
    // definition of f_hi: resonating l_r at f_hi needs exactly c1
    auto d = CompensationDesign::from_lc(kTable1L, kTable1C1, kTable1C2);
    CHECK(resonant_capacitance(d.f_hi, d.l_r) == doctest::Approx(d.c1).epsilon(1e-12));
    CHECK_THROWS_AS(resonant_capacitance(0.0, 1e-3), ValidationError);
}

TEST_CASE("equivalent_capacitance endpoints and anchor") {
    const double f = 50e3;
    CHECK(equivalent_capacitance(f, 0.0, kTable1C1, kTable1C2) == doctest::Approx(kTable1C1));
    CHECK(equivalent_capacitance(f, 0.5 / f, kTable1C1, kTable1C2) ==
          doctest::Approx(kTable1C1 + kTable1C2));
    // 9.69 us at 50 kHz lands within 0.2 nF of the 126.65 nF resonance value
    const double c = equivalent_capacitance(50e3, 9.69e-6, kTable1C1, kTable1C2);
    CHECK(std::abs(c - 126.65e-9) < 0.2e-9);
    CHECK_THROWS_AS(equivalent_capacitance(f, 0.5 / f * 1.01, kTable1C1, kTable1C2),
                    DutyOutOfRange);
    CHECK_THROWS_AS(equivalent_capacitance(f, -1e-6, kTable1C1, kTable1C2), DutyOutOfRange);
}

TEST_CASE("switch_on_time reproduces the published values") {
    CHECK(std::abs(switch_on_time(50e3, kTable1L, kTable1C1, kTable1C2) - 9.69e-6) < 0.01e-6);
    CHECK(std::abs(switch_on_time(120e3, kTable1L, kTable1C1, kTable1C2) - 2.87e-6) < 0.01e-6);
    CHECK(std::abs(switch_on_time(300e3, kTable1L, kTable1C1, kTable1C2) - 0.16e-6) < 0.01e-6);
}

TEST_CASE("switch_on_time boundary behaviour") {
    auto d = CompensationDesign::from_lc(kTable1L, kTable1C1, kTable1C2);
    CHECK(switch_on_time(d.f_hi, d.l_r, d.c1, d.c2) == doctest::Approx(0.0).epsilon(1e-9));
    // the low end needs the full half-period
    CHECK(switch_on_time(d.f_lo, d.l_r, d.c1, d.c2) ==
          doctest::Approx(0.5 / d.f_lo).epsilon(1e-9));
    CHECK_THROWS_AS(switch_on_time(d.f_hi * 1.001, d.l_r, d.c1, d.c2), FrequencyOutOfRange);
    CHECK_THROWS_AS(switch_on_time(d.f_lo * 0.999, d.l_r, d.c1, d.c2), FrequencyOutOfRange);
}

TEST_CASE("hacking_frequency_range for both parameter tables") {
    auto [lo1, hi1] = hacking_frequency_range(kTable1L, kTable1C1, kTable1C2);
    CHECK(lo1 == doctest::Approx(48.8e3).epsilon(0.005));
    CHECK(hi1 == doctest::Approx(324.9e3).epsilon(0.005));
    auto [lo2, hi2] = hacking_frequency_range(kTable1L, kTable2C1, kTable2C2);
    CHECK(lo2 == doctest::Approx(76.6e3).epsilon(0.005));
    CHECK(hi2 == doctest::Approx(177.9e3).epsilon(0.005));
    // degenerate single capacitor: range collapses
    auto [lo3, hi3] = hacking_frequency_range(kTable1L, kTable1C1, 1e-15);
    CHECK(lo3 == doctest::Approx(hi3).epsilon(1e-5));
}

TEST_CASE("select_capacitances") {
    auto [c1, c2] = select_capacitances(80e3, 100e3, 1e-3, 0.0);
    CHECK(c1 == doctest::Approx(2.533e-9).epsilon(1e-3));
    CHECK(c2 == doctest::Approx(1.425e-9).epsilon(1e-3));
    // margin 0: range endpoints equal the targets exactly
    auto [lo, hi] = hacking_frequency_range(1e-3, c1, c2);
    CHECK(lo == doctest::Approx(80e3).epsilon(1e-9));
    CHECK(hi == doctest::Approx(100e3).epsilon(1e-9));
    // with margin the range covers the targets with room to spare
    auto [c1m, c2m] = select_capacitances(80e3, 100e3, 1e-3, 0.1);
    auto [lom, him] = hacking_frequency_range(1e-3, c1m, c2m);
    CHECK(lom < 80e3);
    CHECK(him > 100e3);
    CHECK_THROWS_AS(select_capacitances(100e3, 80e3, 1e-3, 0.0), InfeasibleTargets);
}

TEST_CASE("sensitivity_sweep trends") {
    const double l = 1e-3;
    auto [c1, c2] = select_capacitances(80e3, 100e3, l, 0.0);
    const double scales[] = {0.5, 1.0, 1.5};
    auto rows = sensitivity_sweep(l, c1, c2, scales);
    REQUIRE(rows.size() == 9);
    auto find = [&](double s1, double s2) {
        for (const auto& r : rows)
            if (r.scale_c1 == s1 && r.scale_c2 == s2) return r;
        FAIL("grid point missing");
        return rows[0];
    };
    auto base = find(1.0, 1.0);
    auto [blo, bhi] = hacking_frequency_range(l, c1, c2);
    CHECK(base.f_lo == doctest::Approx(blo));
    CHECK(base.f_hi == doctest::Approx(bhi));
    // larger c1 lowers f_hi by exactly 1/sqrt(scale)
    CHECK(find(1.5, 1.0).f_hi == doctest::Approx(bhi / std::sqrt(1.5)).epsilon(1e-9));
    // smaller c2 raises f_lo
    CHECK(find(1.0, 0.5).f_lo > blo);
    // larger c2 lowers f_lo
    CHECK(find(1.0, 1.5).f_lo < blo);
}

TEST_CASE("equivalent capacitance is strictly increasing in t_on") {
    const double f = 85e3;
    double prev = 0.0;
    for (int i = 0; i <= 400; ++i) {
        const double t_on = (0.5 / f) * i / 400.0;
        const double c = equivalent_capacitance(f, t_on, kTable2C1, kTable2C2);
        if (i > 0) CHECK(c > prev);
        prev = c;
    }
}

TEST_CASE("round trip: equivalent(switch_on_time) == resonant over random draws") {
    std::mt19937_64 rng(0x5eed);
    std::uniform_real_distribution<double> l_dist(10e-6, 2e-3);
    std::uniform_real_distribution<double> c_dist(1e-9, 200e-9);
    std::uniform_real_distribution<double> u(0.001, 0.999);
    for (int i = 0; i < 1000; ++i) {
        const double l = l_dist(rng);
        const double c1 = c_dist(rng);
        const double c2 = c_dist(rng);
        auto [lo, hi] = hacking_frequency_range(l, c1, c2);
        const double f = lo + u(rng) * (hi - lo);
        const double t_on = switch_on_time(f, l, c1, c2);
        const double c_eq = equivalent_capacitance(f, t_on, c1, c2);
        const double c_res = resonant_capacitance(f, l);
        CHECK(std::abs(c_eq - c_res) <= 1e-9 * c_res);
    }
}

TEST_CASE("range correctness: error exactly outside [f_lo, f_hi]") {
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> l_dist(10e-6, 1e-3);
    std::uniform_real_distribution<double> c_dist(1e-9, 150e-9);
    for (int i = 0; i < 200; ++i) {
        const double l = l_dist(rng);
        const double c1 = c_dist(rng);
        const double c2 = c_dist(rng);
        auto [lo, hi] = hacking_frequency_range(l, c1, c2);
        CHECK_NOTHROW(switch_on_time(lo * (1.0 + 1e-9), l, c1, c2));
        CHECK_NOTHROW(switch_on_time(hi * (1.0 - 1e-9), l, c1, c2));
        CHECK_THROWS_AS(switch_on_time(hi * 1.001, l, c1, c2), FrequencyOutOfRange);
        CHECK_THROWS_AS(switch_on_time(lo * 0.999, l, c1, c2), FrequencyOutOfRange);
    }
}

TEST_CASE("frequency_for_switch_on_time inverts switch_on_time") {
    for (double f : {80e3, 100e3, 130e3, 160e3}) {
        const double t_on = switch_on_time(f, kTable1L, kTable2C1, kTable2C2);
        const double f_back = frequency_for_switch_on_time(t_on, kTable1L, kTable2C1, kTable2C2);
        CHECK(f_back == doctest::Approx(f).epsilon(1e-6));
    }
}

TEST_CASE("GatePlan invariant") {
    auto p = GatePlan::at(79e3, 4.7e-6);
    CHECK(p.t_on + p.t_off == doctest::Approx(0.5 * p.period).epsilon(1e-12));
    CHECK_THROWS_AS(GatePlan::at(79e3, 7e-6), DutyOutOfRange);
}
