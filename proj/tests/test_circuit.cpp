#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "wpt/circuit/trace.hpp"
#include "wpt/controller/schedule.hpp"
#include "wpt/sensing.hpp"

using namespace wpt;
using namespace wpt::circuit;

namespace {

constexpr double kPi = std::numbers::pi;

CoupledCoilSet table2_coils(double q_r = 100.0) {
    // series resistance for quality factor q at 85 kHz
    auto r_for = [&](double l) { return 2.0 * kPi * 85e3 * l / q_r; };
    CoupledCoilSet coils({150e-6, r_for(150e-6)}, {{80e-6, r_for(80e-6)}},
                         Coil{10e-6, r_for(10e-6)});
    coils.set_mutual(0, 1, 15e-6);  // tx - receiver
    coils.set_mutual(0, 2, 3e-6);   // tx - aux
    coils.set_mutual(1, 2, 2e-6);   // receiver - aux
    return coils;
}

GateEventSource schedule_source(const ctrl::GateSchedule& sched, int receiver = 0) {
    return [sched, receiver](double t0, double t1) { return sched.commands_in(t0, t1, receiver); };
}

double rel_l2_diff(const std::vector<double>& a, const std::vector<double>& b) {
    REQUIRE(a.size() == b.size());
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - b[i]) * (a[i] - b[i]);
        den += b[i] * b[i];
    }
    return std::sqrt(num / std::max(den, 1e-300));
}

}  // namespace

TEST_CASE("build_system accepts the experiment parameter set") {
    auto sys = build_system(table2_coils(), {SwitchedCapBranch{10e-9, 44e-9}},
                            {ResistorLoad{25.0}}, IdealCurrentSource{3.4, 79e3});
    CHECK(sys.receiver_count() == 1);
    CHECK(sys.state_dim() == 3);  // current, v1, v2
    CHECK(sys.has_auxiliary());
}

TEST_CASE("build_system accepts fully decoupled tanks") {
    CoupledCoilSet coils({150e-6, 0.1}, {{80e-6, 0.1}, {80e-6, 0.1}});
    auto sys = build_system(std::move(coils), {Compensation{FixedCap{50e-9}}, FixedCap{120e-9}},
                            {ResistorLoad{25.0}, ResistorLoad{25.0}},
                            IdealCurrentSource{1.0, 85e3});
    CHECK(sys.receiver_count() == 2);
}

TEST_CASE("build_system rejects non-physical coupling") {
    CoupledCoilSet coils({150e-6, 0.1}, {{80e-6, 0.1}});
    coils.set_mutual(0, 1, std::sqrt(150e-6 * 80e-6));  // k = 1
    CHECK_THROWS_AS(build_system(std::move(coils), {FixedCap{50e-9}}, {ResistorLoad{25.0}},
                                 IdealCurrentSource{1.0, 85e3}),
                    NonPhysicalCoupling);
    CoupledCoilSet neg({150e-6, 0.1}, {{80e-6, 0.1}});
    neg.set_mutual(0, 1, -1e-6);
    CHECK_THROWS_AS(build_system(std::move(neg), {FixedCap{50e-9}}, {ResistorLoad{25.0}},
                                 IdealCurrentSource{1.0, 85e3}),
                    NonPhysicalCoupling);
}

TEST_CASE("build_system rejects mismatched branch/load counts") {
    CHECK_THROWS_AS(build_system(table2_coils(), {}, {ResistorLoad{25.0}},
                                 IdealCurrentSource{1.0, 85e3}),
                    DimensionMismatch);
    CHECK_THROWS_AS(build_system(table2_coils(), {FixedCap{50e-9}}, {},
                                 IdealCurrentSource{1.0, 85e3}),
                    DimensionMismatch);
}

TEST_CASE("free LC oscillation hits the closed-form frequency") {
    const double l = 80e-6;
    const double c = 50.73e-9;
    CoupledCoilSet coils({150e-6, 1e-3}, {{l, 1e-3}});
    auto sys = build_system(std::move(coils), {FixedCap{c}}, {ResistorLoad{1e-3}},
                            IdealCurrentSource{0.0, 79e3});
    Stepper st(sys);
    st.mutable_state().x(sys.slots(0).v1) = 1.0;

    std::vector<double> t_samp, i_samp;
    st.add_tap(4, [&](const Stepper& s, double t) {
        t_samp.push_back(t);
        i_samp.push_back(s.probe("I_R"));
    });
    st.advance_to(12.0 / 79e3);

    sensing::EdgeList edges;
    sensing::Comparator comp(0.0, 0.0);
    for (std::size_t i = 0; i < t_samp.size(); ++i) {
        double when = 0.0;
        if (comp.push(t_samp[i], i_samp[i], &when) > 0) edges.rising.push_back(when);
    }
    REQUIRE(edges.rising.size() >= 5);
    const double f_meas = static_cast<double>(edges.rising.size() - 1) /
                          (edges.rising.back() - edges.rising.front());
    const double f_expect = 1.0 / (2.0 * kPi * std::sqrt(l * c));
    CHECK(std::abs(f_meas - f_expect) < 0.005 * f_expect);
}

TEST_CASE("driven R-L loop rises exponentially with tau = L/R") {
    const double l = 1e-3, r = 10.0, v = 1.0;
    CoupledCoilSet coils({l, r}, {});
    auto sys =
        build_system(std::move(coils), {}, {}, VoltageDrivenSource{v, 0.0, 0.0, 0.01, kPi / 2});
    SolverOptions opts;
    opts.base_step_override_s = 1e-6;
    Stepper st(sys, opts);
    const double tau = l / r;
    for (double t : {tau, 2 * tau, 5 * tau}) {
        st.advance_to(t);
        const double expect = v / r * (1.0 - std::exp(-t / tau));
        CHECK(st.state().x(0) == doctest::Approx(expect).epsilon(1e-3));
    }
}

TEST_CASE("induced EMF probes") {
    // an unreachable battery voltage keeps the bridge open: receiver current
    // stays exactly zero
    auto sys = build_system(table2_coils(), {FixedCap{50.73e-9}},
                            {RectifierBatteryLoad{1e6, 1.0}}, IdealCurrentSource{3.4, 79e3});
    SUBCASE("open receiver sees 2*pi*f*M*I peaks") {
        Stepper st(sys);
        double peak_lr = 0.0, peak_la = 0.0;
        st.add_tap(1, [&](const Stepper& s, double) {
            peak_lr = std::max(peak_lr, std::abs(s.probe("V_LR")));
            peak_la = std::max(peak_la, std::abs(s.probe("V_LA")));
        });
        st.advance_to(3.0 / 79e3);
        CHECK(peak_lr == doctest::Approx(2 * kPi * 79e3 * 15e-6 * 3.4).epsilon(1e-3));
        CHECK(peak_la == doctest::Approx(5.063).epsilon(1e-3));
        CHECK(st.state().x(sys.slots(0).current) == 0.0);
    }
    SUBCASE("zero transmitter current leaves all probes at zero") {
        auto quiet = build_system(table2_coils(), {FixedCap{50.73e-9}},
                                  {RectifierBatteryLoad{1e6, 1.0}}, IdealCurrentSource{0.0, 79e3});
        Stepper st(quiet);
        double worst = 0.0;
        st.add_tap(8, [&](const Stepper& s, double) {
            worst = std::max({worst, std::abs(s.probe("V_LR")), std::abs(s.probe("V_LA")),
                              std::abs(s.probe("I_R"))});
        });
        st.advance_to(2.0 / 79e3);
        CHECK(worst == 0.0);
    }
}

TEST_CASE("switched branch held on matches the merged fixed capacitor") {
    const std::string probes[] = {"I_R", "V_CR1"};
    auto run_switched = [&](SwitchTopology topo, bool gates_on) {
        auto sys = build_system(table2_coils(), {SwitchedCapBranch{10e-9, 44e-9, topo}},
                                {ResistorLoad{25.0}}, IdealCurrentSource{3.4, 79e3});
        GateEventSource src;
        if (gates_on)
            src = [](double t0, double) -> std::vector<GateCommand> {
                if (t0 > 0.0) return {};
                return {{0.0, 0, 0, true}, {0.0, 0, 1, true}};
            };
        return run_transient(sys, 5.0 / 79e3, probes, src);
    };
    auto run_fixed = [&](double c) {
        auto sys = build_system(table2_coils(), {FixedCap{c}}, {ResistorLoad{25.0}},
                                IdealCurrentSource{3.4, 79e3});
        return run_transient(sys, 5.0 / 79e3, probes);
    };

    SUBCASE("back-to-back pair commanded on == C1+C2") {
        auto a = run_switched(SwitchTopology::BackToBackPair, true);
        auto b = run_fixed(54e-9);
        CHECK(rel_l2_diff(a.col("I_R"), b.col("I_R")) < 1e-9);
    }
    SUBCASE("transistor-diode pair fully armed ~= C1+C2") {
        auto a = run_switched(SwitchTopology::TransistorDiodePair, true);
        auto b = run_fixed(54e-9);
        CHECK(rel_l2_diff(a.col("I_R"), b.col("I_R")) < 2e-3);
    }
    SUBCASE("transistor-diode pair unarmed with zero leakage == C1") {
        auto a = run_switched(SwitchTopology::TransistorDiodePair, false);
        auto b = run_fixed(10e-9);
        CHECK(rel_l2_diff(a.col("I_R"), b.col("I_R")) < 1e-9);
    }
}

TEST_CASE("energy accounting closes to 0.1% of injected energy per cycle") {
    auto sys = build_system(table2_coils(),
                            {SwitchedCapBranch{10e-9, 44e-9, SwitchTopology::TransistorDiodePair}},
                            {RectifierRCLoad{25.0, 10e-6}}, IdealCurrentSource{3.4, 79e3});
    Stepper st(sys);
    ctrl::GateSchedule sched(79e3, 0.25 / 79e3, 4.7e-6, SwitchTopology::TransistorDiodePair);

    struct Snap {
        double inj, diss, swl, load, stored;
    };
    std::vector<Snap> snaps;
    st.add_tap(2000, [&](const Stepper& s, double) {
        const auto& e = s.state().energy;
        double load = 0.0;
        for (double v : e.receiver_load) load += v;
        snaps.push_back({e.injected, e.dissipated, e.switching_loss, load, s.stored_energy()});
    });

    const double period = 1.0 / 79e3;
    for (int cyc = 0; cyc < 40; ++cyc) {
        const double t1 = (cyc + 1) * period;
        auto cmds = sched.commands_in(st.time(), t1, 0);
        st.advance_to(t1, cmds);
    }
    REQUIRE(snaps.size() >= 40);
    for (std::size_t i = 10; i + 1 < snaps.size(); ++i) {
        const auto& a = snaps[i];
        const auto& b = snaps[i + 1];
        const double inj = b.inj - a.inj;
        const double residual =
            inj - (b.stored - a.stored) - (b.diss - a.diss) - (b.swl - a.swl) - (b.load - a.load);
        REQUIRE(inj > 0.0);
        CHECK(std::abs(residual) < 1e-3 * inj);
    }
}

TEST_CASE("ideal-diode complementarity holds at every sample") {
    auto sys = build_system(table2_coils(),
                            {SwitchedCapBranch{10e-9, 44e-9, SwitchTopology::TransistorDiodePair}},
                            {RectifierRCLoad{25.0, 10e-6}}, IdealCurrentSource{3.4, 79e3});
    SolverOptions opts;
    Stepper st(sys, opts);
    ctrl::GateSchedule sched(79e3, 0.25 / 79e3, 4.7e-6, SwitchTopology::TransistorDiodePair);

    int checked = 0;
    st.add_tap(5, [&](const Stepper& s, double) {
        const auto& fl = s.state().flags[0];
        const double i2 = s.probe("I_R2");
        const double vsr = s.probe("V_SR");
        const double ir = s.probe("I_R");
        // generous slack: the law is enforced at step ends, taps may land
        // one sub-step later
        const double itol = 200 * opts.current_tol_a;
        const double vtol = 0.2;  // one step of capacitor slew
        switch (fl.sw) {
            case SwitchConduction::Positive:
                CHECK(i2 >= -itol);
                break;
            case SwitchConduction::Negative:
                CHECK(i2 <= itol);
                break;
            case SwitchConduction::Blocked: {
                const auto arms_pos = fl.gate_m1;
                const auto arms_neg = fl.gate_m2;
                if (arms_pos) CHECK(vsr <= vtol);
                if (arms_neg) CHECK(-vsr <= vtol);
                break;
            }
            default:
                break;
        }
        switch (fl.bridge) {
            case BridgeConduction::Positive:
                CHECK(ir >= -itol);
                break;
            case BridgeConduction::Negative:
                CHECK(ir <= itol);
                break;
            default:
                break;
        }
        ++checked;
    });
    const double period = 1.0 / 79e3;
    for (int cyc = 0; cyc < 20; ++cyc) {
        const double t1 = (cyc + 1) * period;
        st.advance_to(t1, sched.commands_in(st.time(), t1, 0));
    }
    CHECK(checked > 1000);
}

TEST_CASE("half-wave symmetry of the steady state") {
    auto run_topo = [&](SwitchTopology topo, bool gated) {
        auto sys = build_system(table2_coils(), {SwitchedCapBranch{10e-9, 44e-9, topo}},
                                {ResistorLoad{25.0}}, IdealCurrentSource{3.4, 79e3});
        GateEventSource src;
        if (gated) {
            ctrl::GateSchedule sched(79e3, 0.25 / 79e3, 4.7e-6, topo);
            src = schedule_source(sched);
        }
        const std::string probes[] = {"I_R", "V_CR2"};
        SolverOptions opts;
        opts.sample_every = 4;
        return run_transient(sys, 40.0 / 79e3, probes, src, opts);
    };

    SUBCASE("symmetric schedules give i(t + T/2) = -i(t)") {
        for (auto topo : {SwitchTopology::TransistorDiodePair, SwitchTopology::BackToBackPair}) {
            auto tr = run_topo(topo, true);
            const auto& i = tr.col("I_R");
            const std::size_t per_cycle = 500;  // 2000 / 4
            const std::size_t half = per_cycle / 2;
            const std::size_t n0 = i.size() - 6 * per_cycle;
            double num = 0.0, den = 0.0;
            for (std::size_t j = n0; j + half < i.size(); ++j) {
                num += (i[j + half] + i[j]) * (i[j + half] + i[j]);
                den += i[j] * i[j];
            }
            CHECK(std::sqrt(num / den) < 0.02);
        }
    }
    SUBCASE("single transistor held off rectifies V_CR2") {
        auto tr = run_topo(SwitchTopology::SingleTransistorWithBodyDiode, false);
        const auto& v2 = tr.col("V_CR2");
        const std::size_t tail = 6 * 500;
        double mean = 0.0, peak = 0.0;
        for (std::size_t j = v2.size() - tail; j < v2.size(); ++j) {
            mean += v2[j];
            peak = std::max(peak, std::abs(v2[j]));
        }
        mean /= static_cast<double>(tail);
        CHECK(std::abs(mean) > 0.05 * peak);
    }
}

TEST_CASE("identical runs are bit identical") {
    auto make = [&]() {
        auto sys = build_system(table2_coils(),
                                {SwitchedCapBranch{10e-9, 44e-9, SwitchTopology::TransistorDiodePair}},
                                {RectifierRCLoad{25.0, 10e-6}}, IdealCurrentSource{3.4, 79e3});
        ctrl::GateSchedule sched(79e3, 0.25 / 79e3, 4.7e-6, SwitchTopology::TransistorDiodePair);
        const std::string probes[] = {"I_R", "V_CR1", "V_CR2", "V_LA"};
        return run_transient(sys, 15.0 / 79e3, probes, schedule_source(sched));
    };
    auto a = make();
    auto b = make();
    REQUIRE(a.size() == b.size());
    for (std::size_t c = 0; c < a.cols.size(); ++c)
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (a.cols[c][i] != b.cols[c][i]) {
                REQUIRE(a.cols[c][i] == b.cols[c][i]);
            }
        }
}

TEST_CASE("steady_state_metrics on synthetic traces") {
    Trace tr;
    tr.cycle_hz = 1e3;
    tr.sample_dt = 1e-3 / 100;
    tr.names = {"I_R"};
    tr.cols.resize(1);
    SUBCASE("unit sinusoid has rms 0.7071") {
        for (int i = 0; i < 100 * 8; ++i) {
            tr.t.push_back(i * tr.sample_dt);
            tr.cols[0].push_back(std::sin(2 * kPi * 1e3 * i * tr.sample_dt));
        }
        auto m = steady_state_metrics(tr, 3);
        CHECK(m.probes.at("I_R").rms == doctest::Approx(0.70710678).epsilon(1.5e-3));
        CHECK(m.settled);
    }
    SUBCASE("growing envelope is not settled") {
        for (int i = 0; i < 100 * 8; ++i) {
            const double t = i * tr.sample_dt;
            tr.t.push_back(t);
            tr.cols[0].push_back((1.0 + 200.0 * t) * std::sin(2 * kPi * 1e3 * t));
        }
        CHECK_FALSE(steady_state_metrics(tr, 3).settled);
    }
    SUBCASE("window longer than the trace throws") {
        for (int i = 0; i < 100 * 3; ++i) {
            tr.t.push_back(i * tr.sample_dt);
            tr.cols[0].push_back(1.0);
        }
        CHECK_THROWS_AS(steady_state_metrics(tr, 4), WindowTooLong);
    }
}

TEST_CASE("fixed receiver at resonance stays sinusoidal (THD < 5%)") {
    auto sys = build_system(table2_coils(), {FixedCap{50.73e-9}}, {ResistorLoad{25.0}},
                            IdealCurrentSource{3.4, 79e3});
    const std::string probes[] = {"I_R"};
    SolverOptions opts;
    opts.sample_every = 4;
    auto tr = run_transient(sys, 30.0 / 79e3, probes, nullptr, opts);
    const auto& i = tr.col("I_R");
    const std::size_t per_cycle = 500;
    const std::size_t n0 = i.size() - 10 * per_cycle;
    auto goertzel = [&](int harmonic) {
        double re = 0.0, im = 0.0;
        for (std::size_t j = n0; j < i.size(); ++j) {
            const double ph = 2 * kPi * harmonic * static_cast<double>(j - n0) /
                              static_cast<double>(per_cycle);
            re += i[j] * std::cos(ph);
            im += i[j] * std::sin(ph);
        }
        return std::sqrt(re * re + im * im);
    };
    const double fund = goertzel(1);
    double harm = 0.0;
    for (int k = 2; k <= 5; ++k) {
        const double a = goertzel(k);
        harm += a * a;
    }
    CHECK(std::sqrt(harm) / fund < 0.05);
}

TEST_CASE("zero-amplitude source produces an all-zero trace") {
    auto sys = build_system(table2_coils(), {FixedCap{50.73e-9}}, {ResistorLoad{25.0}},
                            IdealCurrentSource{0.0, 79e3});
    const std::string probes[] = {"I_R", "V_CR1"};
    auto tr = run_transient(sys, 5.0 / 79e3, probes);
    for (const auto& c : tr.cols)
        for (double v : c) CHECK(v == 0.0);
}

TEST_CASE("reflected load scaling") {
    // transmitter compensated at the drive frequency so reflected impedance
    // dominates the primary loop
    const double c_t = 1.0 / std::pow(2 * kPi * 79e3, 2) / 150e-6;
    auto make_vd = [&](double c_fixed) {
        CoupledCoilSet coils({150e-6, 0.8}, {{80e-6, 0.43}});
        coils.set_mutual(0, 1, 15e-6);
        return build_system(std::move(coils), {FixedCap{c_fixed}}, {ResistorLoad{25.0}},
                            VoltageDrivenSource{20.0, 1.0, c_t, 79e3, 0.0});
    };
    SUBCASE("ideal current source always reports 1") {
        auto sys = build_system(table2_coils(), {FixedCap{50.73e-9}}, {ResistorLoad{25.0}},
                                IdealCurrentSource{3.4, 79e3});
        Stepper st(sys);
        st.advance_to(1e-5);
        CHECK(reflected_load_scaling(sys, st) == 1.0);
    }
    SUBCASE("resonant receiver loads the primary harder than a detuned one") {
        auto res = make_vd(50.73e-9);
        auto det = make_vd(12e-9);
        Stepper a(res), b(det);
        const double s_res = reflected_load_scaling(res, a);
        const double s_det = reflected_load_scaling(det, b);
        CHECK(s_res < s_det);
        CHECK(s_det < 1.0);
    }
    SUBCASE("a receiver that cannot conduct reflects nothing") {
        CoupledCoilSet coils({150e-6, 0.8}, {{80e-6, 0.43}});
        coils.set_mutual(0, 1, 15e-6);
        auto sys = build_system(std::move(coils), {FixedCap{50.73e-9}},
                                {RectifierBatteryLoad{1e6, 1.0}},
                                VoltageDrivenSource{20.0, 1.0, c_t, 79e3, 0.0});
        Stepper st(sys);
        CHECK(reflected_load_scaling(sys, st) == doctest::Approx(1.0));
    }
}

TEST_CASE("a grossly coarse base step trips the truncation guard") {
    auto sys = build_system(table2_coils(), {FixedCap{50.73e-9}}, {ResistorLoad{25.0}},
                            IdealCurrentSource{3.4, 79e3});
    SolverOptions opts;
    opts.step_divisor = 12;
    Stepper st(sys, opts);
    CHECK_THROWS_AS(st.advance_to(3.0 / 79e3), StepTooLarge);
}
