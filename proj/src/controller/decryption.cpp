#include "wpt/controller/decryption.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <random>

#include "wpt/swcap.hpp"

namespace wpt::ctrl {

using circuit::BridgeConduction;
using circuit::SimSystem;
using circuit::Stepper;
using circuit::SwitchConduction;

EnergyLedger ledger_from_state(const SimSystem& system, const circuit::SimState& state,
                               double duration_s, const std::vector<std::string>& names) {
    EnergyLedger ledger;
    const auto n = static_cast<std::size_t>(system.receiver_count());
    double max_power = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        EnergyLedger::Entry e;
        e.name = k < names.size() ? names[k] : "receiver_" + std::to_string(k);
        e.energy_j = state.energy.receiver_load[k];
        e.power_w = duration_s > 0.0 ? e.energy_j / duration_s : 0.0;
        max_power = std::max(max_power, e.power_w);
        ledger.receivers.push_back(std::move(e));
    }
    for (auto& e : ledger.receivers)
        e.ratio = max_power > 0.0 ? e.power_w / max_power : 0.0;
    return ledger;
}

namespace {

/// Sliding sample window over the controlled receiver's loop current.
class RmsWindow {
public:
    void push(double t, double v, double keep_s) {
        buf_.emplace_back(t, v);
        while (!buf_.empty() && buf_.front().first < t - keep_s) buf_.pop_front();
    }
    double rms_over(double t0, double t1) const {
        double acc = 0.0;
        std::size_t n = 0;
        for (const auto& [t, v] : buf_) {
            if (t < t0 || t > t1) continue;
            acc += v * v;
            ++n;
        }
        return n > 0 ? std::sqrt(acc / static_cast<double>(n)) : 0.0;
    }
    bool spans(double t0) const { return !buf_.empty() && buf_.front().first <= t0; }

private:
    std::deque<std::pair<double, double>> buf_;
};

struct TailAccumulator {
    double t_begin = -1.0;
    double t_mid = -1.0;
    std::vector<double> energy0;
    std::vector<double> energy_mid;
    std::vector<double> i2_int;  // integral of i^2 per receiver over the tail
    double t_prev = 0.0;
};

}  // namespace

DecryptionResult run_decryption(const SimSystem& system, int hacked_receiver,
                                std::vector<HopSegment> hops, double duration_s,
                                Strategy strategy, RunOptions opts,
                                std::vector<std::string> receiver_names) {
    if (hacked_receiver < 0 || hacked_receiver >= system.receiver_count())
        throw DimensionMismatch("run_decryption: bad receiver index");
    const auto& slots = system.slots(hacked_receiver);
    if (!slots.switched)
        throw ValidationError("run_decryption: controlled receiver has a fixed capacitor");
    const auto& branch = std::get<circuit::SwitchedCapBranch>(system.compensation(hacked_receiver));
    const double l_r = system.coils().coil(system.coils().receiver_index(hacked_receiver)).l_h;
    const auto design = swcap::CompensationDesign::from_lc(l_r, branch.c1_f, branch.c2_f);

    Stepper stepper(system, opts.solver);
    if (hops.empty()) throw ValidationError("run_decryption: empty hop schedule");
    std::vector<circuit::SourceSegment> program;
    program.reserve(hops.size());
    for (const auto& h : hops) program.push_back({h.t_start, h.frequency_hz, h.amplitude_a, 0.0});
    stepper.set_program(program);

    DecryptionResult result;
    result.duration_s = duration_s;
    result.hops.resize(hops.size());
    for (std::size_t i = 0; i < hops.size(); ++i) {
        result.hops[i].t_hop = hops[i].t_start;
        result.hops[i].frequency_hz = hops[i].frequency_hz;
    }

    const bool time_mode = strategy == Strategy::TimeCounting;
    sensing::StreamingDetector detector(opts.detector);
    std::mt19937_64 rng(opts.seed);
    std::uniform_real_distribution<double> noise(-opts.noise_amplitude_v,
                                                 opts.noise_amplitude_v);

    RmsWindow rms_window;
    const auto n_rx = static_cast<std::size_t>(system.receiver_count());
    std::vector<double> i2_acc(n_rx, 0.0);
    double last_tap_t = 0.0;
    bool first_tap = true;

    auto vla_id = system.has_auxiliary() ? stepper.resolve_probe("V_LA") : Stepper::ProbeId{};
    if (time_mode && !system.has_auxiliary())
        throw ValidationError("run_decryption: time-counting strategy needs the auxiliary coil");

    if (!opts.trace_probes.empty()) {
        result.trace_data.cycle_hz = hops.front().frequency_hz;
        result.trace_data.sample_dt =
            opts.trace_sample_every / (hops.front().frequency_hz * opts.solver.step_divisor);
        result.trace_data.names = opts.trace_probes;
        result.trace_data.cols.resize(opts.trace_probes.size());
        std::vector<Stepper::ProbeId> ids;
        for (const auto& n : opts.trace_probes) ids.push_back(stepper.resolve_probe(n));
        stepper.add_tap(opts.trace_sample_every, [&result, ids](const Stepper& s, double t) {
            result.trace_data.t.push_back(t);
            for (std::size_t i = 0; i < ids.size(); ++i)
                result.trace_data.cols[i].push_back(s.probe(ids[i]));
        });
    }

    stepper.add_tap(opts.detector_sample_every, [&](const Stepper& s, double t) {
        const double dt = first_tap ? 0.0 : t - last_tap_t;
        first_tap = false;
        last_tap_t = t;
        if (time_mode) {
            const double v = s.probe(vla_id) +
                             (opts.noise_amplitude_v > 0.0 ? noise(rng) : 0.0);
            detector.push(t, v);
        }
        const double keep = 2.5 * (opts.settle_cycles_max + opts.measure_cycles) /
                            std::max(1e3, hops.front().frequency_hz);
        rms_window.push(t, s.state().x(slots.current), keep);
        for (std::size_t k = 0; k < n_rx; ++k) {
            const double ik = s.state().x(system.slots(static_cast<int>(k)).current);
            i2_acc[k] += ik * ik * dt;
        }
    });

    // per-segment steady-state tails
    std::vector<SegmentTail> tails(hops.size());
    std::vector<TailAccumulator> tacc(hops.size());

    // controller state
    Mode mode = Mode::Detect;
    int last_generation = 0;
    sensing::DetectorEstimate active_estimate{};
    ControllerState tuner{};
    GateSchedule schedule;
    bool have_schedule = false;
    double t_changed = 0.0;
    double coarse_t_on = 0.0;
    double last_rms = 0.0;
    double last_track_row = 0.0;
    // voltage mode
    double observe_until = 0.0;
    double observed_peak = 0.0;
    double conduct_time_mark = 0.0;
    bool v_gate_installed = false;

    auto emit = [&](double t) {
        result.trace.push_back({t, mode, active_estimate.f_hat,
                                time_mode ? (have_schedule ? schedule.t_on() : 0.0) : tuner.v_ref,
                                last_rms});
    };
    auto segment_of = [&](double t) {
        std::size_t idx = 0;
        for (std::size_t i = 1; i < hops.size(); ++i)
            if (hops[i].t_start <= t + 1e-15) idx = i;
        return idx;
    };
    auto install_schedule = [&](double t_on) {
        schedule = plan_gate_schedule(active_estimate, t_on, branch.topology);
        have_schedule = true;
    };
    auto period = [&]() {
        return active_estimate.f_hat > 0.0 ? 1.0 / active_estimate.f_hat
                                           : 1.0 / hops.front().frequency_hz;
    };
    auto settle_window = [&]() {
        return time_mode ? period() : 40e-6;
    };
    auto measure_window = [&]() {
        return time_mode ? opts.measure_cycles * period() : 100e-6;
    };
    auto settled_or_timeout = [&](double t) {
        const double w = settle_window();
        if (t - t_changed < 2.0 * w) return false;
        if (t - t_changed > opts.settle_cycles_max * w) return true;
        const double a = rms_window.rms_over(t - w, t);
        const double b = rms_window.rms_over(t - 2.0 * w, t - w);
        const double scale = std::max({std::abs(a), std::abs(b), 1e-9});
        return std::abs(a - b) < opts.settle_rel_tol * scale;
    };
    auto measure = [&](double t) {
        // never average across the last schedule change
        const double t0 = std::max(t_changed, t - measure_window());
        last_rms = rms_window.rms_over(t0, t);
        return last_rms;
    };
    auto enter_detect = [&](double t) {
        mode = Mode::Detect;
        t_changed = t;
        if (!time_mode) {
            stepper.mutable_state().reset_stats();
            observe_until = t + 150e-6;
            stepper.set_voltage_gate(hacked_receiver, false, 0.0);
            v_gate_installed = false;
        }
        emit(t);
    };

    enter_detect(0.0);

    const double quantum = opts.control_quantum_s;
    double t = 0.0;
    while (t < duration_s - 1e-15) {
        const double t_next = std::min(duration_s, t + quantum);
        std::vector<circuit::GateCommand> cmds;
        if (time_mode && have_schedule) cmds = schedule.commands_in(t, t_next, hacked_receiver);
        stepper.advance_to(t_next, cmds);
        t = t_next;

        // steady-state tail bookkeeping
        {
            const std::size_t seg = segment_of(t);
            const double seg_end =
                seg + 1 < hops.size() ? hops[seg + 1].t_start : duration_s;
            const double tail_t0 =
                seg_end - opts.tail_fraction * (seg_end - hops[seg].t_start);
            auto& ta = tacc[seg];
            if (t >= tail_t0 && ta.t_begin < 0.0) {
                ta.t_begin = t;
                ta.t_prev = t;
                ta.energy0 = stepper.state().energy.receiver_load;
                ta.i2_int = i2_acc;
            }
            if (ta.t_begin >= 0.0 && ta.t_mid < 0.0 &&
                t >= 0.5 * (ta.t_begin + seg_end)) {
                ta.t_mid = t;
                ta.energy_mid = stepper.state().energy.receiver_load;
            }
            if (ta.t_begin >= 0.0) {
                tails[seg].t0 = ta.t_begin;
                tails[seg].t1 = t;
                const double span = t - ta.t_begin;
                if (span > 0.0) {
                    tails[seg].receiver_power_w.assign(n_rx, 0.0);
                    tails[seg].receiver_rms_a.assign(n_rx, 0.0);
                    for (std::size_t k = 0; k < n_rx; ++k) {
                        tails[seg].receiver_power_w[k] =
                            (stepper.state().energy.receiver_load[k] - ta.energy0[k]) / span;
                        tails[seg].receiver_rms_a[k] =
                            std::sqrt(std::max(0.0, (i2_acc[k] - ta.i2_int[k]) / span));
                    }
                }
                if (ta.t_mid > ta.t_begin && t > ta.t_mid) {
                    tails[seg].receiver_power_half1_w.assign(n_rx, 0.0);
                    tails[seg].receiver_power_half2_w.assign(n_rx, 0.0);
                    for (std::size_t k = 0; k < n_rx; ++k) {
                        tails[seg].receiver_power_half1_w[k] =
                            (ta.energy_mid[k] - ta.energy0[k]) / (ta.t_mid - ta.t_begin);
                        tails[seg].receiver_power_half2_w[k] =
                            (stepper.state().energy.receiver_load[k] - ta.energy_mid[k]) /
                            (t - ta.t_mid);
                    }
                }
            }
        }

        if (time_mode) {
            if (detector.generation() != last_generation) {
                last_generation = detector.generation();
                if (mode != Mode::Detect) enter_detect(t);
            }
            // re-arm the schedule clock from the newest zero-phase reference;
            // without this the estimate's small frequency bias slips the
            // windows off the current peaks within milliseconds
            if (mode != Mode::Detect && have_schedule && detector.has_estimate()) {
                const auto est = detector.estimate();
                if (est.phase_ref != active_estimate.phase_ref) {
                    active_estimate = est;
                    install_schedule(schedule.t_on());
                }
            }
            switch (mode) {
                case Mode::Detect: {
                    if (!detector.has_estimate()) break;
                    active_estimate = detector.estimate();
                    const std::size_t seg = segment_of(t);
                    auto& rep = result.hops[seg];
                    if (!rep.t_detected) rep.t_detected = t;
                    bool clamped = false;
                    coarse_t_on = coarse_tune(active_estimate, design, &clamped);
                    install_schedule(coarse_t_on);
                    if (!rep.t_coarse_applied) {
                        rep.t_coarse_applied = t;
                        rep.coarse_t_on = coarse_t_on;
                        rep.coarse_clamped = clamped;
                    }
                    mode = opts.coarse_only ? Mode::Track : Mode::Coarse;
                    t_changed = t;
                    emit(t);
                    break;
                }
                case Mode::Coarse: {
                    if (!settled_or_timeout(t)) break;
                    const double rms = measure(t);
                    tuner = start_fine(active_estimate, coarse_t_on, rms,
                                       Strategy::TimeCounting, opts.tuner);
                    install_schedule(tuner.t_on);
                    mode = Mode::Fine;
                    t_changed = t;
                    emit(t);
                    break;
                }
                case Mode::Fine: {
                    if (!settled_or_timeout(t)) break;
                    const double rms = measure(t);
                    tuner = fine_tune_step(tuner, rms);
                    install_schedule(tuner.t_on);
                    t_changed = t;
                    if (tuner.mode == Mode::Track) {
                        mode = Mode::Track;
                        auto& rep = result.hops[segment_of(t)];
                        if (!rep.t_track_entered) {
                            rep.t_track_entered = t;
                            rep.final_t_on = tuner.t_on;
                        }
                    }
                    emit(t);
                    break;
                }
                case Mode::Track: {
                    if (t - last_track_row > 250.0 * quantum) {
                        measure(t);
                        emit(t);
                        last_track_row = t;
                    }
                    break;
                }
            }
        } else {
            // voltage-comparison strategy
            switch (mode) {
                case Mode::Detect: {
                    if (t < observe_until) break;
                    observed_peak =
                        stepper.state().stats[static_cast<std::size_t>(hacked_receiver)].peak_v1;
                    if (observed_peak <= 1e-9) {
                        observe_until = t + 150e-6;  // transmitter silent, keep watching
                        break;
                    }
                    tuner = ControllerState{};
                    tuner.mode = Mode::Fine;
                    tuner.strategy = Strategy::VoltageComparison;
                    tuner.v_ref = 0.3 * observed_peak;
                    tuner.step = opts.v_ref_step_frac * observed_peak;
                    tuner.direction = +1;
                    tuner.best_rms = 0.0;
                    tuner.best_t_on = tuner.v_ref;  // best_t_on doubles as best v_ref
                    stepper.set_voltage_gate(hacked_receiver, true, tuner.v_ref);
                    v_gate_installed = true;
                    conduct_time_mark =
                        stepper.state().stats[static_cast<std::size_t>(hacked_receiver)]
                            .conducting_time;
                    mode = Mode::Fine;
                    t_changed = t;
                    emit(t);
                    break;
                }
                case Mode::Coarse:
                    break;  // unused in voltage mode
                case Mode::Fine: {
                    if (!settled_or_timeout(t)) break;
                    const double rms = measure(t);
                    const auto& st =
                        stepper.state().stats[static_cast<std::size_t>(hacked_receiver)];
                    const double duty =
                        (st.conducting_time - conduct_time_mark) / (t - t_changed);
                    conduct_time_mark = st.conducting_time;
                    if (duty > 0.999 && tuner.v_ref > st.peak_v1) {
                        // threshold above the capacitor peak: the switch never
                        // opens; start over from zero
                        tuner.v_ref = 0.0;
                        stepper.set_voltage_gate(hacked_receiver, true, 0.0);
                        enter_detect(t);
                        break;
                    }
                    if (rms > tuner.best_rms) {
                        tuner.best_rms = rms;
                        tuner.best_t_on = tuner.v_ref;
                    } else {
                        tuner.v_ref = tuner.best_t_on;
                        tuner.direction = -tuner.direction;
                        tuner.step *= 0.5;
                    }
                    if (tuner.step < opts.v_ref_term_frac * observed_peak) {
                        tuner.v_ref = tuner.best_t_on;
                        mode = Mode::Track;
                    } else {
                        tuner.v_ref = std::clamp(tuner.v_ref + tuner.direction * tuner.step,
                                                 0.0, 2.0 * observed_peak);
                    }
                    stepper.set_voltage_gate(hacked_receiver, true, tuner.v_ref);
                    t_changed = t;
                    if (mode == Mode::Track) {
                        auto& rep = result.hops[segment_of(t)];
                        if (!rep.t_track_entered) {
                            rep.t_track_entered = t;
                            rep.final_t_on = tuner.v_ref;
                        }
                    }
                    emit(t);
                    break;
                }
                case Mode::Track: {
                    if (t - last_track_row > 250.0 * quantum) {
                        measure(t);
                        emit(t);
                        last_track_row = t;
                    }
                    break;
                }
            }
        }
    }
    (void)v_gate_installed;

    result.tails = std::move(tails);
    result.final_t_on = time_mode ? (have_schedule ? schedule.t_on() : 0.0) : tuner.v_ref;
    result.ledger = ledger_from_state(system, stepper.state(), duration_s, receiver_names);
    return result;
}

}  // namespace wpt::ctrl
