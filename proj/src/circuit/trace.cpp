#include "wpt/circuit/trace.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

namespace wpt::circuit {

const std::vector<double>& Trace::col(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return cols[i];
    throw ValidationError("trace has no column " + name);
}

Trace Trace::slice(double t0, double t1) const {
    Trace out;
    out.sample_dt = sample_dt;
    out.cycle_hz = cycle_hz;
    out.names = names;
    out.cols.resize(cols.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (t[i] < t0 || t[i] >= t1) continue;
        out.t.push_back(t[i]);
        for (std::size_t c = 0; c < cols.size(); ++c) out.cols[c].push_back(cols[c][i]);
    }
    return out;
}

Trace run_transient(const SimSystem& system, double duration,
                    std::span<const std::string> probes, GateEventSource gate_source,
                    SolverOptions opts, std::vector<SourceSegment> program) {
    if (duration < 0.0) throw ValidationError("run_transient: duration must be >= 0");
    Stepper stepper(system, opts);
    if (!program.empty()) stepper.set_program(std::move(program));

    Trace trace;
    trace.cycle_hz = stepper.program().front().frequency_hz;
    trace.sample_dt = stepper.base_step() * opts.sample_every;
    trace.names.assign(probes.begin(), probes.end());
    trace.cols.resize(probes.size());

    std::vector<Stepper::ProbeId> ids;
    ids.reserve(probes.size());
    for (const auto& name : probes) ids.push_back(stepper.resolve_probe(name));

    stepper.add_tap(opts.sample_every, [&](const Stepper& s, double t) {
        trace.t.push_back(t);
        for (std::size_t i = 0; i < ids.size(); ++i)
            trace.cols[i].push_back(s.probe(ids[i]));
    });

    if (duration == 0.0) return trace;

    // advance in chunks, polling the gate source ahead of each chunk
    const double chunk = std::max(stepper.base_step() * opts.sample_every, stepper.base_step());
    while (stepper.time() < duration - 1e-15) {
        const double t0 = stepper.time();
        const double t1 = std::min(duration, t0 + 16.0 * chunk);
        std::vector<GateCommand> cmds;
        if (gate_source) {
            cmds = gate_source(t0, t1);
            for (const auto& c : cmds)
                if (c.t < t0 - 1e-12 || c.t > t1 + 1e-12)
                    throw ValidationError("gate source returned a command outside its window");
        }
        stepper.advance_to(t1, cmds);
    }
    return trace;
}

SteadyStateMetrics steady_state_metrics(const Trace& trace, int window_cycles, double rel_tol) {
    if (window_cycles < 1) throw ValidationError("steady_state_metrics: window must be >= 1");
    if (trace.cycle_hz <= 0.0 || trace.sample_dt <= 0.0)
        throw ValidationError("steady_state_metrics: trace lacks timing metadata");
    const double cycle_s = 1.0 / trace.cycle_hz;
    const auto per_cycle =
        static_cast<std::size_t>(std::llround(cycle_s / trace.sample_dt));
    if (per_cycle < 4) throw ValidationError("steady_state_metrics: too few samples per cycle");
    const auto need = per_cycle * static_cast<std::size_t>(2 * window_cycles);
    if (trace.size() < need)
        throw WindowTooLong("steady_state_metrics: trace spans fewer than 2*window cycles");

    SteadyStateMetrics out;
    const std::size_t n = trace.size();
    const std::size_t w = per_cycle * static_cast<std::size_t>(window_cycles);

    out.settled = true;
    for (std::size_t c = 0; c < trace.names.size(); ++c) {
        const auto& col = trace.cols[c];
        ProbeMetrics pm;
        double acc = 0.0;
        for (std::size_t i = n - w; i < n; ++i) {
            acc += col[i] * col[i];
            pm.peak = std::max(pm.peak, std::abs(col[i]));
        }
        pm.rms = std::sqrt(acc / static_cast<double>(w));
        out.probes[trace.names[c]] = pm;

        // cycle-to-cycle RMS drift across the trailing 2*window cycles
        double prev_rms = -1.0;
        for (int cyc = 2 * window_cycles; cyc >= 1; --cyc) {
            const std::size_t hi = n - per_cycle * static_cast<std::size_t>(cyc - 1);
            const std::size_t lo = hi - per_cycle;
            double a = 0.0;
            for (std::size_t i = lo; i < hi; ++i) a += col[i] * col[i];
            const double rms = std::sqrt(a / static_cast<double>(per_cycle));
            if (prev_rms >= 0.0) {
                const double scale = std::max(std::abs(prev_rms), std::abs(pm.rms));
                if (scale > 1e-12 && std::abs(rms - prev_rms) > rel_tol * scale)
                    out.settled = false;
            }
            prev_rms = rms;
        }

        if (trace.names[c].rfind("P_L", 0) == 0) {
            double e = 0.0;
            for (std::size_t i = n - w; i < n; ++i) e += trace.cols[c][i];
            out.load_energy_per_cycle_j =
                e * trace.sample_dt / static_cast<double>(window_cycles);
        }
    }
    return out;
}

double reflected_load_scaling(const SimSystem& system, const Stepper& stepper) {
    if (!system.voltage_driven()) return 1.0;
    const auto& vd = std::get<VoltageDrivenSource>(system.source());
    const auto& seg = stepper.segment_at(stepper.time());
    const double w = 2.0 * std::numbers::pi * seg.frequency_hz;
    const auto& coils = system.coils();
    const auto& tx_coil = coils.coil(coils.transmitter_index());

    std::complex<double> z_open(vd.r_internal_ohm + tx_coil.r_ohm, w * tx_coil.l_h);
    if (vd.c_series_f > 0.0) z_open -= std::complex<double>(0.0, 1.0 / (w * vd.c_series_f));

    std::complex<double> z_total = z_open;
    for (int k = 0; k < system.receiver_count(); ++k) {
        const auto& s = system.slots(k);
        const auto& fl = stepper.state().flags[static_cast<std::size_t>(k)];
        if (s.has_bridge && fl.bridge == BridgeConduction::Off) continue;  // open loop

        const auto& coil = coils.coil(coils.receiver_index(k));
        double c_eff = 0.0;
        if (s.switched) {
            const auto& br = std::get<SwitchedCapBranch>(system.compensation(k));
            c_eff = fl.sw != SwitchConduction::Blocked ? br.c1_f + br.c2_f : br.c1_f;
        } else {
            c_eff = std::get<FixedCap>(system.compensation(k)).c_f;
        }
        double r_load = 0.0;
        const auto& load = system.load(k);
        if (const auto* r = std::get_if<ResistorLoad>(&load))
            r_load = r->r_ohm;
        else if (const auto* rc = std::get_if<RectifierRCLoad>(&load))
            // fundamental-equivalent resistance of a bridge + RC tank
            r_load = 8.0 / (std::numbers::pi * std::numbers::pi) * rc->r_ohm;
        else
            r_load = std::get<RectifierBatteryLoad>(load).r_series;

        const std::complex<double> z_k(coil.r_ohm + r_load, w * coil.l_h - 1.0 / (w * c_eff));
        const double m = coils.mutual(coils.transmitter_index(), coils.receiver_index(k));
        z_total += (w * m) * (w * m) / z_k;
    }
    return std::abs(z_open) / std::abs(z_total);
}

}  // namespace wpt::circuit
