#pragma once

// Sampled probe time series, transient-run drivers, and steady-state metrics.

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "wpt/circuit/stepper.hpp"

namespace wpt::circuit {

struct Trace {
    double sample_dt = 0.0;  ///< nominal sample spacing, s
    double cycle_hz = 0.0;   ///< drive frequency the samples belong to
    std::vector<std::string> names;
    std::vector<double> t;
    std::vector<std::vector<double>> cols;  ///< one column per probe

    std::size_t size() const { return t.size(); }
    const std::vector<double>& col(const std::string& name) const;
    /// Samples with t in [t0, t1).
    Trace slice(double t0, double t1) const;
};

/// Polled for gate commands in [t0, t1); may return an empty list.
using GateEventSource = std::function<std::vector<GateCommand>(double t0, double t1)>;

/// Runs a fresh transient of `duration` seconds sampling the named probes.
/// Deterministic for identical inputs.
Trace run_transient(const SimSystem& system, double duration,
                    std::span<const std::string> probes, GateEventSource gate_source = nullptr,
                    SolverOptions opts = {}, std::vector<SourceSegment> program = {});

struct ProbeMetrics {
    double rms = 0.0;
    double peak = 0.0;
};

struct SteadyStateMetrics {
    std::map<std::string, ProbeMetrics> probes;
    double load_energy_per_cycle_j = 0.0;  ///< from P_L columns, if present
    bool settled = false;
};

/// Metrics over the trailing `window_cycles` cycles of the trace; `settled`
/// requires every probe's cycle-to-cycle RMS drift below rel_tol across the
/// window. Throws WindowTooLong when the trace spans < 2*window cycles.
SteadyStateMetrics steady_state_metrics(const Trace& trace, int window_cycles,
                                        double rel_tol = 0.01);

/// Instantaneous transmitter-current scaling implied by the impedance every
/// receiver currently reflects into the primary; 1.0 for an ideal current
/// source, which enforces i_T regardless of loading.
double reflected_load_scaling(const SimSystem& system, const Stepper& stepper);

}  // namespace wpt::circuit
