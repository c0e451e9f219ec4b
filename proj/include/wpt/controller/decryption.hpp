#pragma once

// The full attack loop: detect the drive frequency on the auxiliary coil,
// coarse-tune t_on analytically, fine-tune it by hill climbing on measured
// receiver-current RMS, then track and re-enter detection after a hop.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "wpt/circuit/trace.hpp"
#include "wpt/controller/schedule.hpp"
#include "wpt/controller/tuner.hpp"

namespace wpt::ctrl {

struct HopSegment {
    double t_start = 0.0;
    double frequency_hz = 0.0;
    double amplitude_a = 0.0;
};

struct RunOptions {
    circuit::SolverOptions solver{};
    double control_quantum_s = 5e-6;   ///< controller dispatch period
    int detector_sample_every = 8;     ///< V_LA sampling cadence, base steps
    double noise_amplitude_v = 0.0;    ///< uniform detector noise injected on V_LA
    std::uint64_t seed = 1;
    sensing::StreamingDetector::Options detector{};
    TunerOptions tuner{};
    int measure_cycles = 5;            ///< objective RMS window
    double settle_rel_tol = 0.005;     ///< cycle-to-cycle RMS drift to call settled
    int settle_cycles_max = 60;        ///< give up waiting and measure anyway
    double hop_rel_threshold = 0.05;   ///< frequency change that re-enters Detect
    double tail_fraction = 0.25;       ///< per-segment steady-state measurement tail
    bool coarse_only = false;          ///< skip the Fine episode
    double v_ref_step_frac = 0.10;     ///< voltage mode: step as fraction of peak
    double v_ref_term_frac = 0.01;     ///< voltage mode: termination step fraction
    std::vector<std::string> trace_probes;  ///< sampled into DecryptionResult::trace_data
    int trace_sample_every = 64;            ///< base steps between trace samples
};

struct EnergyLedger {
    struct Entry {
        std::string name;
        double energy_j = 0.0;
        double power_w = 0.0;
        double ratio = 0.0;  ///< power normalized by the maximum receiver
    };
    std::vector<Entry> receivers;
};

struct ControllerTraceRow {
    double t = 0.0;
    Mode mode = Mode::Detect;
    double f_hat = 0.0;
    double t_on = 0.0;
    double rms_a = 0.0;
};

struct HopReport {
    double t_hop = 0.0;
    double frequency_hz = 0.0;
    std::optional<double> t_detected;        ///< first estimate after the hop
    std::optional<double> t_coarse_applied;  ///< coarse schedule install time
    std::optional<double> t_track_entered;   ///< fine tuning finished
    double coarse_t_on = 0.0;
    double final_t_on = 0.0;
    bool coarse_clamped = false;
};

struct SegmentTail {
    double t0 = 0.0;
    double t1 = 0.0;
    std::vector<double> receiver_power_w;  ///< average load power over the tail
    std::vector<double> receiver_rms_a;    ///< loop-current RMS over the tail
    std::vector<double> receiver_power_half1_w;  ///< first half of the tail
    std::vector<double> receiver_power_half2_w;  ///< second half of the tail
};

struct DecryptionResult {
    EnergyLedger ledger;
    std::vector<ControllerTraceRow> trace;
    std::vector<HopReport> hops;
    std::vector<SegmentTail> tails;
    circuit::Trace trace_data;  ///< probe samples when trace_probes was set
    double final_t_on = 0.0;
    double duration_s = 0.0;
};

/// Runs the attack controller on `hacked_receiver` (a switched-capacitor
/// receiver of `system`) across the hop schedule, until `duration_s`.
/// Receiver names label the ledger; defaults to receiver_<k>.
DecryptionResult run_decryption(const circuit::SimSystem& system, int hacked_receiver,
                                std::vector<HopSegment> hops, double duration_s,
                                Strategy strategy = Strategy::TimeCounting,
                                RunOptions opts = {},
                                std::vector<std::string> receiver_names = {});

/// Ledger from a finished stepper run (no controller required).
EnergyLedger ledger_from_state(const circuit::SimSystem& system, const circuit::SimState& state,
                               double duration_s, const std::vector<std::string>& names = {});

}  // namespace wpt::ctrl
