#pragma once

// Experiment orchestration over scenarios: full runs with artifact output,
// frequency sweeps, and the switch-topology comparison table.

#include <string>
#include <vector>

#include "wpt/scenario/scenario.hpp"

namespace wpt::scenario {

struct RunReport {
    ctrl::EnergyLedger ledger;
    std::vector<std::string> trace_files;  ///< written trace CSV paths
    std::string controller_file;           ///< controller.csv path, when written
    std::vector<ctrl::HopReport> hops;
    std::vector<ctrl::SegmentTail> tails;
    std::vector<bool> segment_settled;  ///< per segment: tail power stationary
    double final_t_on = 0.0;
    double duration_s = 0.0;
};

/// Runs the scenario end to end. When out_dir is non-empty, writes
/// ledger.json, report.json, controller.csv and trace_<probe>.csv there.
RunReport run_scenario(const Scenario& scenario, const std::string& out_dir = "");

struct SweepRow {
    double frequency_hz = 0.0;
    std::vector<double> receiver_power_w;
    std::vector<double> receiver_ratio;  ///< normalized by the row maximum
};

struct SweepResult {
    std::vector<std::string> receiver_names;
    std::vector<SweepRow> rows;
};

/// One settled steady state per grid frequency; rows are computed from the
/// per-segment measurement tail. Grid points run in parallel.
SweepResult sweep_frequency(const Scenario& scenario, const std::vector<double>& grid_hz,
                            const std::string& out_csv = "");

struct TopologyRow {
    circuit::SwitchTopology topology;
    double rms_i_r_a = 0.0;      ///< steady loop-current RMS, well-timed schedule
    double mean_v_cr2_v = 0.0;   ///< cycle-mean of V_CR2 (gate-off run for the
                                 ///< single transistor, standard otherwise)
    double spike_metric = 0.0;   ///< worst branch current / steady peak, after a
                                 ///< +5% delayed second turn-on for back-to-back
    double zvs_metric = 0.0;     ///< worst |V_SR| at autonomous turn-on / peak |V_CR1|
    double peak_v_cr2_v = 0.0;
};

/// Quantifies the switch-topology trade-offs on the scenario's switched
/// receiver: body-diode asymmetry, mistimed hard-switching current loop, and
/// zero-voltage turn-on of the transistor+diode pair.
std::vector<TopologyRow> compare_topologies(const Scenario& scenario,
                                            const std::vector<circuit::SwitchTopology>& topologies,
                                            const std::string& out_csv = "");

std::string topology_name(circuit::SwitchTopology topo);

/// Serializes the ledger exactly as ledger.json (stable bytes for a fixed
/// scenario and seed).
std::string ledger_json(const ctrl::EnergyLedger& ledger);
std::string report_json(const RunReport& report);

}  // namespace wpt::scenario
