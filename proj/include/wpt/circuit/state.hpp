#pragma once

// Transient simulation state: the state vector, device conduction flags,
// energy accounts, and per-receiver event statistics.

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace wpt::circuit {

enum class SwitchConduction : std::uint8_t {
    Blocked = 0,
    Bidirectional = 1,  ///< commanded channel, no diode in path
    Positive = 2,       ///< diode path carrying branch current into c2
    Negative = 3,       ///< diode path carrying branch current out of c2
};

enum class BridgeConduction : std::uint8_t {
    Off = 0,
    Positive = 1,  ///< loop current > 0 pair conducting
    Negative = 2,
};

struct ReceiverFlags {
    bool gate_m1 = false;
    bool gate_m2 = false;
    SwitchConduction sw = SwitchConduction::Blocked;
    BridgeConduction bridge = BridgeConduction::Off;
};

/// Cumulative energy bookkeeping, all in joules since the run started.
struct EnergyAccounts {
    double injected = 0.0;        ///< source energy into the simulated network
    double dissipated = 0.0;      ///< resistive + diode-drop + leakage losses
    double switching_loss = 0.0;  ///< capacitor charge redistribution + current clamping
    std::vector<double> receiver_injected;  ///< per receiver, EMF power into its loop
    std::vector<double> receiver_load;      ///< per receiver, absorbed by the load model
};

/// Per-receiver waveform statistics accumulated by the stepper; resettable so
/// measurements can exclude the start-up transient.
struct ReceiverStats {
    double peak_v1 = 0.0;          ///< max |V_CR1| seen
    double peak_i2 = 0.0;          ///< max |I_R2| seen (continuous conduction)
    double spike_i2 = 0.0;         ///< max redistribution charge / step current
    double zvs_worst_v = 0.0;      ///< max |V_SR| at autonomous switch turn-ons
    int zvs_events = 0;            ///< autonomous turn-ons observed
    double conducting_time = 0.0;  ///< total switch conduction time, s
};

struct SimState {
    double t = 0.0;
    Eigen::VectorXd x;     ///< state vector (coil currents then capacitor voltages)
    Eigen::VectorXd dxdt;  ///< consistent derivatives at time t
    std::vector<ReceiverFlags> flags;
    EnergyAccounts energy;
    std::vector<ReceiverStats> stats;

    void reset_stats() {
        for (auto& s : stats) s = ReceiverStats{};
    }
};

}  // namespace wpt::circuit
