#pragma once

// Gate scheduling for the switched-capacitor branch: c2 conducts for t_on
// twice per drive period, in windows centered on the receiver-current peaks.
// The zero-phase reference is the upward zero crossing of V_LA, which leads
// the nearest current peak by a quarter period.

#include <vector>

#include "wpt/circuit/elements.hpp"
#include "wpt/circuit/stepper.hpp"
#include "wpt/sensing.hpp"

namespace wpt::ctrl {

struct GateEvent {
    double t = 0.0;
    int device = 0;  ///< 0 = M1, 1 = M2
    bool on = false;
};

/// Periodic gate program derived from (f_hat, phase_ref, t_on, topology).
class GateSchedule {
public:
    GateSchedule() = default;
    GateSchedule(double f_hz, double anchor_s, double t_on_s, circuit::SwitchTopology topology);

    double period() const { return period_; }
    double t_on() const { return t_on_; }
    /// Time of a conduction-window center (current peak); windows repeat
    /// every half period.
    double anchor() const { return anchor_; }
    circuit::SwitchTopology topology() const { return topology_; }

    /// The commanded transitions of one period starting at the anchor's
    /// window; times are offsets from that window's center.
    const std::vector<GateEvent>& one_period() const { return template_; }

    /// All commands with t in [t0, t1), tiled over the period, as simulator
    /// commands for `receiver`.
    std::vector<circuit::GateCommand> commands_in(double t0, double t1, int receiver) const;

    /// Shift one event of each period by `delay` seconds: the turn-on at the
    /// start of the window `which` (0 or 1). Used to provoke the mistimed
    /// hard-switching current loop between the capacitors.
    void delay_turn_on(int which, double delay);

    bool always_on() const { return always_on_; }

private:
    double period_ = 0.0;
    double anchor_ = 0.0;
    double t_on_ = 0.0;
    circuit::SwitchTopology topology_ = circuit::SwitchTopology::TransistorDiodePair;
    bool always_on_ = false;
    std::vector<GateEvent> template_;  ///< offsets relative to anchor
};

/// Builds the schedule from a detector estimate: window centers fall at
/// phase_ref + T/4 + k*T/2. Throws DutyOutOfRange when t_on > T/2.
GateSchedule plan_gate_schedule(const sensing::DetectorEstimate& estimate, double t_on,
                                circuit::SwitchTopology topology);

}  // namespace wpt::ctrl
