#pragma once

// Circuit element descriptions: compensation branches, loads, and sources.

#include <variant>

#include "wpt/errors.hpp"

namespace wpt::circuit {

enum class SwitchTopology {
    SingleTransistorWithBodyDiode,  ///< one MOSFET; body diode passes negative branch current
    BackToBackPair,                 ///< anti-series MOSFET pair, common-gated hard switch
    TransistorDiodePair,            ///< two MOSFET+diode branches; turn-on waits for forward bias
};

/// Gated two-capacitor compensation: c1 always in circuit, c2 switched in
/// through the topology's device pair.
struct SwitchedCapBranch {
    double c1_f = 0.0;
    double c2_f = 0.0;
    SwitchTopology topology = SwitchTopology::TransistorDiodePair;
    double leak_conductance_s = 0.0;  ///< off-state leakage across the switch
    double forward_drop_v = 0.0;      ///< drop of a conducting diode path in the switch
};

struct FixedCap {
    double c_f = 0.0;
};

using Compensation = std::variant<FixedCap, SwitchedCapBranch>;

struct ResistorLoad {
    double r_ohm = 0.0;
};

/// Four-diode bridge feeding a parallel RC tank.
struct RectifierRCLoad {
    double r_ohm = 0.0;
    double c_f = 0.0;
    double diode_drop_v = 0.0;  ///< per diode; two conduct in series
};

/// Four-diode bridge feeding a constant-voltage battery with series resistance.
struct RectifierBatteryLoad {
    double v_bat = 0.0;
    double r_series = 0.0;
    double diode_drop_v = 0.0;
};

using LoadModel = std::variant<ResistorLoad, RectifierRCLoad, RectifierBatteryLoad>;

/// Transmitter enforces i_T = amplitude * sin(2*pi*f*t + phase) regardless of load.
struct IdealCurrentSource {
    double amplitude_a = 0.0;
    double frequency_hz = 0.0;
    double phase_rad = 0.0;
};

/// Transmitter loop driven by a sinusoidal voltage source behind an internal
/// resistance, optionally with a series compensation capacitor; the
/// transmitter current becomes a simulated state and sags with reflected load.
struct VoltageDrivenSource {
    double amplitude_v = 0.0;
    double r_internal_ohm = 0.0;
    double c_series_f = 0.0;  ///< 0 = no series compensation capacitor
    double frequency_hz = 0.0;
    double phase_rad = 0.0;
};

using SourceModel = std::variant<IdealCurrentSource, VoltageDrivenSource>;

inline void validate(const SwitchedCapBranch& b) {
    if (b.c1_f <= 0.0 || b.c2_f <= 0.0)
        throw ValidationError("SwitchedCapBranch: capacitances must be positive");
    if (b.leak_conductance_s < 0.0)
        throw ValidationError("SwitchedCapBranch: leak conductance must be >= 0");
    if (b.forward_drop_v < 0.0)
        throw ValidationError("SwitchedCapBranch: forward drop must be >= 0");
}

inline void validate(const Compensation& c) {
    if (const auto* f = std::get_if<FixedCap>(&c)) {
        if (f->c_f <= 0.0) throw ValidationError("FixedCap: capacitance must be positive");
    } else {
        validate(std::get<SwitchedCapBranch>(c));
    }
}

inline void validate(const LoadModel& l) {
    if (const auto* r = std::get_if<ResistorLoad>(&l)) {
        if (r->r_ohm <= 0.0) throw ValidationError("ResistorLoad: resistance must be positive");
    } else if (const auto* rc = std::get_if<RectifierRCLoad>(&l)) {
        if (rc->r_ohm <= 0.0) throw ValidationError("RectifierRCLoad: resistance must be positive");
        if (rc->c_f < 0.0) throw ValidationError("RectifierRCLoad: capacitance must be >= 0");
        if (rc->diode_drop_v < 0.0) throw ValidationError("RectifierRCLoad: diode drop must be >= 0");
    } else {
        const auto& b = std::get<RectifierBatteryLoad>(l);
        if (b.v_bat < 0.0) throw ValidationError("RectifierBatteryLoad: v_bat must be >= 0");
        if (b.r_series <= 0.0)
            throw ValidationError("RectifierBatteryLoad: series resistance must be positive");
        if (b.diode_drop_v < 0.0)
            throw ValidationError("RectifierBatteryLoad: diode drop must be >= 0");
    }
}

inline void validate(const SourceModel& s) {
    if (const auto* ic = std::get_if<IdealCurrentSource>(&s)) {
        if (ic->amplitude_a < 0.0)
            throw ValidationError("IdealCurrentSource: amplitude must be >= 0");
        if (ic->frequency_hz <= 0.0)
            throw ValidationError("IdealCurrentSource: frequency must be positive");
    } else {
        const auto& vd = std::get<VoltageDrivenSource>(s);
        if (vd.amplitude_v < 0.0) throw ValidationError("VoltageDrivenSource: amplitude must be >= 0");
        if (vd.frequency_hz <= 0.0)
            throw ValidationError("VoltageDrivenSource: frequency must be positive");
        if (vd.r_internal_ohm < 0.0)
            throw ValidationError("VoltageDrivenSource: internal resistance must be >= 0");
        if (vd.c_series_f < 0.0)
            throw ValidationError("VoltageDrivenSource: series capacitance must be >= 0");
    }
}

}  // namespace wpt::circuit
