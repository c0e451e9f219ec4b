#pragma once

// Closed-form analytics for the time-division switched-capacitor compensation:
// equivalent capacitance of the gated C1/C2 pair, the switch-on time that
// retunes the receiver to a given drive frequency, the reachable frequency
// range, and capacitance selection with an aging margin.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "wpt/errors.hpp"

namespace wpt::swcap {

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Capacitance that makes an inductor l resonate at f: 1 / ((2*pi*f)^2 * l).
inline double resonant_capacitance(double f_hz, double l_h) {
    if (f_hz <= 0.0 || l_h <= 0.0)
        throw ValidationError("resonant_capacitance: f and l must be positive");
    const double w = kTwoPi * f_hz;
    return 1.0 / (w * w * l_h);
}

/// Reachable resonance span (f_lo, f_hi) of the switched pair:
/// f_lo resonates l with c1+c2, f_hi with c1 alone.
inline std::pair<double, double> hacking_frequency_range(double l_h, double c1_f, double c2_f) {
    if (l_h <= 0.0 || c1_f <= 0.0 || c2_f <= 0.0)
        throw ValidationError("hacking_frequency_range: l, c1, c2 must be positive");
    const double f_lo = 1.0 / (kTwoPi * std::sqrt(l_h * (c1_f + c2_f)));
    const double f_hi = 1.0 / (kTwoPi * std::sqrt(l_h * c1_f));
    return {f_lo, f_hi};
}

/// Effective cycle-averaged capacitance of the pair when c2 conducts for t_on
/// per half-cycle: harmonic interpolation between c1 (t_on = 0) and c1+c2
/// (t_on = T/2), weighted by sin(pi*f*t_on).
inline double equivalent_capacitance(double f_hz, double t_on_s, double c1_f, double c2_f) {
    if (f_hz <= 0.0 || c1_f <= 0.0 || c2_f <= 0.0)
        throw ValidationError("equivalent_capacitance: f, c1, c2 must be positive");
    const double half_period = 0.5 / f_hz;
    // tolerate float dust at the boundaries
    const double slack = 1e-12 * half_period;
    if (t_on_s < -slack || t_on_s > half_period + slack)
        throw DutyOutOfRange("equivalent_capacitance: t_on outside [0, T/2]");
    const double t_on = std::clamp(t_on_s, 0.0, half_period);
    const double s = std::sin(std::numbers::pi * f_hz * t_on);
    return 1.0 / ((1.0 - s) / c1_f + s / (c1_f + c2_f));
}

/// Switch-on time that makes the equivalent capacitance resonate l at f.
/// Exact inverse of equivalent_capacitance against resonant_capacitance.
/// Throws FrequencyOutOfRange when f is outside the reachable span (the
/// arcsin argument leaves [0, 1] beyond a 1e-12 boundary tolerance).
inline double switch_on_time(double f_hz, double l_h, double c1_f, double c2_f) {
    if (f_hz <= 0.0 || l_h <= 0.0 || c1_f <= 0.0 || c2_f <= 0.0)
        throw ValidationError("switch_on_time: all arguments must be positive");
    const double w = kTwoPi * f_hz;
    const double sum = c1_f + c2_f;
    // sin(pi*f*T_on) = (C1+C2)/C2 - w^2*L*C1*(C1+C2)/C2
    double arg = sum / c2_f - w * w * l_h * c1_f * sum / c2_f;
    constexpr double kBoundaryTol = 1e-12;
    if (arg < -kBoundaryTol || arg > 1.0 + kBoundaryTol)
        throw FrequencyOutOfRange("switch_on_time: frequency outside hacking range (arcsin argument " +
                                  std::to_string(arg) + ")");
    arg = std::clamp(arg, 0.0, 1.0);
    return std::asin(arg) / (std::numbers::pi * f_hz);
}

/// Drive frequency whose exact-compensation switch-on time equals t_on.
/// Inverse of switch_on_time along f; the predicted effective resonance of a
/// tank gated with a fixed t_on. Bisection on the monotone closed form.
inline double frequency_for_switch_on_time(double t_on_s, double l_h, double c1_f, double c2_f) {
    auto [f_lo, f_hi] = hacking_frequency_range(l_h, c1_f, c2_f);
    if (t_on_s < 0.0) throw DutyOutOfRange("frequency_for_switch_on_time: t_on < 0");
    if (t_on_s >= 0.5 / f_lo) return f_lo;
    if (t_on_s == 0.0) return f_hi;
    double lo = f_lo, hi = f_hi;
    // switch_on_time is continuous and strictly decreasing in f on [f_lo, f_hi]
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (switch_on_time(mid, l_h, c1_f, c2_f) > t_on_s)
            lo = mid;
        else
            hi = mid;
        if (hi - lo < 1e-9 * hi) break;
    }
    return 0.5 * (lo + hi);
}

/// Static description of a switched-capacitor compensation design.
struct CompensationDesign {
    double l_r = 0.0;   ///< receiver inductance, H
    double c1 = 0.0;    ///< always-connected capacitance, F
    double c2 = 0.0;    ///< gated capacitance, F
    double f_lo = 0.0;  ///< lower reachable resonance, Hz
    double f_hi = 0.0;  ///< upper reachable resonance, Hz

    static CompensationDesign from_lc(double l_h, double c1_f, double c2_f) {
        auto [lo, hi] = hacking_frequency_range(l_h, c1_f, c2_f);
        return {l_h, c1_f, c2_f, lo, hi};
    }
};

/// One period's switching intervals at drive frequency 1/period.
struct GatePlan {
    double t_on = 0.0;
    double t_off = 0.0;
    double period = 0.0;

    static GatePlan at(double f_hz, double t_on_s) {
        if (f_hz <= 0.0) throw ValidationError("GatePlan: f must be positive");
        const double half = 0.5 / f_hz;
        const double slack = 1e-12 * half;
        if (t_on_s < -slack || t_on_s > half + slack)
            throw DutyOutOfRange("GatePlan: t_on outside [0, T/2]");
        const double t_on = std::clamp(t_on_s, 0.0, half);
        return {t_on, half - t_on, 1.0 / f_hz};
    }
};

/// Pick (c1, c2) so the reachable range covers [f_lo_target, f_hi_target],
/// derated/oversized by aging_margin: c1 shrinks, c2 grows.
inline std::pair<double, double> select_capacitances(double f_lo_target, double f_hi_target,
                                                     double l_h, double aging_margin) {
    if (l_h <= 0.0) throw ValidationError("select_capacitances: l must be positive");
    if (aging_margin < 0.0 || aging_margin >= 1.0)
        throw ValidationError("select_capacitances: aging_margin must be in [0, 1)");
    if (!(f_lo_target > 0.0) || !(f_lo_target < f_hi_target))
        throw InfeasibleTargets("select_capacitances: need 0 < f_lo_target < f_hi_target");
    const double c1 = (1.0 - aging_margin) * resonant_capacitance(f_hi_target, l_h);
    const double c2 = (1.0 + aging_margin) * (resonant_capacitance(f_lo_target, l_h) - c1);
    if (c2 <= 0.0)
        throw InfeasibleTargets("select_capacitances: non-positive c2 after margins");
    return {c1, c2};
}

struct SensitivityRow {
    double scale_c1 = 1.0;
    double scale_c2 = 1.0;
    double f_lo = 0.0;
    double f_hi = 0.0;
};

/// Frequency range under capacitance drift: one row per (scale_c1, scale_c2)
/// pair of the cartesian grid.
inline std::vector<SensitivityRow> sensitivity_sweep(double l_h, double c1_f, double c2_f,
                                                     std::span<const double> scale_grid) {
    std::vector<SensitivityRow> rows;
    rows.reserve(scale_grid.size() * scale_grid.size());
    for (double s1 : scale_grid) {
        for (double s2 : scale_grid) {
            if (s1 <= 0.0 || s2 <= 0.0)
                throw ValidationError("sensitivity_sweep: scales must be positive");
            auto [lo, hi] = hacking_frequency_range(l_h, s1 * c1_f, s2 * c2_f);
            rows.push_back({s1, s2, lo, hi});
        }
    }
    return rows;
}

}  // namespace wpt::swcap
