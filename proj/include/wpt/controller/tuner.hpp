#pragma once

// Coarse analytic tuning and the perturb-and-observe fine tuner that hill
// climbs the measured receiver-current RMS over t_on.

#include "wpt/sensing.hpp"
#include "wpt/swcap.hpp"

namespace wpt::ctrl {

enum class Strategy { TimeCounting, VoltageComparison };
enum class Mode { Detect, Coarse, Fine, Track };

struct TunerOptions {
    double initial_step_frac = 0.10;  ///< of the coarse t_on
    double min_initial_step_s = 0.05e-6;
    double termination_step_s = 0.02e-6;
    int initial_direction = -1;
};

struct ControllerState {
    Mode mode = Mode::Detect;
    sensing::DetectorEstimate estimate{};
    Strategy strategy = Strategy::TimeCounting;
    double t_on = 0.0;       ///< currently applied switch-on time, s
    double step = 0.0;       ///< current hill-climb perturbation, s
    int direction = -1;
    double best_rms = 0.0;   ///< best objective seen this Fine episode
    double best_t_on = 0.0;
    double v_ref = 0.0;      ///< voltage-comparison threshold
    double half_period = 0.0;
    TunerOptions opts{};
};

/// Analytic t_on from the detected frequency, clamped into [0, T/2] when the
/// frequency leaves the reachable range. `clamped` reports that fallback.
double coarse_tune(const sensing::DetectorEstimate& estimate,
                   const swcap::CompensationDesign& design, bool* clamped = nullptr);

/// Seeds a Fine episode around the coarse value.
ControllerState start_fine(const sensing::DetectorEstimate& estimate, double coarse_t_on,
                           double measured_rms, Strategy strategy, TunerOptions opts = {});

/// One perturb-and-observe update: `measured_rms` is the settled objective at
/// state.t_on. Improvements keep the direction; a regression returns to the
/// best point, reverses, and halves the step. The episode ends (mode Track,
/// t_on = best) once the step shrinks below the termination threshold.
ControllerState fine_tune_step(ControllerState state, double measured_rms);

}  // namespace wpt::ctrl
