#include "wpt/controller/tuner.hpp"

#include <algorithm>
#include <cmath>

namespace wpt::ctrl {

double coarse_tune(const sensing::DetectorEstimate& estimate,
                   const swcap::CompensationDesign& design, bool* clamped) {
    if (clamped) *clamped = false;
    const double f = estimate.f_hat;
    if (f <= 0.0) throw ValidationError("coarse_tune: estimate has no frequency");
    const double half = 0.5 / f;
    if (f > design.f_hi) {
        if (clamped) *clamped = true;
        return 0.0;
    }
    if (f < design.f_lo) {
        if (clamped) *clamped = true;
        return half;
    }
    const double t_on = swcap::switch_on_time(f, design.l_r, design.c1, design.c2);
    return std::clamp(t_on, 0.0, half);
}

ControllerState start_fine(const sensing::DetectorEstimate& estimate, double coarse_t_on,
                           double measured_rms, Strategy strategy, TunerOptions opts) {
    ControllerState st;
    st.mode = Mode::Fine;
    st.estimate = estimate;
    st.strategy = strategy;
    st.opts = opts;
    st.half_period = 0.5 / estimate.f_hat;
    st.t_on = std::clamp(coarse_t_on, 0.0, st.half_period);
    st.best_t_on = st.t_on;
    st.best_rms = measured_rms;
    st.step = std::max(opts.initial_step_frac * st.t_on, opts.min_initial_step_s);
    st.direction = opts.initial_direction >= 0 ? 1 : -1;
    // first probe
    st.t_on = std::clamp(st.best_t_on + st.direction * st.step, 0.0, st.half_period);
    return st;
}

ControllerState fine_tune_step(ControllerState state, double measured_rms) {
    if (state.mode != Mode::Fine) throw ValidationError("fine_tune_step: not in Fine mode");
    if (measured_rms > state.best_rms) {
        state.best_rms = measured_rms;
        state.best_t_on = state.t_on;
    } else {
        state.t_on = state.best_t_on;
        state.direction = -state.direction;
        state.step *= 0.5;
    }
    if (state.step < state.opts.termination_step_s) {
        state.mode = Mode::Track;
        state.t_on = state.best_t_on;
        return state;
    }
    state.t_on = std::clamp(state.t_on + state.direction * state.step, 0.0, state.half_period);
    return state;
}

}  // namespace wpt::ctrl
