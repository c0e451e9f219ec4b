#include "wpt/controller/schedule.hpp"

#include <algorithm>
#include <cmath>

namespace wpt::ctrl {

using circuit::SwitchTopology;

GateSchedule::GateSchedule(double f_hz, double anchor_s, double t_on_s,
                           circuit::SwitchTopology topology)
    : anchor_(anchor_s), t_on_(t_on_s), topology_(topology) {
    if (f_hz <= 0.0) throw ValidationError("GateSchedule: frequency must be positive");
    period_ = 1.0 / f_hz;
    const double half = 0.5 * period_;
    if (t_on_s < 0.0 || t_on_s > half * (1.0 + 1e-9))
        throw DutyOutOfRange("GateSchedule: t_on outside [0, T/2]");
    t_on_ = std::min(t_on_s, half);
    always_on_ = t_on_ >= half * (1.0 - 1e-9);

    // window centers at anchor + k*T/2; the window at the anchor carries
    // negative loop current, the one at anchor + T/2 positive current
    const double h = 0.5 * t_on_;
    if (t_on_ < 1e-12 * period_) {
        // zero window: hold every gate off, else an armed diode branch would
        // still conduct whenever it drifts into forward bias
        template_.push_back({0.0, 0, false});
        template_.push_back({0.0, 1, false});
        template_.push_back({half, 0, false});
        template_.push_back({half, 1, false});
        return;
    }
    switch (topology_) {
        case SwitchTopology::TransistorDiodePair:
            // swap the armed branch at each window's end; the incoming
            // branch's diode turns on by itself at the next window
            template_.push_back({h, 1, false});
            template_.push_back({h, 0, true});
            template_.push_back({half + h, 0, false});
            template_.push_back({half + h, 1, true});
            break;
        case SwitchTopology::BackToBackPair:
            template_.push_back({-h, 0, true});
            template_.push_back({-h, 1, true});
            template_.push_back({h, 0, false});
            template_.push_back({h, 1, false});
            template_.push_back({half - h, 0, true});
            template_.push_back({half - h, 1, true});
            template_.push_back({half + h, 0, false});
            template_.push_back({half + h, 1, false});
            break;
        case SwitchTopology::SingleTransistorWithBodyDiode:
            template_.push_back({-h, 0, true});
            template_.push_back({h, 0, false});
            template_.push_back({half - h, 0, true});
            template_.push_back({half + h, 0, false});
            break;
    }
    std::stable_sort(template_.begin(), template_.end(),
                     [](const GateEvent& a, const GateEvent& b) { return a.t < b.t; });
}

std::vector<circuit::GateCommand> GateSchedule::commands_in(double t0, double t1,
                                                            int receiver) const {
    std::vector<circuit::GateCommand> out;
    if (template_.empty() || t1 <= t0) return out;
    const double first_off = template_.front().t;
    auto k = static_cast<long long>(std::floor((t0 - anchor_ - first_off) / period_)) - 1;
    for (;; ++k) {
        const double base = anchor_ + static_cast<double>(k) * period_;
        if (base + template_.front().t >= t1) break;
        for (const auto& ev : template_) {
            const double t = base + ev.t;
            if (t >= t0 && t < t1) out.push_back({t, receiver, ev.device, ev.on});
        }
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const circuit::GateCommand& a, const circuit::GateCommand& b) {
                         return a.t < b.t;
                     });
    return out;
}

void GateSchedule::delay_turn_on(int which, double delay) {
    const double h = 0.5 * t_on_;
    const double target = which == 0 ? -h : 0.5 * period_ - h;
    for (auto& ev : template_) {
        if (ev.on && std::abs(ev.t - target) < 1e-12 * period_ + 1e-15) ev.t += delay;
    }
    std::stable_sort(template_.begin(), template_.end(),
                     [](const GateEvent& a, const GateEvent& b) { return a.t < b.t; });
}

GateSchedule plan_gate_schedule(const sensing::DetectorEstimate& estimate, double t_on,
                                circuit::SwitchTopology topology) {
    if (estimate.f_hat <= 0.0)
        throw ValidationError("plan_gate_schedule: estimate has no frequency");
    const double period = 1.0 / estimate.f_hat;
    // V_LA leads the receiver current peak by a quarter period
    return GateSchedule(estimate.f_hat, estimate.phase_ref + 0.25 * period, t_on, topology);
}

}  // namespace wpt::ctrl
