#include "wpt/sensing.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace wpt::sensing {

double Comparator::interpolate(double level, double t, double v) const {
    const double dv = v - prev_v_;
    if (dv == 0.0) return t;
    double frac = (level - prev_v_) / dv;
    frac = std::clamp(frac, 0.0, 1.0);
    return prev_t_ + frac * (t - prev_t_);
}

int Comparator::push(double t, double v, double* edge_time) {
    int edge = 0;
    if (state_ == State::Unknown) {
        if (v < lo_)
            state_ = State::Low;
        else if (v > hi_)
            state_ = State::High;
    } else if (state_ == State::Low && v > hi_) {
        if (edge_time && have_prev_) *edge_time = interpolate(hi_, t, v);
        else if (edge_time) *edge_time = t;
        state_ = State::High;
        edge = +1;
    } else if (state_ == State::High && v < lo_) {
        if (edge_time && have_prev_) *edge_time = interpolate(lo_, t, v);
        else if (edge_time) *edge_time = t;
        state_ = State::Low;
        edge = -1;
    }
    prev_t_ = t;
    prev_v_ = v;
    have_prev_ = true;
    return edge;
}

EdgeList comparator_quantize(std::span<const double> samples, double t0, double dt,
                             double threshold, double hysteresis) {
    if (hysteresis < 0.0) throw ValidationError("comparator_quantize: hysteresis must be >= 0");
    if (dt <= 0.0) throw ValidationError("comparator_quantize: dt must be positive");
    EdgeList edges;
    Comparator comp(threshold, hysteresis);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        double when = 0.0;
        const int e = comp.push(t0 + static_cast<double>(i) * dt, samples[i], &when);
        if (e > 0)
            edges.rising.push_back(when);
        else if (e < 0)
            edges.falling.push_back(when);
    }
    return edges;
}

DetectorEstimate estimate_frequency(const EdgeList& edges, double window_s) {
    if (window_s <= 0.0) throw ValidationError("estimate_frequency: window must be positive");
    if (edges.rising.size() < 2)
        throw InsufficientEdges("estimate_frequency: fewer than two rising edges");
    const double t_last = edges.rising.back();
    const double t_min = t_last - window_s;
    auto first = std::lower_bound(edges.rising.begin(), edges.rising.end(), t_min);
    const auto n = static_cast<std::size_t>(edges.rising.end() - first);
    if (n < 2)
        throw InsufficientEdges("estimate_frequency: fewer than two rising edges in window");
    const double span = t_last - *first;
    if (span <= 0.0)
        throw InsufficientEdges("estimate_frequency: degenerate edge spacing");
    return {static_cast<double>(n - 1) / span, t_last, static_cast<int>(n)};
}

double phase_at(const DetectorEstimate& est, double t) {
    const double cycles = est.f_hat * (t - est.phase_ref);
    double frac = cycles - std::floor(cycles);
    return 2.0 * std::numbers::pi * frac;
}

StreamingDetector::StreamingDetector(const Options& opts)
    : opts_(opts), comparator_(opts.threshold, opts.hysteresis) {}

void StreamingDetector::reset() {
    rising_.clear();
    has_estimate_ = false;
    deviating_run_ = 0;
}

void StreamingDetector::push(double t, double v) {
    double when = 0.0;
    if (comparator_.push(t, v, &when) > 0) on_rising_edge(when);
}

void StreamingDetector::on_rising_edge(double t) {
    if (!rising_.empty() && has_estimate_) {
        const double interval = t - rising_.back();
        const double expected = 1.0 / estimate_.f_hat;
        if (std::abs(interval - expected) > opts_.rearm_rel_dev * expected) {
            if (++deviating_run_ >= opts_.rearm_consecutive) {
                // keep only the edges after the deviation began: they already
                // belong to the new frequency
                ++generation_;
                last_rearm_time_ = t;
                const auto keep = std::min<std::size_t>(
                    rising_.size(), static_cast<std::size_t>(opts_.rearm_consecutive - 1));
                std::deque<double> tail(rising_.end() - keep, rising_.end());
                rising_ = std::move(tail);
                has_estimate_ = false;
                deviating_run_ = 0;
            }
        } else {
            deviating_run_ = 0;
        }
    }
    rising_.push_back(t);
    while (static_cast<int>(rising_.size()) > opts_.window_cycles + 1) rising_.pop_front();
    if (static_cast<int>(rising_.size()) >= opts_.estimate_min_edges) {
        const double span = rising_.back() - rising_.front();
        if (span > 0.0) {
            estimate_.f_hat = static_cast<double>(rising_.size() - 1) / span;
            estimate_.phase_ref = rising_.back();
            estimate_.confidence = static_cast<int>(rising_.size());
            has_estimate_ = true;
        }
    } else if (has_estimate_) {
        // window was flushed; keep phase_ref current while re-estimating
        has_estimate_ = false;
    }
}

}  // namespace wpt::sensing
