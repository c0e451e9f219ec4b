#pragma once

// Auxiliary-coil signal chain: comparator quantization with hysteresis,
// zero-crossing frequency estimation by counting, and the zero-phase
// reference used to align the gate schedule.

#include <cstddef>
#include <deque>
#include <span>
#include <vector>

#include "wpt/errors.hpp"

namespace wpt::sensing {

/// Interleaved rising/falling edge timestamps from a comparator.
struct EdgeList {
    std::vector<double> rising;
    std::vector<double> falling;
};

struct DetectorEstimate {
    double f_hat = 0.0;      ///< estimated frequency, Hz
    double phase_ref = 0.0;  ///< timestamp of the most recent upward crossing, s
    int confidence = 0;      ///< number of rising edges used
};

/// Two-level comparator with hysteresis. Feed samples in time order; the
/// output state flips when the input crosses threshold +/- hysteresis/2,
/// with the crossing instant linearly interpolated between samples.
class Comparator {
public:
    Comparator(double threshold, double hysteresis)
        : hi_(threshold + 0.5 * hysteresis), lo_(threshold - 0.5 * hysteresis) {}

    /// Returns +1 on a rising edge, -1 on a falling edge, 0 otherwise.
    /// `edge_time` receives the interpolated crossing instant on an edge.
    int push(double t, double v, double* edge_time);

    bool primed() const { return state_ != State::Unknown; }

private:
    enum class State { Unknown, Low, High };
    double interpolate(double level, double t, double v) const;

    double hi_;
    double lo_;
    State state_ = State::Unknown;
    double prev_t_ = 0.0;
    double prev_v_ = 0.0;
    bool have_prev_ = false;
};

/// Quantize a uniformly sampled series starting at t0 with spacing dt.
EdgeList comparator_quantize(std::span<const double> samples, double t0, double dt,
                             double threshold, double hysteresis);

/// Frequency by counting rising edges inside the trailing `window` seconds:
/// f_hat = (n - 1) / (t_last - t_first). Throws InsufficientEdges when fewer
/// than two rising edges fall inside the window.
DetectorEstimate estimate_frequency(const EdgeList& edges, double window_s);

/// Phase accumulated since the zero-phase reference, wrapped to [0, 2*pi).
double phase_at(const DetectorEstimate& est, double t);

/// Streaming frequency/phase detector over a live sample feed: keeps a
/// sliding window of rising-edge intervals and re-arms itself when the
/// interval stream deviates from the current estimate (a frequency hop).
class StreamingDetector {
public:
    struct Options {
        double threshold = 0.0;
        double hysteresis = 0.0;
        int window_cycles = 10;        ///< edges kept for the estimate
        int estimate_min_edges = 8;    ///< edges required before reporting
        double rearm_rel_dev = 0.05;   ///< relative interval deviation that flags a hop
        int rearm_consecutive = 2;     ///< deviating intervals required to re-arm
    };

    StreamingDetector() : StreamingDetector(Options{}) {}
    explicit StreamingDetector(const Options& opts);

    void push(double t, double v);

    bool has_estimate() const { return has_estimate_; }
    DetectorEstimate estimate() const { return estimate_; }

    /// Increments every time the detector discards its window after a hop.
    int generation() const { return generation_; }
    /// Timestamp of the last re-arm, meaningful when generation() > 0.
    double last_rearm_time() const { return last_rearm_time_; }

    void reset();

private:
    void on_rising_edge(double t);

    Options opts_;
    Comparator comparator_;
    std::deque<double> rising_;
    DetectorEstimate estimate_{};
    bool has_estimate_ = false;
    int deviating_run_ = 0;
    int generation_ = 0;
    double last_rearm_time_ = 0.0;
};

}  // namespace wpt::sensing
