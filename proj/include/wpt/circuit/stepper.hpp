#pragma once

// Event-exact fixed-step transient integration of a SimSystem: trapezoidal
// rule over the piecewise-linear descriptor system E(mode) x' = F(mode) x +
// G(mode) u(t), with diode/switch conduction resolved to a fixpoint inside
// each step and gate commands landing exactly on step boundaries.

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "wpt/circuit/state.hpp"
#include "wpt/circuit/system.hpp"

namespace wpt::circuit {

struct SolverOptions {
    int step_divisor = 2000;          ///< base step = drive period / divisor
    double base_step_override_s = 0;  ///< fixed base step instead (0 = derive from divisor)
    double current_tol_a = 1e-6;      ///< diode current-law tolerance
    double voltage_tol_v = 1e-6;      ///< diode forward-voltage tolerance
    int fixpoint_cap = 16;
    double lte_rel_tol = 1e-3;        ///< local truncation guard, relative to state scale
    int sample_every = 8;             ///< default tap cadence, in base steps
};

/// One constant-frequency interval of the drive program. `phase_rad` is
/// filled in by the stepper to keep the source waveform continuous at hops.
struct SourceSegment {
    double t_start = 0.0;
    double frequency_hz = 0.0;
    double amplitude = 0.0;  ///< A for ideal-current drive, V for voltage drive
    double phase_rad = 0.0;
};

struct GateCommand {
    double t = 0.0;
    int receiver = 0;
    int device = 0;  ///< 0 = M1, 1 = M2
    bool on = false;
};

class Stepper {
public:
    explicit Stepper(const SimSystem& system, SolverOptions opts = {});
    ~Stepper();
    Stepper(const Stepper&) = delete;
    Stepper& operator=(const Stepper&) = delete;
    Stepper(Stepper&&) = default;
    Stepper& operator=(Stepper&&) = default;

    /// Replaces the drive program (default: one segment from the SourceModel).
    /// Segments must start at increasing times; phases are recomputed for
    /// waveform continuity.
    void set_program(std::vector<SourceSegment> segments);
    const std::vector<SourceSegment>& program() const { return program_; }
    const SourceSegment& segment_at(double t) const;

    /// Gate the switched branch of `receiver` from comparison of |V_CR1|
    /// against v_ref instead of timed commands.
    void set_voltage_gate(int receiver, bool enabled, double v_ref);

    const SimSystem& system() const { return system_; }
    const SimState& state() const { return state_; }
    SimState& mutable_state() { return state_; }
    double time() const { return state_.t; }
    /// Base step of the segment active at the current time.
    double base_step() const;

    /// Advances to t_end. Commands must be sorted and lie within [t, t_end].
    void advance_to(double t_end, std::span<const GateCommand> commands = {});
    /// Spec-shaped variant: advance by dt.
    void advance(double dt, std::span<const GateCommand> commands = {}) {
        advance_to(state_.t + dt, commands);
    }

    // --- probes ---

    struct ProbeId {
        int kind = 0;
        int receiver = -1;
    };
    /// Resolves names like "I_T", "V_LA", "I_R_0", "V_CR1_2"; a bare
    /// per-receiver name ("V_SR") refers to receiver 0.
    ProbeId resolve_probe(const std::string& name) const;
    double probe(ProbeId id) const;
    double probe(const std::string& name) const { return probe(resolve_probe(name)); }

    /// Total induced voltage on a coil (coil-set index) from every coupled
    /// current, own included.
    double induced_emf(int coil_set_index) const;

    double source_value(double t) const;       ///< i_T(t) (ideal) or v_T(t) (driven)
    double source_derivative(double t) const;  ///< d/dt of the above

    /// Energy currently stored in inductors and capacitors.
    double stored_energy() const;

    // --- sample taps, fired on the base-step grid ---
    using Tap = std::function<void(const Stepper&, double)>;
    void add_tap(int every_base_steps, Tap tap);
    void clear_taps();

    /// Steps accepted since construction.
    std::uint64_t steps_taken() const { return steps_; }

private:
    struct ModeMatrices;
    struct VoltageGate {
        bool enabled = false;
        double v_ref = 0.0;
    };

    std::uint64_t flag_bits() const;
    void build_matrices(ModeMatrices& mm, double h) const;
    const ModeMatrices& matrices_for(double h);
    void input_at(double t, Eigen::Vector2d& u) const;
    void compute_derivative(double t);
    void apply_commands_at(double t, std::span<const GateCommand> cmds, std::size_t begin,
                           std::size_t end, double h_next);
    void apply_voltage_gates(double h_next);
    void resolve_switch_transition(int k, double h_next);
    bool check_and_update_flags(const Eigen::VectorXd& x_new, const Eigen::VectorXd& dx_new,
                                double t_new, double h);
    /// Instant charge redistribution between c1 and c2 of receiver k, leaving
    /// v1 - v2 at `target_offset`; books the loss and the spike current.
    void merge_caps(int k, double target_offset, double h_for_spike);
    void take_step(double h);
    void point_powers(const Eigen::VectorXd& x, const Eigen::VectorXd& dx, double t, double* inj,
                      double* diss);
    void segment_phases();
    int segment_index_at(double t) const;
    double branch_current(const Eigen::VectorXd& x, const Eigen::VectorXd& dx, int k) const;
    double open_bridge_voltage(const Eigen::VectorXd& x, const Eigen::VectorXd& dx, double t,
                               int k) const;

    const SimSystem& system_;
    SolverOptions opts_;
    SimState state_;
    std::vector<SourceSegment> program_;
    std::vector<VoltageGate> voltage_gates_;

    std::map<std::pair<std::uint64_t, std::uint64_t>, std::unique_ptr<ModeMatrices>> cache_;
    // per-receiver direction bits (1 = positive, 2 = negative) that turned off
    // during the current step; they may not re-arm until the next step
    std::vector<std::uint8_t> sw_refractory_, bridge_refractory_;
    Eigen::VectorXd work_rhs_, work_x_, work_dx_, dx_start_, prev_dx_, scale_;
    Eigen::Vector2d u0_, u1_;
    std::vector<double> rx_inj_pt_, rx_load_pt_, rx_inj_prev_, rx_load_prev_;
    double prev_h_ = 0.0;
    bool prev_step_clean_ = false;
    std::uint64_t steps_ = 0;

    struct TapEntry {
        int every = 1;
        Tap fn;
    };
    std::vector<TapEntry> taps_;
    std::uint64_t base_step_count_ = 0;
};

}  // namespace wpt::circuit
