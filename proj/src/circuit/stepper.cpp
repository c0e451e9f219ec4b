#include "wpt/circuit/stepper.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>

namespace wpt::circuit {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct ArmSet {
    bool bi = false;
    bool pos = false;
    bool neg = false;
};

ArmSet arm_set(SwitchTopology topo, bool g1, bool g2) {
    ArmSet a;
    switch (topo) {
        case SwitchTopology::SingleTransistorWithBodyDiode:
            if (g1)
                a.bi = true;
            else
                a.neg = true;  // body diode passes current out of c2
            break;
        case SwitchTopology::BackToBackPair:
            if (g1 && g2)
                a.bi = true;
            else if (g1)
                a.neg = true;  // m2 body diode blocks positive branch current
            else if (g2)
                a.pos = true;
            break;
        case SwitchTopology::TransistorDiodePair:
            a.pos = g1;
            a.neg = g2;
            break;
    }
    return a;
}

}  // namespace

struct Stepper::ModeMatrices {
    Eigen::MatrixXd F;
    Eigen::MatrixXd G;  // columns: [constants, source term]
    Eigen::MatrixXd P;  // E + h/2 F
    Eigen::PartialPivLU<Eigen::MatrixXd> lu_step;  // E - h/2 F
    Eigen::PartialPivLU<Eigen::MatrixXd> lu_e;
};

Stepper::~Stepper() = default;

Stepper::Stepper(const SimSystem& system, SolverOptions opts) : system_(system), opts_(opts) {
    const int n = system_.state_dim();
    const auto n_rx = static_cast<std::size_t>(system_.receiver_count());
    state_.x = Eigen::VectorXd::Zero(n);
    state_.dxdt = Eigen::VectorXd::Zero(n);
    state_.flags.resize(n_rx);
    state_.energy.receiver_injected.assign(n_rx, 0.0);
    state_.energy.receiver_load.assign(n_rx, 0.0);
    state_.stats.resize(n_rx);
    voltage_gates_.resize(n_rx);
    sw_refractory_.assign(n_rx, 0);
    bridge_refractory_.assign(n_rx, 0);
    work_rhs_.resize(n);
    work_x_.resize(n);
    work_dx_.resize(n);
    dx_start_ = Eigen::VectorXd::Zero(n);
    prev_dx_ = Eigen::VectorXd::Zero(n);
    scale_ = Eigen::VectorXd::Constant(n, 1e-6);
    rx_inj_pt_.assign(n_rx, 0.0);
    rx_load_pt_.assign(n_rx, 0.0);
    rx_inj_prev_.assign(n_rx, 0.0);
    rx_load_prev_.assign(n_rx, 0.0);

    SourceSegment seg;
    seg.t_start = 0.0;
    if (const auto* ic = std::get_if<IdealCurrentSource>(&system_.source())) {
        seg.frequency_hz = ic->frequency_hz;
        seg.amplitude = ic->amplitude_a;
        seg.phase_rad = ic->phase_rad;
    } else {
        const auto& vd = std::get<VoltageDrivenSource>(system_.source());
        seg.frequency_hz = vd.frequency_hz;
        seg.amplitude = vd.amplitude_v;
        seg.phase_rad = vd.phase_rad;
    }
    program_ = {seg};
    compute_derivative(0.0);
}

void Stepper::set_program(std::vector<SourceSegment> segments) {
    if (segments.empty()) throw ValidationError("Stepper: empty source program");
    for (std::size_t i = 1; i < segments.size(); ++i)
        if (segments[i].t_start <= segments[i - 1].t_start)
            throw ValidationError("Stepper: program segments must start at increasing times");
    for (const auto& s : segments)
        if (s.frequency_hz <= 0.0)
            throw ValidationError("Stepper: segment frequency must be positive");
    program_ = std::move(segments);
    segment_phases();
    compute_derivative(state_.t);
}

void Stepper::segment_phases() {
    for (std::size_t i = 1; i < program_.size(); ++i) {
        const auto& prev = program_[i - 1];
        auto& cur = program_[i];
        const double th =
            kTwoPi * prev.frequency_hz * (cur.t_start - prev.t_start) + prev.phase_rad;
        const double v = prev.amplitude * std::sin(th);
        const bool rising = std::cos(th) >= 0.0;
        if (cur.amplitude <= 0.0) {
            cur.phase_rad = 0.0;
        } else if (std::abs(v) <= cur.amplitude) {
            double phi = std::asin(v / cur.amplitude);
            if (!rising) phi = std::numbers::pi - phi;
            cur.phase_rad = phi;
        } else {
            cur.phase_rad = v > 0.0 ? 0.5 * std::numbers::pi : -0.5 * std::numbers::pi;
        }
    }
}

int Stepper::segment_index_at(double t) const {
    int idx = 0;
    for (std::size_t i = 1; i < program_.size(); ++i) {
        if (program_[i].t_start <= t + 1e-15)
            idx = static_cast<int>(i);
        else
            break;
    }
    return idx;
}

const SourceSegment& Stepper::segment_at(double t) const {
    return program_[static_cast<std::size_t>(segment_index_at(t))];
}

double Stepper::base_step() const {
    if (opts_.base_step_override_s > 0.0) return opts_.base_step_override_s;
    const auto& seg = segment_at(state_.t);
    return 1.0 / (seg.frequency_hz * static_cast<double>(opts_.step_divisor));
}

double Stepper::source_value(double t) const {
    const auto& seg = segment_at(t);
    return seg.amplitude * std::sin(kTwoPi * seg.frequency_hz * (t - seg.t_start) + seg.phase_rad);
}

double Stepper::source_derivative(double t) const {
    const auto& seg = segment_at(t);
    const double w = kTwoPi * seg.frequency_hz;
    return seg.amplitude * w * std::cos(w * (t - seg.t_start) + seg.phase_rad);
}

void Stepper::set_voltage_gate(int receiver, bool enabled, double v_ref) {
    auto& vg = voltage_gates_.at(static_cast<std::size_t>(receiver));
    vg.enabled = enabled;
    vg.v_ref = v_ref;
}

void Stepper::add_tap(int every_base_steps, Tap tap) {
    taps_.push_back({std::max(1, every_base_steps), std::move(tap)});
}

void Stepper::clear_taps() { taps_.clear(); }

std::uint64_t Stepper::flag_bits() const {
    std::uint64_t bits = 0;
    for (std::size_t k = 0; k < state_.flags.size(); ++k) {
        const auto& f = state_.flags[k];
        bits |= (static_cast<std::uint64_t>(f.sw) | (static_cast<std::uint64_t>(f.bridge) << 2))
                << (4 * k);
    }
    return bits;
}

void Stepper::input_at(double t, Eigen::Vector2d& u) const {
    u(0) = 1.0;
    u(1) = system_.voltage_driven() ? source_value(t) : source_derivative(t);
}

void Stepper::build_matrices(ModeMatrices& mm, double h) const {
    const int n = system_.state_dim();
    Eigen::MatrixXd E = Eigen::MatrixXd::Zero(n, n);
    mm.F = Eigen::MatrixXd::Zero(n, n);
    mm.G = Eigen::MatrixXd::Zero(n, 2);

    const int n_dyn = system_.dynamic_coil_count();
    const auto& m_dyn = system_.dynamic_inductance();
    const auto& m_tx = system_.transmitter_coupling();
    const bool vd = system_.voltage_driven();

    if (vd) {
        const auto& src = std::get<VoltageDrivenSource>(system_.source());
        const auto& tx_coil = system_.coils().coil(system_.coils().transmitter_index());
        E.row(0).head(n_dyn) = m_dyn.row(0);
        mm.F(0, 0) -= tx_coil.r_ohm + src.r_internal_ohm;
        mm.G(0, 1) = 1.0;
        if (system_.transmitter_cap_index() >= 0) {
            const int p = system_.transmitter_cap_index();
            mm.F(0, p) -= 1.0;
            E(p, p) = src.c_series_f;
            mm.F(p, 0) = 1.0;
        }
    }

    for (int k = 0; k < system_.receiver_count(); ++k) {
        const auto& s = system_.slots(k);
        const auto& fl = state_.flags[static_cast<std::size_t>(k)];
        const int rk = s.current;
        const auto& coil = system_.coils().coil(system_.coils().receiver_index(k));
        const bool frozen = s.has_bridge && fl.bridge == BridgeConduction::Off;

        if (frozen) {
            E(rk, rk) = 1.0;  // blocked bridge: current clamped, di/dt = 0
        } else {
            E.row(rk).head(n_dyn) = m_dyn.row(rk);
            mm.F(rk, rk) -= coil.r_ohm;
            mm.F(rk, s.v1) -= 1.0;
            if (!vd) mm.G(rk, 1) -= m_tx(rk);

            const auto& load = system_.load(k);
            if (const auto* r = std::get_if<ResistorLoad>(&load)) {
                mm.F(rk, rk) -= r->r_ohm;
            } else if (const auto* rc = std::get_if<RectifierRCLoad>(&load)) {
                const double sign = fl.bridge == BridgeConduction::Positive ? 1.0 : -1.0;
                if (s.v_load >= 0)
                    mm.F(rk, s.v_load) -= sign;
                else
                    mm.F(rk, rk) -= rc->r_ohm;  // C_L = 0: resistive DC side
                mm.G(rk, 0) -= sign * 2.0 * rc->diode_drop_v;
            } else {
                const auto& b = std::get<RectifierBatteryLoad>(load);
                const double sign = fl.bridge == BridgeConduction::Positive ? 1.0 : -1.0;
                mm.F(rk, rk) -= b.r_series;
                mm.G(rk, 0) -= sign * (b.v_bat + 2.0 * b.diode_drop_v);
            }
        }

        if (!s.switched) {
            const auto& fc = std::get<FixedCap>(system_.compensation(k));
            E(s.v1, s.v1) = fc.c_f;
            if (!frozen) mm.F(s.v1, rk) = 1.0;
        } else {
            const auto& br = std::get<SwitchedCapBranch>(system_.compensation(k));
            if (fl.sw != SwitchConduction::Blocked) {
                E(s.v1, s.v1) = br.c1_f;
                E(s.v1, s.v2) = br.c2_f;
                if (!frozen) mm.F(s.v1, rk) = 1.0;
                E(s.v2, s.v1) = -1.0;  // dv2/dt = dv1/dt while the switch conducts
                E(s.v2, s.v2) = 1.0;
            } else {
                E(s.v1, s.v1) = br.c1_f;
                if (!frozen) mm.F(s.v1, rk) = 1.0;
                mm.F(s.v1, s.v1) -= br.leak_conductance_s;
                mm.F(s.v1, s.v2) += br.leak_conductance_s;
                E(s.v2, s.v2) = br.c2_f;
                mm.F(s.v2, s.v1) = br.leak_conductance_s;
                mm.F(s.v2, s.v2) = -br.leak_conductance_s;
            }
        }

        if (s.v_load >= 0) {
            const auto& rc = std::get<RectifierRCLoad>(system_.load(k));
            E(s.v_load, s.v_load) = rc.c_f;
            mm.F(s.v_load, s.v_load) -= 1.0 / rc.r_ohm;
            if (!frozen) {
                const double sign = fl.bridge == BridgeConduction::Positive ? 1.0 : -1.0;
                mm.F(s.v_load, rk) += sign;
            }
        }
    }

    mm.P = E + 0.5 * h * mm.F;
    mm.lu_step.compute(E - 0.5 * h * mm.F);
    mm.lu_e.compute(E);
}

const Stepper::ModeMatrices& Stepper::matrices_for(double h) {
    std::uint64_t hbits = 0;
    static_assert(sizeof(double) == sizeof(std::uint64_t));
    std::memcpy(&hbits, &h, sizeof(double));
    const auto key = std::make_pair(flag_bits(), hbits);
    auto it = cache_.find(key);
    if (it != cache_.end()) return *it->second;
    if (cache_.size() > 4096) cache_.clear();
    auto mm = std::make_unique<ModeMatrices>();
    build_matrices(*mm, h);
    return *cache_.emplace(key, std::move(mm)).first->second;
}

void Stepper::compute_derivative(double t) {
    Eigen::Vector2d u;
    input_at(t, u);
    const auto& mm = matrices_for(base_step());
    state_.dxdt = mm.lu_e.solve(mm.F * state_.x + mm.G * u);
}

double Stepper::branch_current(const Eigen::VectorXd& /*x*/, const Eigen::VectorXd& dx,
                               int k) const {
    const auto& s = system_.slots(k);
    if (!s.switched) return 0.0;
    const auto& br = std::get<SwitchedCapBranch>(system_.compensation(k));
    return br.c2_f * dx(s.v2);
}

double Stepper::open_bridge_voltage(const Eigen::VectorXd& x, const Eigen::VectorXd& dx, double t,
                                    int k) const {
    const auto& s = system_.slots(k);
    const int n_dyn = system_.dynamic_coil_count();
    double emf = -system_.dynamic_inductance().row(s.current).head(n_dyn).dot(dx.head(n_dyn));
    if (!system_.voltage_driven())
        emf -= system_.transmitter_coupling()(s.current) * source_derivative(t);
    return emf - x(s.v1);
}

double Stepper::induced_emf(int coil_set_index) const {
    const auto& coils = system_.coils();
    if (coil_set_index < 0 || coil_set_index >= coils.coil_count())
        throw DimensionMismatch("induced_emf: coil index out of range");
    const auto& m_full = coils.inductance_matrix();
    double v = 0.0;
    for (int a = 0; a < system_.dynamic_coil_count(); ++a)
        v += m_full(coil_set_index, system_.dynamic_coil_set_index(a)) * state_.dxdt(a);
    if (!system_.voltage_driven())
        v += m_full(coil_set_index, coils.transmitter_index()) * source_derivative(state_.t);
    return v;
}

double Stepper::stored_energy() const {
    const int n_dyn = system_.dynamic_coil_count();
    double e = 0.5 * state_.x.head(n_dyn).dot(system_.dynamic_inductance() * state_.x.head(n_dyn));
    for (int k = 0; k < system_.receiver_count(); ++k) {
        const auto& s = system_.slots(k);
        if (s.switched) {
            const auto& br = std::get<SwitchedCapBranch>(system_.compensation(k));
            e += 0.5 * br.c1_f * state_.x(s.v1) * state_.x(s.v1);
            e += 0.5 * br.c2_f * state_.x(s.v2) * state_.x(s.v2);
        } else {
            const auto& fc = std::get<FixedCap>(system_.compensation(k));
            e += 0.5 * fc.c_f * state_.x(s.v1) * state_.x(s.v1);
        }
        if (s.v_load >= 0) {
            const auto& rc = std::get<RectifierRCLoad>(system_.load(k));
            e += 0.5 * rc.c_f * state_.x(s.v_load) * state_.x(s.v_load);
        }
    }
    if (system_.transmitter_cap_index() >= 0) {
        const auto& vd = std::get<VoltageDrivenSource>(system_.source());
        const int p = system_.transmitter_cap_index();
        e += 0.5 * vd.c_series_f * state_.x(p) * state_.x(p);
    }
    return e;
}

void Stepper::merge_caps(int k, double target_offset, double h_for_spike) {
    const auto& s = system_.slots(k);
    const auto& br = std::get<SwitchedCapBranch>(system_.compensation(k));
    auto& st = state_.stats[static_cast<std::size_t>(k)];
    const double v1 = state_.x(s.v1);
    const double v2 = state_.x(s.v2);
    const double dv = v1 - v2;
    if (std::abs(dv - target_offset) < 1e-12 * std::max(1.0, std::abs(v1))) return;
    const double c_ser = br.c1_f * br.c2_f / (br.c1_f + br.c2_f);
    const double dq = (dv - target_offset) * c_ser;
    state_.energy.switching_loss += 0.5 * dq * (dv + target_offset);
    st.spike_i2 = std::max(st.spike_i2, std::abs(dq) / h_for_spike);
    state_.x(s.v1) = v1 - dq / br.c1_f;
    state_.x(s.v2) = v2 + dq / br.c2_f;
}

bool Stepper::check_and_update_flags(const Eigen::VectorXd& x_new, const Eigen::VectorXd& dx_new,
                                     double t_new, double h) {
    bool changed = false;
    for (int k = 0; k < system_.receiver_count(); ++k) {
        auto& fl = state_.flags[static_cast<std::size_t>(k)];
        const auto& s = system_.slots(k);

        if (s.switched) {
            const auto& br = std::get<SwitchedCapBranch>(system_.compensation(k));
            const ArmSet arms = arm_set(br.topology, fl.gate_m1, fl.gate_m2);
            const double i2 = branch_current(x_new, dx_new, k);
            const double fwd = x_new(s.v1) - x_new(s.v2);
            auto& refr = sw_refractory_[static_cast<std::size_t>(k)];
            SwitchConduction next = fl.sw;
            switch (fl.sw) {
                case SwitchConduction::Bidirectional:
                    break;  // commanded channel, released only by a gate command
                case SwitchConduction::Positive:
                    if (i2 < -opts_.current_tol_a) {
                        next = SwitchConduction::Blocked;
                        refr |= 1;
                    }
                    break;
                case SwitchConduction::Negative:
                    if (i2 > opts_.current_tol_a) {
                        next = SwitchConduction::Blocked;
                        refr |= 2;
                    }
                    break;
                case SwitchConduction::Blocked:
                    if (arms.pos && !(refr & 1) && fwd - br.forward_drop_v > opts_.voltage_tol_v)
                        next = SwitchConduction::Positive;
                    else if (arms.neg && !(refr & 2) &&
                             -fwd - br.forward_drop_v > opts_.voltage_tol_v)
                        next = SwitchConduction::Negative;
                    break;
            }
            if (next != fl.sw) {
                if (fl.sw == SwitchConduction::Blocked) {
                    // autonomous diode turn-on: the capacitors equalize through
                    // the now-conducting path before the step re-integrates
                    auto& st = state_.stats[static_cast<std::size_t>(k)];
                    st.zvs_worst_v = std::max(
                        st.zvs_worst_v, std::abs(state_.x(s.v1) - state_.x(s.v2)));
                    ++st.zvs_events;
                    merge_caps(k,
                               next == SwitchConduction::Positive ? br.forward_drop_v
                                                                  : -br.forward_drop_v,
                               h);
                }
                fl.sw = next;
                changed = true;
            }
        }

        if (s.has_bridge) {
            const int rk = s.current;
            double v_on = 0.0;
            if (const auto* rc = std::get_if<RectifierRCLoad>(&system_.load(k)))
                v_on = (s.v_load >= 0 ? x_new(s.v_load) : 0.0) + 2.0 * rc->diode_drop_v;
            else if (const auto* b = std::get_if<RectifierBatteryLoad>(&system_.load(k)))
                v_on = b->v_bat + 2.0 * b->diode_drop_v;
            auto& brefr = bridge_refractory_[static_cast<std::size_t>(k)];
            BridgeConduction next = fl.bridge;
            switch (fl.bridge) {
                case BridgeConduction::Positive:
                    if (x_new(rk) < -opts_.current_tol_a) {
                        next = BridgeConduction::Off;
                        brefr |= 1;
                    }
                    break;
                case BridgeConduction::Negative:
                    if (x_new(rk) > opts_.current_tol_a) {
                        next = BridgeConduction::Off;
                        brefr |= 2;
                    }
                    break;
                case BridgeConduction::Off: {
                    const double v_ac = open_bridge_voltage(x_new, dx_new, t_new, k);
                    if (!(brefr & 1) && v_ac > v_on + opts_.voltage_tol_v)
                        next = BridgeConduction::Positive;
                    else if (!(brefr & 2) && v_ac < -(v_on + opts_.voltage_tol_v))
                        next = BridgeConduction::Negative;
                    break;
                }
            }
            if (next != fl.bridge) {
                if (next == BridgeConduction::Off) {
                    // the diodes opened at the current zero crossing; clamp the
                    // one-step residual and account for its stored energy
                    const double i_res = state_.x(rk);
                    if (i_res != 0.0) {
                        const int n_dyn = system_.dynamic_coil_count();
                        const auto& m = system_.dynamic_inductance();
                        Eigen::VectorXd i_vec = state_.x.head(n_dyn);
                        const double e_before = 0.5 * i_vec.dot(m * i_vec);
                        i_vec(rk) = 0.0;
                        const double e_after = 0.5 * i_vec.dot(m * i_vec);
                        state_.energy.switching_loss += e_before - e_after;
                        state_.x(rk) = 0.0;
                    }
                }
                fl.bridge = next;
                changed = true;
            }
        }
    }
    return changed;
}

void Stepper::point_powers(const Eigen::VectorXd& x, const Eigen::VectorXd& dx, double t,
                           double* inj, double* diss) {
    const bool vd = system_.voltage_driven();
    const int n_dyn = system_.dynamic_coil_count();
    const auto& m_dyn = system_.dynamic_inductance();
    const auto& m_tx = system_.transmitter_coupling();
    double injected = 0.0;
    double dissipated = 0.0;
    const double didt = vd ? 0.0 : source_derivative(t);

    if (vd) {
        const auto& src = std::get<VoltageDrivenSource>(system_.source());
        const auto& txc = system_.coils().coil(system_.coils().transmitter_index());
        injected += source_value(t) * x(0);
        dissipated += (txc.r_ohm + src.r_internal_ohm) * x(0) * x(0);
    }

    for (int k = 0; k < system_.receiver_count(); ++k) {
        const auto& s = system_.slots(k);
        const auto& fl = state_.flags[static_cast<std::size_t>(k)];
        const int rk = s.current;
        const double ik = x(rk);
        const auto& coil = system_.coils().coil(system_.coils().receiver_index(k));
        dissipated += coil.r_ohm * ik * ik;
        if (!vd) injected += (-m_tx(rk) * didt) * ik;

        double e_full = -m_tx(rk) * didt;
        for (int j = 0; j < n_dyn; ++j)
            if (j != rk) e_full -= m_dyn(rk, j) * dx(j);
        rx_inj_pt_[static_cast<std::size_t>(k)] = e_full * ik;

        double p_load = 0.0;
        const auto& load = system_.load(k);
        if (const auto* r = std::get_if<ResistorLoad>(&load)) {
            p_load = r->r_ohm * ik * ik;
        } else if (const auto* rc = std::get_if<RectifierRCLoad>(&load)) {
            if (s.v_load >= 0)
                p_load = x(s.v_load) * x(s.v_load) / rc->r_ohm;
            else if (fl.bridge != BridgeConduction::Off)
                p_load = rc->r_ohm * ik * ik;
            if (fl.bridge != BridgeConduction::Off)
                dissipated += 2.0 * rc->diode_drop_v * std::abs(ik);
        } else {
            const auto& b = std::get<RectifierBatteryLoad>(load);
            if (fl.bridge != BridgeConduction::Off) {
                p_load = b.v_bat * std::abs(ik);
                dissipated += b.r_series * ik * ik + 2.0 * b.diode_drop_v * std::abs(ik);
            }
        }
        rx_load_pt_[static_cast<std::size_t>(k)] = p_load;

        if (s.switched) {
            const auto& br = std::get<SwitchedCapBranch>(system_.compensation(k));
            if (fl.sw == SwitchConduction::Blocked) {
                const double dv = x(s.v1) - x(s.v2);
                dissipated += br.leak_conductance_s * dv * dv;
            } else if (fl.sw != SwitchConduction::Bidirectional) {
                dissipated += br.forward_drop_v * std::abs(br.c2_f * dx(s.v2));
            }
        }
    }
    *inj = injected;
    *diss = dissipated;
}

void Stepper::take_step(double h) {
    const double t0 = state_.t;
    const double t1 = t0 + h;
    input_at(t0, u0_);
    input_at(t1, u1_);
    std::fill(sw_refractory_.begin(), sw_refractory_.end(), std::uint8_t{0});
    std::fill(bridge_refractory_.begin(), bridge_refractory_.end(), std::uint8_t{0});

    bool flipped = false;

    int iter = 0;
    for (;; ++iter) {
        if (iter >= opts_.fixpoint_cap) {
            std::ostringstream os;
            os << "conduction flags failed to settle at t=" << t1 << " after " << iter
               << " iterations";
            throw ConductionFixpointDivergence(os.str());
        }
        const auto& mm = matrices_for(h);
        work_rhs_.noalias() = mm.P * state_.x;
        work_rhs_.noalias() += (0.5 * h) * (mm.G * (u0_ + u1_));
        work_x_ = mm.lu_step.solve(work_rhs_);
        work_dx_ = mm.lu_e.solve(mm.F * work_x_ + mm.G * u1_);
        if (!check_and_update_flags(work_x_, work_dx_, t1, h)) break;
        flipped = true;
    }

    // start-of-step derivative consistent with the accepted mode
    {
        const auto& mm = matrices_for(h);
        dx_start_ = mm.lu_e.solve(mm.F * state_.x + mm.G * u0_);
    }

    if (prev_step_clean_ && !flipped && h == prev_h_ && steps_ > 2) {
        double worst = 0.0;
        for (int i = 0; i < state_.x.size(); ++i) {
            const double pred =
                state_.x(i) + h * dx_start_(i) + 0.5 * h * (dx_start_(i) - prev_dx_(i));
            worst = std::max(worst, std::abs(work_x_(i) - pred) / (3.0 * scale_(i)));
        }
        if (worst > opts_.lte_rel_tol) {
            std::ostringstream os;
            os << "local truncation estimate " << worst << " exceeds tolerance "
               << opts_.lte_rel_tol << " at t=" << t1 << "; reduce the base step";
            throw StepTooLarge(os.str());
        }
    }

    // trapezoidal energy bookkeeping
    double inj0 = 0.0, diss0 = 0.0, inj1 = 0.0, diss1 = 0.0;
    point_powers(state_.x, dx_start_, t0, &inj0, &diss0);
    rx_inj_prev_ = rx_inj_pt_;
    rx_load_prev_ = rx_load_pt_;
    point_powers(work_x_, work_dx_, t1, &inj1, &diss1);
    state_.energy.injected += 0.5 * h * (inj0 + inj1);
    state_.energy.dissipated += 0.5 * h * (diss0 + diss1);
    for (std::size_t k = 0; k < rx_inj_pt_.size(); ++k) {
        state_.energy.receiver_injected[k] += 0.5 * h * (rx_inj_prev_[k] + rx_inj_pt_[k]);
        state_.energy.receiver_load[k] += 0.5 * h * (rx_load_prev_[k] + rx_load_pt_[k]);
    }

    prev_dx_ = dx_start_;
    prev_h_ = h;
    prev_step_clean_ = !flipped;

    state_.x = work_x_;
    state_.dxdt = work_dx_;
    state_.t = t1;
    ++steps_;

    for (int k = 0; k < system_.receiver_count(); ++k) {
        const auto& s = system_.slots(k);
        auto& st = state_.stats[static_cast<std::size_t>(k)];
        st.peak_v1 = std::max(st.peak_v1, std::abs(state_.x(s.v1)));
        if (s.switched) {
            st.peak_i2 = std::max(st.peak_i2, std::abs(branch_current(state_.x, state_.dxdt, k)));
            if (state_.flags[static_cast<std::size_t>(k)].sw != SwitchConduction::Blocked)
                st.conducting_time += h;
        }
    }
    for (int i = 0; i < state_.x.size(); ++i)
        scale_(i) = std::max(scale_(i), std::abs(state_.x(i)));
}

void Stepper::resolve_switch_transition(int k, double h_next) {
    const auto& s = system_.slots(k);
    if (!s.switched) return;
    auto& fl = state_.flags[static_cast<std::size_t>(k)];
    const auto& br = std::get<SwitchedCapBranch>(system_.compensation(k));
    const ArmSet arms = arm_set(br.topology, fl.gate_m1, fl.gate_m2);
    const double i2 = branch_current(state_.x, state_.dxdt, k);

    if (arms.bi) {
        merge_caps(k, 0.0, h_next);
        fl.sw = SwitchConduction::Bidirectional;
        return;
    }
    switch (fl.sw) {
        case SwitchConduction::Bidirectional:
            if (arms.pos && i2 > opts_.current_tol_a)
                fl.sw = SwitchConduction::Positive;
            else if (arms.neg && i2 < -opts_.current_tol_a)
                fl.sw = SwitchConduction::Negative;
            else
                fl.sw = SwitchConduction::Blocked;
            break;
        case SwitchConduction::Positive:
            if (!arms.pos)
                fl.sw = (arms.neg && i2 < -opts_.current_tol_a) ? SwitchConduction::Negative
                                                                : SwitchConduction::Blocked;
            break;
        case SwitchConduction::Negative:
            if (!arms.neg)
                fl.sw = (arms.pos && i2 > opts_.current_tol_a) ? SwitchConduction::Positive
                                                               : SwitchConduction::Blocked;
            break;
        case SwitchConduction::Blocked: {
            const double fwd = state_.x(s.v1) - state_.x(s.v2);
            // arming a diode into forward bias closes it at once; beyond the
            // drop this is a hard close between the two capacitors
            if (arms.pos && fwd - br.forward_drop_v > opts_.voltage_tol_v) {
                merge_caps(k, br.forward_drop_v, h_next);
                fl.sw = SwitchConduction::Positive;
            } else if (arms.neg && -fwd - br.forward_drop_v > opts_.voltage_tol_v) {
                merge_caps(k, -br.forward_drop_v, h_next);
                fl.sw = SwitchConduction::Negative;
            }
            break;
        }
    }
}

void Stepper::apply_commands_at(double t, std::span<const GateCommand> cmds, std::size_t begin,
                                std::size_t end, double h_next) {
    bool any = false;
    for (std::size_t i = begin; i < end; ++i) {
        const auto& c = cmds[i];
        if (c.receiver < 0 || c.receiver >= system_.receiver_count())
            throw DimensionMismatch("gate command for unknown receiver");
        if (!system_.slots(c.receiver).switched)
            throw ValidationError("gate command for a fixed-capacitor receiver");
        auto& fl = state_.flags[static_cast<std::size_t>(c.receiver)];
        if (c.device == 0)
            fl.gate_m1 = c.on;
        else if (c.device == 1)
            fl.gate_m2 = c.on;
        else
            throw ValidationError("gate command device must be 0 or 1");
        any = true;
    }
    if (!any) return;
    for (int k = 0; k < system_.receiver_count(); ++k) resolve_switch_transition(k, h_next);
    prev_step_clean_ = false;
    compute_derivative(t);
}

void Stepper::apply_voltage_gates(double h_next) {
    bool any = false;
    for (int k = 0; k < system_.receiver_count(); ++k) {
        const auto& vg = voltage_gates_[static_cast<std::size_t>(k)];
        if (!vg.enabled || !system_.slots(k).switched) continue;
        auto& fl = state_.flags[static_cast<std::size_t>(k)];
        const bool want_on = std::abs(state_.x(system_.slots(k).v1)) < vg.v_ref;
        if (want_on != fl.gate_m1 || want_on != fl.gate_m2) {
            fl.gate_m1 = want_on;
            fl.gate_m2 = want_on;
            resolve_switch_transition(k, h_next);
            any = true;
        }
    }
    if (any) {
        prev_step_clean_ = false;
        compute_derivative(state_.t);
    }
}

void Stepper::advance_to(double t_end, std::span<const GateCommand> commands) {
    if (t_end < state_.t - 1e-15)
        throw ValidationError("advance_to: target time is in the past");
    for (std::size_t i = 0; i < commands.size(); ++i) {
        if (i > 0 && commands[i].t < commands[i - 1].t)
            throw ValidationError("advance_to: gate commands must be sorted by time");
        if (commands[i].t < state_.t - 1e-12 || commands[i].t > t_end + 1e-12)
            throw ValidationError("advance_to: gate command outside the advance window");
    }

    std::size_t ci = 0;
    auto fire_taps = [&]() {
        for (auto& tp : taps_)
            if (base_step_count_ % static_cast<std::uint64_t>(tp.every) == 0) tp.fn(*this, state_.t);
    };
    if (base_step_count_ == 0 && steps_ == 0 && !taps_.empty()) fire_taps();

    while (state_.t < t_end - 1e-15) {
        const int seg_idx = segment_index_at(state_.t);
        const auto& seg = program_[static_cast<std::size_t>(seg_idx)];
        const double h_base = opts_.base_step_override_s > 0.0
                                  ? opts_.base_step_override_s
                                  : 1.0 / (seg.frequency_hz * opts_.step_divisor);
        const double eps = 1e-9 * h_base;

        std::size_t cj = ci;
        while (cj < commands.size() && commands[cj].t <= state_.t + eps) ++cj;
        if (cj > ci) {
            apply_commands_at(state_.t, commands, ci, cj, h_base);
            ci = cj;
        }
        apply_voltage_gates(h_base);

        const double steps_in = std::floor((state_.t - seg.t_start) / h_base + 1e-6);
        double t_next = seg.t_start + (steps_in + 1.0) * h_base;
        bool on_grid = true;
        if (ci < commands.size() && commands[ci].t < t_next - eps) {
            t_next = commands[ci].t;
            on_grid = false;
        }
        if (static_cast<std::size_t>(seg_idx) + 1 < program_.size()) {
            const double t_seg = program_[static_cast<std::size_t>(seg_idx) + 1].t_start;
            if (t_seg > state_.t + eps && t_seg < t_next + eps) {
                t_next = t_seg;
                on_grid = false;
            }
        }
        if (t_end < t_next - eps) {
            t_next = t_end;
            on_grid = false;
        }

        const double h = t_next - state_.t;
        if (h <= eps) {
            state_.t = t_next;
            continue;
        }
        take_step(h);
        state_.t = t_next;  // land exactly, avoid accumulation drift

        if (on_grid) {
            ++base_step_count_;
            fire_taps();
        }
    }

    if (ci < commands.size())
        apply_commands_at(state_.t, commands, ci, commands.size(), base_step());
}

Stepper::ProbeId Stepper::resolve_probe(const std::string& name) const {
    auto suffix_rx = [&](std::size_t baselen) -> int {
        if (name.size() == baselen) return 0;  // bare name refers to receiver 0
        if (name[baselen] != '_') throw ValidationError("unknown probe: " + name);
        const int k = std::stoi(name.substr(baselen + 1));
        if (k < 0 || k >= system_.receiver_count())
            throw DimensionMismatch("probe receiver out of range: " + name);
        return k;
    };
    if (name == "I_T") return {1, -1};
    if (name == "V_LA") {
        if (!system_.has_auxiliary())
            throw ValidationError("V_LA probe requires an auxiliary coil");
        return {2, -1};
    }
    struct Entry {
        const char* prefix;
        int kind;
    };
    static constexpr Entry kEntries[] = {
        {"I_R1", 7},  {"I_R2", 8}, {"I_R", 3},  {"V_CR1", 4}, {"V_CR2", 5},
        {"V_SR", 6},  {"V_RL", 9}, {"I_L", 10}, {"V_LR", 11}, {"P_L", 12},
    };
    for (const auto& e : kEntries) {
        const std::string prefix(e.prefix);
        if (name.rfind(prefix, 0) == 0 &&
            (name.size() == prefix.size() || name[prefix.size()] == '_'))
            return {e.kind, suffix_rx(prefix.size())};
    }
    throw ValidationError("unknown probe: " + name);
}

double Stepper::probe(ProbeId id) const {
    const auto& x = state_.x;
    const auto& dx = state_.dxdt;
    switch (id.kind) {
        case 1:
            return system_.voltage_driven() ? x(0) : source_value(state_.t);
        case 2: {
            const auto& row = system_.auxiliary_row();
            double v = system_.voltage_driven() ? 0.0 : row(0) * source_derivative(state_.t);
            for (int a = 0; a < system_.dynamic_coil_count(); ++a) v += row(1 + a) * dx(a);
            return v;
        }
        default:
            break;
    }
    const int k = id.receiver;
    const auto& s = system_.slots(k);
    const auto& fl = state_.flags[static_cast<std::size_t>(k)];
    switch (id.kind) {
        case 3:
            return x(s.current);
        case 4:
            return x(s.v1);
        case 5:
            return s.switched ? x(s.v2) : 0.0;
        case 6:
            return s.switched ? x(s.v1) - x(s.v2) : 0.0;
        case 7: {
            const double c1 = s.switched
                                  ? std::get<SwitchedCapBranch>(system_.compensation(k)).c1_f
                                  : std::get<FixedCap>(system_.compensation(k)).c_f;
            return c1 * dx(s.v1);
        }
        case 8:
            return branch_current(x, dx, k);
        case 9: {
            const auto& load = system_.load(k);
            if (const auto* r = std::get_if<ResistorLoad>(&load)) return r->r_ohm * x(s.current);
            if (const auto* rc = std::get_if<RectifierRCLoad>(&load)) {
                if (s.v_load >= 0) return x(s.v_load);
                return fl.bridge != BridgeConduction::Off ? rc->r_ohm * std::abs(x(s.current))
                                                          : 0.0;
            }
            const auto& b = std::get<RectifierBatteryLoad>(load);
            return fl.bridge != BridgeConduction::Off
                       ? b.v_bat + b.r_series * std::abs(x(s.current))
                       : b.v_bat;
        }
        case 10: {
            if (std::holds_alternative<ResistorLoad>(system_.load(k))) return x(s.current);
            return fl.bridge != BridgeConduction::Off ? std::abs(x(s.current)) : 0.0;
        }
        case 11:
            return induced_emf(system_.coils().receiver_index(k));
        case 12: {
            const auto& load = system_.load(k);
            if (const auto* r = std::get_if<ResistorLoad>(&load))
                return r->r_ohm * x(s.current) * x(s.current);
            if (const auto* rc = std::get_if<RectifierRCLoad>(&load)) {
                if (s.v_load >= 0) return x(s.v_load) * x(s.v_load) / rc->r_ohm;
                return fl.bridge != BridgeConduction::Off
                           ? rc->r_ohm * x(s.current) * x(s.current)
                           : 0.0;
            }
            const auto& b = std::get<RectifierBatteryLoad>(load);
            return fl.bridge != BridgeConduction::Off ? b.v_bat * std::abs(x(s.current)) : 0.0;
        }
        default:
            throw ValidationError("bad probe id");
    }
}

}  // namespace wpt::circuit
