#pragma once

// Immutable simulation system: validated coil set, per-receiver compensation
// and load, source model, and the state-vector layout shared by the stepper.

#include <Eigen/Dense>
#include <vector>

#include "wpt/circuit/coils.hpp"
#include "wpt/circuit/elements.hpp"

namespace wpt::circuit {

struct ReceiverSlots {
    int current = -1;  ///< loop current state index
    int v1 = -1;       ///< always-connected capacitor voltage
    int v2 = -1;       ///< gated capacitor voltage (switched compensation only)
    int v_load = -1;   ///< rectifier-RC tank voltage
    bool switched = false;
    bool has_bridge = false;
};

class SimSystem {
public:
    SimSystem(CoupledCoilSet coils, std::vector<Compensation> compensation,
              std::vector<LoadModel> loads, SourceModel source);

    int receiver_count() const { return static_cast<int>(receivers_.size()); }
    int state_dim() const { return dim_; }
    bool voltage_driven() const { return std::holds_alternative<VoltageDrivenSource>(source_); }
    int transmitter_state_index() const { return voltage_driven() ? 0 : -1; }
    int transmitter_cap_index() const { return v_ct_; }

    const ReceiverSlots& slots(int k) const { return receivers_.at(static_cast<std::size_t>(k)); }
    const CoupledCoilSet& coils() const { return coils_; }
    const Compensation& compensation(int k) const {
        return compensation_.at(static_cast<std::size_t>(k));
    }
    const LoadModel& load(int k) const { return loads_.at(static_cast<std::size_t>(k)); }
    const SourceModel& source() const { return source_; }

    /// Inductance matrix over dynamic coils (receivers, plus the transmitter
    /// when voltage driven), in state order.
    const Eigen::MatrixXd& dynamic_inductance() const { return m_dyn_; }
    /// Mutual inductance between each dynamic coil and the transmitter
    /// (ideal-current mode coupling column).
    const Eigen::VectorXd& transmitter_coupling() const { return m_tx_; }
    /// Mutual inductance between the auxiliary coil and [transmitter, dynamic
    /// coils...]; empty when there is no auxiliary coil.
    const Eigen::VectorXd& auxiliary_row() const { return m_aux_; }
    bool has_auxiliary() const { return coils_.has_auxiliary(); }

    int dynamic_coil_count() const { return n_dyn_; }
    /// Coil-set index of dynamic coil `d` (state index d).
    int dynamic_coil_set_index(int d) const { return dyn_to_coil_.at(static_cast<std::size_t>(d)); }

private:
    CoupledCoilSet coils_;
    std::vector<Compensation> compensation_;
    std::vector<LoadModel> loads_;
    SourceModel source_;

    std::vector<ReceiverSlots> receivers_;
    std::vector<int> dyn_to_coil_;
    int n_dyn_ = 0;
    int dim_ = 0;
    int v_ct_ = -1;
    Eigen::MatrixXd m_dyn_;
    Eigen::VectorXd m_tx_;
    Eigen::VectorXd m_aux_;
};

/// Assembles and validates the full network. Throws NonPhysicalCoupling or
/// DimensionMismatch; element invariants raise ValidationError.
SimSystem build_system(CoupledCoilSet coils, std::vector<Compensation> compensation,
                       std::vector<LoadModel> loads, SourceModel source);

}  // namespace wpt::circuit
