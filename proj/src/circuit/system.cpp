#include "wpt/circuit/system.hpp"

#include <string>
#include <utility>

namespace wpt::circuit {

SimSystem::SimSystem(CoupledCoilSet coils, std::vector<Compensation> compensation,
                     std::vector<LoadModel> loads, SourceModel source)
    : coils_(std::move(coils)),
      compensation_(std::move(compensation)),
      loads_(std::move(loads)),
      source_(std::move(source)) {
    coils_.validate();
    validate(source_);
    const int n_rx = coils_.receiver_count();
    if (static_cast<int>(compensation_.size()) != n_rx)
        throw DimensionMismatch("build_system: " + std::to_string(compensation_.size()) +
                                " compensation branches for " + std::to_string(n_rx) +
                                " receiver coils");
    if (static_cast<int>(loads_.size()) != n_rx)
        throw DimensionMismatch("build_system: " + std::to_string(loads_.size()) + " loads for " +
                                std::to_string(n_rx) + " receiver coils");
    for (const auto& c : compensation_) validate(c);
    for (const auto& l : loads_) validate(l);

    // dynamic coils in state order: transmitter first when voltage driven
    if (voltage_driven()) dyn_to_coil_.push_back(coils_.transmitter_index());
    for (int k = 0; k < n_rx; ++k) dyn_to_coil_.push_back(coils_.receiver_index(k));
    n_dyn_ = static_cast<int>(dyn_to_coil_.size());

    int next = n_dyn_;
    receivers_.resize(static_cast<std::size_t>(n_rx));
    for (int k = 0; k < n_rx; ++k) {
        auto& s = receivers_[static_cast<std::size_t>(k)];
        s.current = (voltage_driven() ? 1 : 0) + k;
        s.switched = std::holds_alternative<SwitchedCapBranch>(compensation_[static_cast<std::size_t>(k)]);
        s.v1 = next++;
        if (s.switched) s.v2 = next++;
        const auto& load = loads_[static_cast<std::size_t>(k)];
        s.has_bridge = !std::holds_alternative<ResistorLoad>(load);
        if (std::holds_alternative<RectifierRCLoad>(load)) s.v_load = next++;
    }
    if (voltage_driven()) {
        const auto& vd = std::get<VoltageDrivenSource>(source_);
        if (vd.c_series_f > 0.0) v_ct_ = next++;
    }
    dim_ = next;

    m_dyn_.resize(n_dyn_, n_dyn_);
    for (int a = 0; a < n_dyn_; ++a)
        for (int b = 0; b < n_dyn_; ++b)
            m_dyn_(a, b) = coils_.inductance_matrix()(dyn_to_coil_[static_cast<std::size_t>(a)],
                                                      dyn_to_coil_[static_cast<std::size_t>(b)]);

    m_tx_.resize(n_dyn_);
    for (int a = 0; a < n_dyn_; ++a) {
        const int ci = dyn_to_coil_[static_cast<std::size_t>(a)];
        // the transmitter itself (voltage-driven mode) couples through m_dyn_
        m_tx_(a) = ci == coils_.transmitter_index()
                       ? 0.0
                       : coils_.mutual(ci, coils_.transmitter_index());
    }

    if (coils_.has_auxiliary()) {
        const int aux = *coils_.auxiliary_index();
        m_aux_.resize(1 + n_dyn_);
        m_aux_(0) = coils_.mutual(aux, coils_.transmitter_index());
        for (int a = 0; a < n_dyn_; ++a)
            m_aux_(1 + a) = dyn_to_coil_[static_cast<std::size_t>(a)] == aux
                                ? 0.0
                                : coils_.mutual(aux, dyn_to_coil_[static_cast<std::size_t>(a)]);
    }
}

SimSystem build_system(CoupledCoilSet coils, std::vector<Compensation> compensation,
                       std::vector<LoadModel> loads, SourceModel source) {
    return SimSystem(std::move(coils), std::move(compensation), std::move(loads),
                     std::move(source));
}

}  // namespace wpt::circuit
