#include "wpt/circuit/coils.hpp"

#include <cmath>
#include <string>

namespace wpt::circuit {

CoupledCoilSet::CoupledCoilSet(Coil transmitter, std::vector<Coil> receivers,
                               std::optional<Coil> auxiliary) {
    coils_.push_back(transmitter);
    n_receivers_ = static_cast<int>(receivers.size());
    for (const auto& r : receivers) coils_.push_back(r);
    if (auxiliary) {
        coils_.push_back(*auxiliary);
        has_aux_ = true;
    }
    for (const auto& c : coils_) {
        if (c.l_h <= 0.0) throw ValidationError("CoupledCoilSet: inductances must be positive");
        if (c.r_ohm < 0.0) throw ValidationError("CoupledCoilSet: resistances must be >= 0");
    }
    const auto n = static_cast<Eigen::Index>(coils_.size());
    m_ = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) m_(i, i) = coils_[static_cast<std::size_t>(i)].l_h;
}

int CoupledCoilSet::receiver_index(int k) const {
    if (k < 0 || k >= n_receivers_)
        throw DimensionMismatch("CoupledCoilSet: receiver index " + std::to_string(k) +
                                " out of range");
    return 1 + k;
}

std::optional<int> CoupledCoilSet::auxiliary_index() const {
    if (!has_aux_) return std::nullopt;
    return coil_count() - 1;
}

void CoupledCoilSet::set_mutual(int i, int j, double m_h) {
    if (i < 0 || j < 0 || i >= coil_count() || j >= coil_count() || i == j)
        throw DimensionMismatch("CoupledCoilSet::set_mutual: bad coil pair");
    m_(i, j) = m_h;
    m_(j, i) = m_h;
}

double CoupledCoilSet::mutual(int i, int j) const {
    if (i < 0 || j < 0 || i >= coil_count() || j >= coil_count())
        throw DimensionMismatch("CoupledCoilSet::mutual: bad coil pair");
    return m_(i, j);
}

void CoupledCoilSet::validate() const {
    const auto n = static_cast<Eigen::Index>(coil_count());
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double k = m_(i, j) / std::sqrt(m_(i, i) * m_(j, j));
            if (k < 0.0)
                throw NonPhysicalCoupling("coupling coefficient k(" + std::to_string(i) + "," +
                                          std::to_string(j) + ") is negative");
            if (k >= 1.0)
                throw NonPhysicalCoupling("coupling coefficient k(" + std::to_string(i) + "," +
                                          std::to_string(j) + ") = " + std::to_string(k) +
                                          " >= 1");
        }
    }
    Eigen::LLT<Eigen::MatrixXd> llt(m_);
    if (llt.info() != Eigen::Success)
        throw NonPhysicalCoupling("inductance matrix is not positive definite");
}

}  // namespace wpt::circuit
