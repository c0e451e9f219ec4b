#pragma once

// Magnetically coupled coil set: transmitter, receivers, and an optional
// open-loop auxiliary sense coil, with a full symmetric mutual matrix.

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "wpt/errors.hpp"

namespace wpt::circuit {

struct Coil {
    double l_h = 0.0;    ///< self inductance, H
    double r_ohm = 0.0;  ///< series loss resistance, Ohm
};

class CoupledCoilSet {
public:
    /// Coil ordering: transmitter = 0, receivers = 1..n, auxiliary last.
    CoupledCoilSet(Coil transmitter, std::vector<Coil> receivers,
                   std::optional<Coil> auxiliary = std::nullopt);

    int coil_count() const { return static_cast<int>(coils_.size()); }
    int receiver_count() const { return n_receivers_; }
    int transmitter_index() const { return 0; }
    int receiver_index(int k) const;
    std::optional<int> auxiliary_index() const;
    bool has_auxiliary() const { return has_aux_; }

    const Coil& coil(int i) const { return coils_.at(static_cast<std::size_t>(i)); }
    Coil& coil(int i) { return coils_.at(static_cast<std::size_t>(i)); }

    void set_mutual(int i, int j, double m_h);
    double mutual(int i, int j) const;

    /// Full (L on diagonal, M off diagonal) inductance matrix.
    const Eigen::MatrixXd& inductance_matrix() const { return m_; }

    /// Checks 0 <= k_ij < 1 for every pair and positive definiteness of the
    /// full inductance matrix. Throws NonPhysicalCoupling.
    void validate() const;

private:
    std::vector<Coil> coils_;
    int n_receivers_ = 0;
    bool has_aux_ = false;
    Eigen::MatrixXd m_;
};

}  // namespace wpt::circuit
