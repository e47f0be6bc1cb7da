#ifndef QMARKET_PROPAGATOR_HPP
#define QMARKET_PROPAGATOR_HPP

#include <cmath>
#include <complex>
#include <map>
#include <memory>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "market.hpp"
#include "operators.hpp"

// Brute-force oracle: exact unitary evolution under the piecewise-constant
// Hamiltonian via per-interval Hermitian eigendecompositions.

namespace qmarket {

struct PropagationResult {
    StateVector psi_t;
    std::vector<std::pair<double, StateVector>> checkpoints;  // interval boundaries
};

/// Exact propagator for one (config, basis, trajectory) triple. Interval
/// Hamiltonians are eigendecomposed once (identical price rows share a
/// decomposition); everything is read-only afterwards.
class ExactPropagator {
public:
    ExactPropagator(const MarketConfig& cfg, const StateBasis& basis,
                    const PriceTrajectory& trajectory)
        : basis_(&basis), trajectory_(trajectory) {
        const int m = trajectory.intervals();
        interval_eig_.resize(static_cast<std::size_t>(m));
        std::map<std::vector<int>, std::shared_ptr<const Eig>> by_row;
        for (int k = 0; k < m; ++k) {
            std::vector<int> row(trajectory.row(k).begin(), trajectory.row(k).end());
            auto& slot = by_row[row];
            if (!slot) {
                Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> solver(
                    build_H(cfg, basis, trajectory, k).dense());
                if (solver.info() != Eigen::Success)
                    throw std::runtime_error("ExactPropagator: eigendecomposition failed");
                auto eig = std::make_shared<Eig>();
                eig->evals = solver.eigenvalues();
                eig->evecs = solver.eigenvectors();
                slot = std::move(eig);
            }
            interval_eig_[static_cast<std::size_t>(k)] = slot;
        }
    }

    const StateBasis& basis() const { return *basis_; }
    const PriceTrajectory& trajectory() const { return trajectory_; }

    /// exp(-i H_k s) psi.
    Eigen::VectorXcd evolve_interval(int k, const Eigen::VectorXcd& psi, double s) const {
        const Eig& e = *interval_eig_[static_cast<std::size_t>(k)];
        Eigen::VectorXcd modal = e.evecs.adjoint() * psi;
        for (Eigen::Index q = 0; q < modal.size(); ++q)
            modal[q] *= std::polar(1.0, -e.evals[q] * s);
        return e.evecs * modal;
    }

    StateVector propagate(const StateVector& psi0, double t) const {
        return propagate_impl(psi0, t, nullptr);
    }

    PropagationResult propagate_checkpointed(const StateVector& psi0, double t) const {
        PropagationResult res;
        res.psi_t = propagate_impl(psi0, t, &res.checkpoints);
        return res;
    }

private:
    struct Eig {
        Eigen::VectorXd evals;
        Eigen::MatrixXcd evecs;
    };

    StateVector propagate_impl(const StateVector& psi0, double t,
                               std::vector<std::pair<double, StateVector>>* checkpoints) const {
        if (&psi0.basis() != basis_)
            throw std::invalid_argument("propagate: state vector built over a different basis");
        if (t < 0.0 || t > trajectory_.duration() * (1.0 + 1e-12))
            throw std::out_of_range("propagate: t outside [0, M*h]");
        psi0.require_normalized();

        const double h = trajectory_.step();
        const int full = std::min(static_cast<int>(t / h), trajectory_.intervals());
        Eigen::VectorXcd psi = psi0.amplitudes();
        if (checkpoints) checkpoints->emplace_back(0.0, StateVector(*basis_, psi));
        int k = 0;
        for (; k < full; ++k) {
            psi = evolve_interval(k, psi, h);
            if (checkpoints) checkpoints->emplace_back(h * (k + 1), StateVector(*basis_, psi));
        }
        const double rest = t - h * k;
        if (rest > 0.0 && k < trajectory_.intervals()) psi = evolve_interval(k, psi, rest);
        return StateVector(*basis_, std::move(psi));
    }

    const StateBasis* basis_;
    PriceTrajectory trajectory_;
    std::vector<std::shared_ptr<const Eig>> interval_eig_;
};

/// All interval-boundary states of one initial vector, computed eagerly so
/// that later queries at arbitrary t only evolve the partial interval.
class PropagationCache {
public:
    PropagationCache(const ExactPropagator& prop, const StateVector& psi0) : prop_(&prop) {
        auto res = prop.propagate_checkpointed(psi0, prop.trajectory().duration());
        boundaries_.reserve(res.checkpoints.size());
        for (auto& [time, sv] : res.checkpoints) boundaries_.push_back(std::move(sv));
    }

    StateVector at(double t) const {
        const PriceTrajectory& traj = prop_->trajectory();
        if (t < 0.0 || t > traj.duration() * (1.0 + 1e-12))
            throw std::out_of_range("PropagationCache: t outside [0, M*h]");
        const double h = traj.step();
        int k = std::min(static_cast<int>(t / h), traj.intervals() - 1);
        const double rest = t - h * k;
        if (rest == 0.0) return boundaries_[static_cast<std::size_t>(k)];
        if (k + 1 < static_cast<int>(boundaries_.size()) && rest >= h)
            return boundaries_[static_cast<std::size_t>(k + 1)];
        Eigen::VectorXcd psi =
            prop_->evolve_interval(k, boundaries_[static_cast<std::size_t>(k)].amplitudes(), rest);
        return StateVector(prop_->basis(), std::move(psi));
    }

private:
    const ExactPropagator* prop_;
    std::vector<StateVector> boundaries_;
};

inline PropagationResult propagate(const MarketConfig& cfg, const StateBasis& basis,
                                   const PriceTrajectory& trajectory, const StateVector& psi0,
                                   double t) {
    ExactPropagator prop(cfg, basis, trajectory);
    return prop.propagate_checkpointed(psi0, t);
}

/// |<phi_to, Psi(t)>|^2 with Psi(0) = phi_from.
inline double exact_transition_probability(const MarketConfig& cfg, const StateBasis& basis,
                                           const PriceTrajectory& trajectory,
                                           const BasisState& from, const BasisState& to,
                                           double t) {
    const int i_from = basis.index(from);
    const int i_to = basis.index(to);
    ExactPropagator prop(cfg, basis, trajectory);
    StateVector psi = prop.propagate(StateVector::basis_state(basis, i_from), t);
    return std::norm(psi.amplitude(i_to));
}

struct Occupations {
    std::vector<double> shares;  // <n_{l,alpha}> per share type
    double cash = 0.0;           // <k_l>
};

/// Probability-weighted occupations of one trader (diagonal observables).
inline Occupations expectation_occupations(const PropagationResult& result, int trader) {
    const StateBasis& basis = result.psi_t.basis();
    if (basis.dimension() == 0) throw std::invalid_argument("empty basis");
    const int l = static_cast<int>(basis.state(0).shares.size() /
                                   basis.state(0).cash.size());
    const int n = static_cast<int>(basis.state(0).cash.size());
    if (trader < 0 || trader >= n)
        throw std::out_of_range("expectation_occupations: trader out of range");
    Occupations occ;
    occ.shares.assign(static_cast<std::size_t>(l), 0.0);
    for (int i = 0; i < basis.dimension(); ++i) {
        const double w = std::norm(result.psi_t.amplitude(i));
        const BasisState& s = basis.state(i);
        for (int a = 0; a < l; ++a) occ.shares[static_cast<std::size_t>(a)] += w * s.n(trader, a, l);
        occ.cash += w * s.k(trader);
    }
    return occ;
}

/// Interaction-picture coefficients c_F(t) = e^(i E_F t) <phi_F, Psi(t)>,
/// the quantities the Dyson hierarchy expands in powers of lambda.
inline Eigen::VectorXcd interaction_picture_coefficients(const StateVector& psi_t, double t) {
    const StateBasis& basis = psi_t.basis();
    Eigen::VectorXcd c(basis.dimension());
    for (int i = 0; i < basis.dimension(); ++i)
        c[i] = std::polar(1.0, basis.energy(i) * t) * psi_t.amplitude(i);
    return c;
}

}  // namespace qmarket

#endif
