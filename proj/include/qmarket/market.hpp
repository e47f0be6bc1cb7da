#ifndef QMARKET_MARKET_HPP
#define QMARKET_MARKET_HPP

#include <algorithm>
#include <compare>
#include <complex>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

// Market configuration, conserved-sector Fock bases and the diagonal
// observables built on them. Everything here is immutable after
// construction and safe to share across threads.

namespace qmarket {

struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct SymmetryViolation : ValidationError {
    using ValidationError::ValidationError;
};
struct DiagonalCoupling : ValidationError {
    using ValidationError::ValidationError;
};
struct NonpositiveFrequency : ValidationError {
    using ValidationError::ValidationError;
};

/// Static data of the market: N traders, L share types, mode frequencies
/// omega, symmetric exchange couplings p_{i,j}^(alpha) and the overall
/// interaction strength lambda.
class MarketConfig {
public:
    MarketConfig() = default;
    MarketConfig(int traders, int share_types)
        : n_(traders),
          l_(share_types),
          omega_share_(static_cast<std::size_t>(traders) * share_types, 1.0),
          omega_cash_(static_cast<std::size_t>(traders), 1.0),
          coupling_(static_cast<std::size_t>(traders) * traders * share_types, 0.0) {
        if (traders < 1 || share_types < 1)
            throw ValidationError("MarketConfig: traders and share_types must be positive");
    }

    int traders() const { return n_; }
    int share_types() const { return l_; }

    double omega_share(int trader, int share) const {
        return omega_share_[idx_ns(trader, share)];
    }
    double omega_cash(int trader) const { return omega_cash_[check_trader(trader)]; }
    double coupling(int i, int j, int share) const { return coupling_[idx_p(i, j, share)]; }

    void set_omega_share(int trader, int share, double w) {
        omega_share_[idx_ns(trader, share)] = w;
    }
    void set_omega_cash(int trader, double w) { omega_cash_[check_trader(trader)] = w; }
    /// Writes both orientations so the symmetry invariant holds by construction.
    void set_coupling(int i, int j, int share, double p) {
        coupling_[idx_p(i, j, share)] = p;
        coupling_[idx_p(j, i, share)] = p;
    }
    /// Raw write of a single orientation; validate_config will catch asymmetric input.
    void set_coupling_raw(int i, int j, int share, double p) { coupling_[idx_p(i, j, share)] = p; }

    double lambda = 0.0;

    /// All frequencies equal, all off-diagonal pairs coupled with the same p.
    static MarketConfig uniform(int traders, int share_types, double w_share, double w_cash,
                                double p, double lambda_) {
        MarketConfig cfg(traders, share_types);
        for (int j = 0; j < traders; ++j) {
            cfg.set_omega_cash(j, w_cash);
            for (int a = 0; a < share_types; ++a) cfg.set_omega_share(j, a, w_share);
        }
        for (int i = 0; i < traders; ++i)
            for (int j = i + 1; j < traders; ++j)
                for (int a = 0; a < share_types; ++a) cfg.set_coupling(i, j, a, p);
        cfg.lambda = lambda_;
        return cfg;
    }

private:
    std::size_t check_trader(int j) const {
        if (j < 0 || j >= n_) throw std::out_of_range("trader index out of range");
        return static_cast<std::size_t>(j);
    }
    std::size_t idx_ns(int j, int a) const {
        if (j < 0 || j >= n_ || a < 0 || a >= l_)
            throw std::out_of_range("(trader, share) index out of range");
        return static_cast<std::size_t>(j) * l_ + a;
    }
    std::size_t idx_p(int i, int j, int a) const {
        if (i < 0 || i >= n_ || j < 0 || j >= n_ || a < 0 || a >= l_)
            throw std::out_of_range("coupling index out of range");
        return (static_cast<std::size_t>(i) * n_ + j) * l_ + a;
    }

    int n_ = 0;
    int l_ = 0;
    std::vector<double> omega_share_;
    std::vector<double> omega_cash_;
    std::vector<double> coupling_;
};

/// Checks symmetry (p_ij = p_ji), vanishing diagonal (p_ii = 0), strictly
/// positive frequencies and lambda >= 0. Returns the config untouched.
inline const MarketConfig& validate_config(const MarketConfig& cfg) {
    const int n = cfg.traders();
    const int l = cfg.share_types();
    for (int j = 0; j < n; ++j) {
        if (!(cfg.omega_cash(j) > 0.0))
            throw NonpositiveFrequency("omega_cash must be strictly positive (trader " +
                                       std::to_string(j) + ")");
        for (int a = 0; a < l; ++a)
            if (!(cfg.omega_share(j, a) > 0.0))
                throw NonpositiveFrequency("omega_share must be strictly positive (trader " +
                                           std::to_string(j) + ", share " + std::to_string(a) +
                                           ")");
    }
    for (int i = 0; i < n; ++i)
        for (int a = 0; a < l; ++a) {
            if (cfg.coupling(i, i, a) != 0.0)
                throw DiagonalCoupling("self-coupling p_ii must vanish (trader " +
                                       std::to_string(i) + ", share " + std::to_string(a) + ")");
            for (int j = i + 1; j < n; ++j) {
                if (cfg.coupling(i, j, a) != cfg.coupling(j, i, a))
                    throw SymmetryViolation("coupling must be symmetric: p[" + std::to_string(i) +
                                            "][" + std::to_string(j) + "][" + std::to_string(a) +
                                            "] != transposed value");
                if (cfg.coupling(i, j, a) < 0.0)
                    throw ValidationError("couplings must be nonnegative");
            }
        }
    if (cfg.lambda < 0.0) throw ValidationError("lambda must be nonnegative");
    return cfg;
}

/// Conserved totals of a sector: shares of each type and total cash.
struct SectorKey {
    std::vector<int> total_shares;  // N_alpha per share type
    int total_cash = 0;             // K

    friend bool operator==(const SectorKey&, const SectorKey&) = default;
};

/// One market configuration: share counts n_{j,alpha} (trader-major) and
/// cash units k_j. Ordering is lexicographic on (n_{1,1}..n_{N,L}, k_1..k_N).
struct BasisState {
    std::vector<int> shares;  // N*L, row-major (trader, share)
    std::vector<int> cash;    // N

    int n(int trader, int share, int share_types) const {
        return shares[static_cast<std::size_t>(trader) * share_types + share];
    }
    int& n(int trader, int share, int share_types) {
        return shares[static_cast<std::size_t>(trader) * share_types + share];
    }
    int k(int trader) const { return cash[static_cast<std::size_t>(trader)]; }
    int& k(int trader) { return cash[static_cast<std::size_t>(trader)]; }

    friend auto operator<=>(const BasisState&, const BasisState&) = default;
};

/// Conserved totals carried by a state (column sums of n, sum of k).
inline SectorKey sector_of(const BasisState& s, int traders, int share_types) {
    SectorKey key;
    key.total_shares.assign(static_cast<std::size_t>(share_types), 0);
    for (int j = 0; j < traders; ++j)
        for (int a = 0; a < share_types; ++a) key.total_shares[a] += s.n(j, a, share_types);
    for (int j = 0; j < traders; ++j) key.total_cash += s.k(j);
    return key;
}

/// E_F = sum omega_{j,alpha} n_{j,alpha} + sum omega_j k_j.
inline double free_energy(const MarketConfig& cfg, const BasisState& s) {
    const int n = cfg.traders();
    const int l = cfg.share_types();
    if (static_cast<int>(s.shares.size()) != n * l || static_cast<int>(s.cash.size()) != n)
        throw std::invalid_argument("free_energy: state dimensions do not match config");
    double e = 0.0;
    for (int j = 0; j < n; ++j) {
        for (int a = 0; a < l; ++a) e += cfg.omega_share(j, a) * s.n(j, a, l);
        e += cfg.omega_cash(j) * s.k(j);
    }
    return e;
}

/// Portfolio of one trader at the given prices: sum_alpha P_alpha n_{l,alpha} + k_l.
inline double portfolio_value(const BasisState& s, std::span<const int> prices, int trader) {
    const int l = static_cast<int>(prices.size());
    if (l == 0 || s.shares.size() % l != 0)
        throw std::invalid_argument("portfolio_value: price row does not match state shape");
    const int n = static_cast<int>(s.shares.size()) / l;
    if (trader < 0 || trader >= n) throw std::out_of_range("portfolio_value: trader out of range");
    long long v = s.k(trader);
    for (int a = 0; a < l; ++a)
        v += static_cast<long long>(prices[a]) * s.n(trader, a, l);
    return static_cast<double>(v);
}

/// Ordered list of distinct basis states with cached free energies. Not
/// necessarily one sector; SectorBasis below adds the completeness
/// guarantee. Immutable once built.
class StateBasis {
public:
    StateBasis() = default;
    StateBasis(const MarketConfig& cfg, std::vector<BasisState> states)
        : states_(std::move(states)) {
        energies_.reserve(states_.size());
        for (const auto& s : states_) energies_.push_back(free_energy(cfg, s));
        order_.resize(states_.size());
        for (std::size_t i = 0; i < states_.size(); ++i) order_[i] = static_cast<int>(i);
        std::sort(order_.begin(), order_.end(),
                  [&](int a, int b) { return states_[a] < states_[b]; });
        for (std::size_t i = 1; i < order_.size(); ++i)
            if (states_[order_[i - 1]] == states_[order_[i]])
                throw std::invalid_argument("StateBasis: duplicate states");
    }

    int dimension() const { return static_cast<int>(states_.size()); }
    const BasisState& state(int i) const { return states_[static_cast<std::size_t>(i)]; }
    const std::vector<BasisState>& states() const { return states_; }
    double energy(int i) const { return energies_[static_cast<std::size_t>(i)]; }
    const std::vector<double>& energies() const { return energies_; }

    std::optional<int> find(const BasisState& s) const {
        auto it = std::lower_bound(order_.begin(), order_.end(), s,
                                   [&](int a, const BasisState& v) { return states_[a] < v; });
        if (it == order_.end() || !(states_[*it] == s)) return std::nullopt;
        return *it;
    }
    int index(const BasisState& s) const {
        auto i = find(s);
        if (!i) throw std::out_of_range("state not in basis");
        return *i;
    }

private:
    std::vector<BasisState> states_;
    std::vector<double> energies_;
    std::vector<int> order_;  // permutation sorting states_ lexicographically
};

/// Complete basis of one conservation sector, enumerated in lexicographic
/// order on the flattened occupations (deterministic, reproducible).
class SectorBasis : public StateBasis {
public:
    SectorBasis() = default;
    SectorBasis(const MarketConfig& cfg, SectorKey key)
        : StateBasis(cfg, enumerate_states(cfg, key)), key_(std::move(key)) {}

    const SectorKey& key() const { return key_; }

private:
    static std::vector<BasisState> enumerate_states(const MarketConfig& cfg,
                                                    const SectorKey& key) {
        const int n = cfg.traders();
        const int l = cfg.share_types();
        if (static_cast<int>(key.total_shares.size()) != l)
            throw std::invalid_argument("SectorKey: total_shares length must equal share_types");
        for (int v : key.total_shares)
            if (v < 0) throw std::invalid_argument("SectorKey: negative share total");
        if (key.total_cash < 0) throw std::invalid_argument("SectorKey: negative cash total");

        std::vector<BasisState> out;
        BasisState cur;
        cur.shares.assign(static_cast<std::size_t>(n) * l, 0);
        cur.cash.assign(static_cast<std::size_t>(n), 0);
        std::vector<int> rem_shares = key.total_shares;

        // Positions are filled in flattened order with ascending values, so
        // states come out already sorted lexicographically.
        auto fill_cash = [&](auto&& self, int j, int rem) -> void {
            if (j == n - 1) {
                cur.k(j) = rem;
                out.push_back(cur);
                return;
            }
            for (int v = 0; v <= rem; ++v) {
                cur.k(j) = v;
                self(self, j + 1, rem - v);
            }
        };
        auto fill_shares = [&](auto&& self, int pos) -> void {
            if (pos == n * l) {
                fill_cash(fill_cash, 0, key.total_cash);
                return;
            }
            const int j = pos / l;
            const int a = pos % l;
            if (j == n - 1) {
                cur.shares[static_cast<std::size_t>(pos)] = rem_shares[a];
                self(self, pos + 1);
                return;
            }
            for (int v = 0; v <= rem_shares[a]; ++v) {
                cur.shares[static_cast<std::size_t>(pos)] = v;
                rem_shares[a] -= v;
                self(self, pos + 1);
                rem_shares[a] += v;
            }
        };
        fill_shares(fill_shares, 0);
        return out;
    }

    SectorKey key_;
};

inline SectorBasis enumerate_sector(const MarketConfig& cfg, const SectorKey& key) {
    return SectorBasis(cfg, key);
}

/// Complex amplitudes over a StateBasis (the wave function Psi(t)). Holds a
/// non-owning pointer to the basis, which must outlive the vector.
class StateVector {
public:
    StateVector() = default;
    StateVector(const StateBasis& basis, Eigen::VectorXcd amplitudes)
        : basis_(&basis), amp_(std::move(amplitudes)) {
        if (amp_.size() != basis.dimension())
            throw std::invalid_argument("StateVector: amplitude count != basis dimension");
    }

    static StateVector basis_state(const StateBasis& basis, int index) {
        if (index < 0 || index >= basis.dimension())
            throw std::out_of_range("StateVector::basis_state: index out of range");
        Eigen::VectorXcd a = Eigen::VectorXcd::Zero(basis.dimension());
        a[index] = 1.0;
        return StateVector(basis, std::move(a));
    }
    static StateVector basis_state(const StateBasis& basis, const BasisState& s) {
        return basis_state(basis, basis.index(s));
    }

    const StateBasis& basis() const { return *basis_; }
    const Eigen::VectorXcd& amplitudes() const { return amp_; }
    std::complex<double> amplitude(int i) const { return amp_[i]; }
    double norm() const { return amp_.norm(); }

    void require_normalized(double tol = 1e-10) const {
        if (std::abs(norm() - 1.0) > tol)
            throw std::invalid_argument("StateVector: wave function is not normalized");
    }

private:
    const StateBasis* basis_ = nullptr;
    Eigen::VectorXcd amp_;
};

/// Piecewise-constant share prices: M rows of L nonnegative integer prices,
/// row k active on [k*h, (k+1)*h).
class PriceTrajectory {
public:
    PriceTrajectory() = default;
    PriceTrajectory(double step, int share_types, std::vector<int> prices)
        : step_(step), l_(share_types), prices_(std::move(prices)) {
        if (!(step_ > 0.0)) throw ValidationError("PriceTrajectory: step h must be positive");
        if (l_ < 1) throw ValidationError("PriceTrajectory: share_types must be positive");
        if (prices_.empty() || prices_.size() % static_cast<std::size_t>(l_) != 0)
            throw ValidationError("PriceTrajectory: price matrix must be M x L with M >= 1");
        for (int p : prices_)
            if (p < 0) throw ValidationError("PriceTrajectory: prices must be nonnegative integers");
    }

    double step() const { return step_; }
    int share_types() const { return l_; }
    int intervals() const { return static_cast<int>(prices_.size()) / l_; }
    double duration() const { return step_ * intervals(); }

    int price(int interval, int share) const {
        if (interval < 0 || interval >= intervals())
            throw std::out_of_range("PriceTrajectory: interval out of range");
        return prices_[static_cast<std::size_t>(interval) * l_ + share];
    }
    std::span<const int> row(int interval) const {
        if (interval < 0 || interval >= intervals())
            throw std::out_of_range("PriceTrajectory: interval out of range");
        return {prices_.data() + static_cast<std::size_t>(interval) * l_,
                static_cast<std::size_t>(l_)};
    }

    /// Interval containing t; t == duration() maps to the last interval.
    int interval_at(double t) const {
        if (t < 0.0 || t > duration() * (1.0 + 1e-12))
            throw std::out_of_range("PriceTrajectory: time outside [0, M*h]");
        int k = static_cast<int>(t / step_);
        return std::min(k, intervals() - 1);
    }
    /// Interval for the classical-field reading: rows extend past M*h.
    int interval_at_extended(double t) const {
        if (t < 0.0) throw std::out_of_range("PriceTrajectory: negative time");
        int k = static_cast<int>(t / step_);
        return std::min(k, intervals() - 1);
    }
    std::span<const int> row_at_extended(double t) const { return row(interval_at_extended(t)); }

private:
    double step_ = 0.0;
    int l_ = 0;
    std::vector<int> prices_;  // M*L row-major
};

}  // namespace qmarket

#endif
