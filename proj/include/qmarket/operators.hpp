#ifndef QMARKET_OPERATORS_HPP
#define QMARKET_OPERATORS_HPP

#include <cmath>
#include <complex>
#include <cstdio>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <utility>

#include "market.hpp"

// Ladder-operator action of the exchange monomials and sparse assembly of
// H0, H_I(prices) and H(t) over a basis.

namespace qmarket {

/// One H_I monomial: trader `buyer` acquires one share of type `share`
/// from trader `seller`, paying the current price in cash units.
struct ExchangeMove {
    int buyer = 0;
    int seller = 0;
    int share = 0;
};

struct Exchanged {
    BasisState target;
    double amplitude = 0.0;  // Gamma, always nonnegative
};

namespace detail {

// (k+P)!/k! as a product of P consecutive integers; never forms a factorial.
inline double rising_cash_ratio(int k, int price) {
    double r = 1.0;
    for (int step = 1; step <= price; ++step) r *= static_cast<double>(k + step);
    return r;
}

// k!/(k-P)! as a product of P consecutive integers; 0 when k < P.
inline double falling_cash_ratio(int k, int price) {
    if (k < price) return 0.0;
    double r = 1.0;
    for (int step = 0; step < price; ++step) r *= static_cast<double>(k - step);
    return r;
}

}  // namespace detail

/// Applies a_dag_{i,a} a_{j,a} c_i^P c_dag_j^P to a number state. Empty when
/// the seller has no share or the buyer has fewer than P cash units.
inline std::optional<Exchanged> apply_exchange(const BasisState& s, const ExchangeMove& m,
                                               int price, int share_types) {
    if (m.buyer == m.seller) throw std::invalid_argument("apply_exchange: buyer == seller");
    if (price < 0) throw std::invalid_argument("apply_exchange: negative price");
    const int n_sell = s.n(m.seller, m.share, share_types);
    const int k_buy = s.k(m.buyer);
    if (n_sell < 1 || k_buy < price) return std::nullopt;

    const int n_buy = s.n(m.buyer, m.share, share_types);
    const int k_sell = s.k(m.seller);
    const double gamma2 = detail::rising_cash_ratio(k_sell, price) *
                          detail::falling_cash_ratio(k_buy, price) *
                          static_cast<double>(n_sell) * (1.0 + n_buy);

    Exchanged out;
    out.target = s;
    out.target.n(m.seller, m.share, share_types) = n_sell - 1;
    out.target.n(m.buyer, m.share, share_types) = n_buy + 1;
    out.target.k(m.seller) = k_sell + price;
    out.target.k(m.buyer) = k_buy - price;
    out.amplitude = std::sqrt(gamma2);
    return out;
}

/// Sparse Hermitian matrix with deterministic (row, col) iteration order.
class SparseHermitian {
public:
    using Entry = std::pair<std::pair<int, int>, std::complex<double>>;

    explicit SparseHermitian(int dim) : dim_(dim) {}

    int dim() const { return dim_; }

    std::complex<double> entry(int r, int c) const {
        auto it = entries_.find({r, c});
        return it == entries_.end() ? std::complex<double>(0.0) : it->second;
    }

    void accumulate(int r, int c, std::complex<double> v) {
        if (r < 0 || r >= dim_ || c < 0 || c >= dim_)
            throw std::out_of_range("SparseHermitian: entry out of range");
        entries_[{r, c}] += v;
    }

    void scale(double f) {
        for (auto& [rc, v] : entries_) v *= f;
    }

    const std::map<std::pair<int, int>, std::complex<double>>& entries() const {
        return entries_;
    }

    double max_hermiticity_defect() const {
        double worst = 0.0;
        for (const auto& [rc, v] : entries_)
            worst = std::max(worst, std::abs(v - std::conj(entry(rc.second, rc.first))));
        return worst;
    }

    double max_abs_entry() const {
        double worst = 0.0;
        for (const auto& [rc, v] : entries_) worst = std::max(worst, std::abs(v));
        return worst;
    }

    Eigen::MatrixXcd dense() const {
        Eigen::MatrixXcd m = Eigen::MatrixXcd::Zero(dim_, dim_);
        for (const auto& [rc, v] : entries_) m(rc.first, rc.second) = v;
        return m;
    }

    template <typename Fn>
    void for_each_in_row(int r, Fn&& fn) const {
        for (auto it = entries_.lower_bound({r, 0});
             it != entries_.end() && it->first.first == r; ++it)
            fn(it->first.second, it->second);
    }

private:
    int dim_ = 0;
    std::map<std::pair<int, int>, std::complex<double>> entries_;
};

/// Free Hamiltonian: diagonal of cached free energies.
inline SparseHermitian build_H0(const MarketConfig& cfg, const StateBasis& basis) {
    (void)cfg;
    SparseHermitian h(basis.dimension());
    for (int i = 0; i < basis.dimension(); ++i) h.accumulate(i, i, basis.energy(i));
    return h;
}

/// H_I = 2 sum_{i,j,alpha} p_{i,j}^(alpha) x_dag_{i,alpha} x_{j,alpha} at a
/// fixed price row. Every generated target must live in the basis; the
/// exchange conserves the sector totals, so a complete sector is closed.
inline SparseHermitian build_HI(const MarketConfig& cfg, const StateBasis& basis,
                                std::span<const int> prices) {
    const int n = cfg.traders();
    const int l = cfg.share_types();
    if (static_cast<int>(prices.size()) != l)
        throw std::invalid_argument("build_HI: price row length != share_types");
    SparseHermitian h(basis.dimension());
    for (int src = 0; src < basis.dimension(); ++src) {
        const BasisState& s = basis.state(src);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                if (i == j) continue;
                for (int a = 0; a < l; ++a) {
                    const double p = cfg.coupling(i, j, a);
                    if (p == 0.0) continue;
                    auto ex = apply_exchange(s, {i, j, a}, prices[a], l);
                    if (!ex) continue;
                    auto tgt = basis.find(ex->target);
                    if (!tgt)
                        throw std::logic_error(
                            "build_HI: exchange target missing from basis (basis is not closed "
                            "under H_I)");
                    h.accumulate(*tgt, src, p * ex->amplitude);
                }
            }
    }
    h.scale(2.0);
    return h;
}

/// H = H0 + lambda * H_I(prices row k).
inline SparseHermitian build_H(const MarketConfig& cfg, const StateBasis& basis,
                               const PriceTrajectory& trajectory, int interval) {
    if (interval < 0 || interval >= trajectory.intervals())
        throw std::out_of_range("build_H: interval out of range");
    SparseHermitian h = build_HI(cfg, basis, trajectory.row(interval));
    h.scale(cfg.lambda);
    for (int i = 0; i < basis.dimension(); ++i) h.accumulate(i, i, basis.energy(i));
    return h;
}

/// Coordinate-format dump: "row col re im", one entry per line, sorted by
/// (row, col). Byte-stable for identical matrices.
inline void dump_coordinate(const SparseHermitian& m, std::ostream& os) {
    char buf[96];
    for (const auto& [rc, v] : m.entries()) {
        std::snprintf(buf, sizeof(buf), "%d %d %.17g %.17g\n", rc.first, rc.second, v.real(),
                      v.imag());
        os << buf;
    }
}

}  // namespace qmarket

#endif
