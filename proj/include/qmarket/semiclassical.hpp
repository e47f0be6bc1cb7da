#ifndef QMARKET_SEMICLASSICAL_HPP
#define QMARKET_SEMICLASSICAL_HPP

#include <cmath>
#include <complex>
#include <vector>

#include "exp_poly.hpp"
#include "market.hpp"
#include "operators.hpp"

// Semi-classical Heisenberg expansion: Theta integrals, pair weights M and
// M-tilde, second-order occupation/cash shifts and portfolio evolution under
// classical price functions. Prices come from a PriceTrajectory read as a
// classical field: rows extend unchanged past the last interval, so every
// quantity is evaluable at arbitrary t >= 0.

namespace qmarket {

struct ThetaSet {
    double theta0 = 0.0;  // real phase integral
    std::complex<double> theta1;
    std::complex<double> theta2;
    std::complex<double> theta3;
};

/// The nested integrals Theta^(0..3) for one (j, l, alpha) triple:
///   Theta0 = (w_j - w_l) int P_a - (w_{j,a} - w_{l,a}) t      (piecewise linear)
///   Theta1 = int e^(-i Theta0),  Theta2 = int Theta1 e^(-i Theta0),
///   Theta3 = int P_a Theta1 e^(-i Theta0).
/// Piecewise-constant prices make every level an exponential-polynomial
/// kernel, so the evaluation is closed-form.
class ThetaIntegrals {
public:
    ThetaIntegrals(const MarketConfig& cfg, const PriceTrajectory& trajectory, int j, int l,
                   int share)
        : h_(trajectory.step()), m_(trajectory.intervals()) {
        const double dw_cash = cfg.omega_cash(j) - cfg.omega_cash(l);
        const double dw_share = cfg.omega_share(j, share) - cfg.omega_share(l, share);
        segments_.reserve(static_cast<std::size_t>(m_));
        Boundary b{};  // all Theta vanish at t = 0
        for (int k = 0; k < m_; ++k) {
            Segment seg;
            seg.price = trajectory.price(k, share);
            seg.slope = dw_cash * seg.price - dw_share;
            seg.start = b;
            segments_.push_back(seg);
            b = advance(seg, h_, h_);
        }
        end_ = b;
    }

    ThetaSet at(double t) const {
        if (t < 0.0) throw std::out_of_range("ThetaIntegrals: t must be >= 0");
        const int k = std::min(static_cast<int>(t / h_), m_ - 1);
        if (t >= h_ * m_) {
            // classical field extends the last row past M*h
            Segment ext = segments_.back();
            ext.start = end_;
            const double u = t - h_ * m_;
            return to_set(advance(ext, u, std::max(u, h_)));
        }
        const Segment& seg = segments_[static_cast<std::size_t>(k)];
        const double u = t - h_ * k;
        return to_set(advance(seg, u, h_));
    }

private:
    struct Boundary {
        double theta0 = 0.0;
        std::complex<double> th1{}, th2{}, th3{};
    };
    struct Segment {
        int price = 0;
        double slope = 0.0;  // d Theta0 / dt on the segment
        Boundary start;
    };

    static Boundary advance(const Segment& seg, double u, double domain_len) {
        Boundary out;
        out.theta0 = seg.start.theta0 + seg.slope * u;
        // e^(-i Theta0(t_k + s)) = e^(-i theta0_start) e^(-i slope s)
        const std::complex<double> phase0 = std::polar(1.0, -seg.start.theta0);
        ExpPolyKernel osc;
        osc.add_term(phase0, -seg.slope, 0);
        const ExpPolyKernel incr1 = osc.integrated(domain_len);
        out.th1 = seg.start.th1 + incr1.eval(u);

        ExpPolyKernel theta1_kernel = incr1;
        theta1_kernel += ExpPolyKernel::constant(seg.start.th1);
        const ExpPolyKernel incr2 =
            theta1_kernel.shifted(-seg.slope).scaled(phase0).integrated(domain_len);
        const std::complex<double> d2 = incr2.eval(u);
        out.th2 = seg.start.th2 + d2;
        out.th3 = seg.start.th3 + static_cast<double>(seg.price) * d2;
        return out;
    }

    static ThetaSet to_set(const Boundary& b) { return {b.theta0, b.th1, b.th2, b.th3}; }

    double h_;
    int m_;
    std::vector<Segment> segments_;
    Boundary end_;
};

inline ThetaIntegrals theta_integrals(const MarketConfig& cfg, const PriceTrajectory& trajectory,
                                      int j, int l, int share) {
    return ThetaIntegrals(cfg, trajectory, j, l, share);
}

inline ThetaSet theta_integrals(const MarketConfig& cfg, const PriceTrajectory& trajectory,
                                int j, int l, int share, double t) {
    return ThetaIntegrals(cfg, trajectory, j, l, share).at(t);
}

/// Pair weights M_{j,l;a} built from the initial occupations and the cash
/// factorial ratios, with the antisymmetrized M-tilde driving the shifts.
struct PairWeight {
    double m = 0.0;          // M_{j,l;alpha}
    double m_reverse = 0.0;  // M_{l,j;alpha}
    double mtilde = 0.0;     // M_{j,l;alpha} - M_{l,j;alpha}
};

inline PairWeight pair_weight(const BasisState& s, int price, int j, int l, int share,
                              int share_types) {
    auto m_of = [&](int first, int second) {
        const double nf = s.n(first, share, share_types);
        const double ns = s.n(second, share, share_types);
        const double rise_f = detail::rising_cash_ratio(s.k(first), price);
        const double rise_s = detail::rising_cash_ratio(s.k(second), price);
        const double fall_s = detail::falling_cash_ratio(s.k(second), price);
        return nf * ns * rise_f * rise_s - nf * (1.0 + ns) * rise_f * fall_s;
    };
    PairWeight pw;
    pw.m = m_of(j, l);
    pw.m_reverse = m_of(l, j);
    pw.mtilde = pw.m - pw.m_reverse;
    return pw;
}

struct OccupationShift {
    std::vector<double> shares;  // delta n_{l,alpha}
    double cash = 0.0;           // delta k_l
};

/// Second-order shifts of one trader's occupations:
///   delta n_{l,a}(t) = -8 lambda^2 sum_j p_{l,j;a}^2 Mt_{j,l;a} Re Theta2_{j,l;a}(t)
///   delta k_l(t)     = +8 lambda^2 sum_{j,a} p_{l,j;a}^2 Mt_{j,l;a} Re Theta3_{j,l;a}(t)
/// Pair weights are evaluated at the initial price row.
inline OccupationShift delta_occupations(const MarketConfig& cfg, const BasisState& initial,
                                         const PriceTrajectory& trajectory, int trader,
                                         double t) {
    const int n = cfg.traders();
    const int l = cfg.share_types();
    if (trader < 0 || trader >= n)
        throw std::out_of_range("delta_occupations: trader out of range");
    const double pref = 8.0 * cfg.lambda * cfg.lambda;
    OccupationShift out;
    out.shares.assign(static_cast<std::size_t>(l), 0.0);
    for (int a = 0; a < l; ++a) {
        const int p0 = trajectory.price(0, a);
        for (int j = 0; j < n; ++j) {
            if (j == trader) continue;
            const double p = cfg.coupling(trader, j, a);
            if (p == 0.0) continue;
            const PairWeight pw = pair_weight(initial, p0, j, trader, a, l);
            if (pw.mtilde == 0.0) continue;
            const ThetaSet th = ThetaIntegrals(cfg, trajectory, j, trader, a).at(t);
            out.shares[static_cast<std::size_t>(a)] -=
                pref * p * p * pw.mtilde * th.theta2.real();
            out.cash += pref * p * p * pw.mtilde * th.theta3.real();
        }
    }
    return out;
}

/// Pi_l(t) = Pi_l(0) + sum_a n_{l,a} (P_a(t) - P_a(0))
///                   + sum_a P_a(t) delta n_{l,a}(t) + delta k_l(t).
inline double portfolio_evolution(const MarketConfig& cfg, const BasisState& initial,
                                  const PriceTrajectory& trajectory, int trader, double t) {
    const int l = cfg.share_types();
    const std::span<const int> p_now = trajectory.row_at_extended(t);
    const std::span<const int> p_0 = trajectory.row(0);
    const OccupationShift d = delta_occupations(cfg, initial, trajectory, trader, t);
    double pi = portfolio_value(initial, p_0, trader);
    for (int a = 0; a < l; ++a) {
        pi += initial.n(trader, a, l) * static_cast<double>(p_now[a] - p_0[a]);
        pi += static_cast<double>(p_now[a]) * d.shares[static_cast<std::size_t>(a)];
    }
    return pi + d.cash;
}

/// sum_a P_a(t) d(delta n_{l,a})/dt + d(delta k_l)/dt, derivatives taken
/// analytically (the Theta integrands). Identically zero away from price
/// jumps; at a jump the right-sided derivative is reported.
inline double sum_rule_residual(const MarketConfig& cfg, const BasisState& initial,
                                const PriceTrajectory& trajectory, int trader, double t) {
    const int n = cfg.traders();
    const int l = cfg.share_types();
    const double pref = 8.0 * cfg.lambda * cfg.lambda;
    const std::span<const int> p_now = trajectory.row_at_extended(t);
    double residual = 0.0;
    for (int a = 0; a < l; ++a) {
        const int p0 = trajectory.price(0, a);
        for (int j = 0; j < n; ++j) {
            if (j == trader) continue;
            const double p = cfg.coupling(trader, j, a);
            if (p == 0.0) continue;
            const PairWeight pw = pair_weight(initial, p0, j, trader, a, l);
            if (pw.mtilde == 0.0) continue;
            const ThetaSet th = ThetaIntegrals(cfg, trajectory, j, trader, a).at(t);
            // d Theta2/dt = Theta1 e^(-i Theta0); d Theta3/dt = P(t) * same
            const std::complex<double> rate = th.theta1 * std::polar(1.0, -th.theta0);
            const double dn_dot = -pref * p * p * pw.mtilde * rate.real();
            const double dk_dot =
                pref * p * p * pw.mtilde * (static_cast<double>(p_now[a]) * rate).real();
            residual += static_cast<double>(p_now[a]) * dn_dot + dk_dot;
        }
    }
    return residual;
}

}  // namespace qmarket

#endif
