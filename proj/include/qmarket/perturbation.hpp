#ifndef QMARKET_PERTURBATION_HPP
#define QMARKET_PERTURBATION_HPP

#include <cmath>
#include <complex>
#include <numbers>
#include <optional>
#include <vector>

#include "exp_poly.hpp"
#include "market.hpp"
#include "operators.hpp"
#include "propagator.hpp"

// Time-dependent perturbation theory for the market Hamiltonian: interaction
// matrix elements, first- and second-order transition amplitudes, the golden
// rule rate, the generic-order coefficient hierarchy and portfolio-level
// transition probabilities.

namespace qmarket {

namespace detail {

inline std::complex<double> expm1_i(double y) {
    // e^(iy) - 1 without cancellation for small y.
    const double s = std::sin(0.5 * y);
    return {-2.0 * s * s, std::sin(y)};
}

inline double energy_scale(const StateBasis& basis) {
    double m = 1.0;
    for (double e : basis.energies()) m = std::max(m, std::abs(e));
    return m;
}

// Rounding noise in energy differences of degenerate states must read as an
// exact resonance; anything below the threshold is treated as gap 0.
inline double snap_gap(double gap, double scale, double rel_tol = 1e-10) {
    return std::abs(gap) <= rel_tol * scale ? 0.0 : gap;
}

}  // namespace detail

/// dE = E_F - E_G between two configurations; antisymmetric under swap.
inline double energy_gap(const StateBasis& basis, const BasisState& F, const BasisState& G) {
    return basis.energy(basis.index(F)) - basis.energy(basis.index(G));
}

/// <phi_F, H_I(prices) phi_G>: 2 sum over moves of p * Gamma selecting the
/// single move (if any) that maps G onto F. Equals the (F, G) entry of
/// build_HI; real because the amplitudes are.
inline double h_element(const MarketConfig& cfg, const StateBasis& basis, const BasisState& F,
                        const BasisState& G, std::span<const int> prices) {
    basis.index(F);  // both states must live in the basis
    basis.index(G);
    const int n = cfg.traders();
    const int l = cfg.share_types();
    double acc = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            for (int a = 0; a < l; ++a) {
                const double p = cfg.coupling(i, j, a);
                if (p == 0.0) continue;
                auto ex = apply_exchange(G, {i, j, a}, prices[a], l);
                if (ex && ex->target == F) acc += 2.0 * p * ex->amplitude;
            }
        }
    return acc;
}

/// First-order Dyson coefficient c^(1)_Ff(t), integrated in closed form over
/// the constant-price intervals (partial final interval supported).
inline std::complex<double> c1_coefficient(const MarketConfig& cfg, const StateBasis& basis,
                                           const PriceTrajectory& trajectory,
                                           const BasisState& F0, const BasisState& Ff, double t) {
    if (t < 0.0 || t > trajectory.duration() * (1.0 + 1e-12))
        throw std::out_of_range("c1_coefficient: t outside [0, M*h]");
    const double de =
        detail::snap_gap(basis.energy(basis.index(Ff)) - basis.energy(basis.index(F0)),
                         detail::energy_scale(basis));
    const double h = trajectory.step();
    std::complex<double> acc = 0.0;
    for (int k = 0; k < trajectory.intervals(); ++k) {
        const double tk = h * k;
        const double s = std::min(h, t - tk);
        if (s <= 0.0) break;
        const double hk = h_element(cfg, basis, Ff, F0, trajectory.row(k));
        if (hk == 0.0) continue;
        std::complex<double> segment;
        if (de == 0.0)
            segment = s;
        else
            segment = std::polar(1.0, de * tk) * detail::expm1_i(de * s) /
                      std::complex<double>(0.0, de);
        acc += hk * segment;
    }
    return std::complex<double>(0.0, -1.0) * acc;
}

/// P_{F0->Ff}(t) up to first order: lambda^2 |c^(1)|^2. Undefined at Ff = F0
/// (the zeroth-order term dominates there; use the full hierarchy).
inline double p1_transition(const MarketConfig& cfg, const StateBasis& basis,
                            const PriceTrajectory& trajectory, const BasisState& F0,
                            const BasisState& Ff, double t) {
    if (F0 == Ff)
        throw std::invalid_argument(
            "p1_transition: first-order formula undefined for Ff == F0; use dyson_coefficients");
    const std::complex<double> c1 = c1_coefficient(cfg, basis, trajectory, F0, Ff, t);
    return cfg.lambda * cfg.lambda * std::norm(c1);
}

/// Transition probability per unit time at constant prices. On a discrete
/// spectrum the delta function reads as an exact-degeneracy indicator:
/// 2 pi lambda^2 |h|^2 when E_Ff = E_F0 (P grows as lambda^2 |h|^2 t^2),
/// zero otherwise (P stays bounded by lambda^2 |h|^2 (2/dE)^2).
inline double golden_rule_rate(const MarketConfig& cfg, const StateBasis& basis,
                               const BasisState& F0, const BasisState& Ff,
                               std::span<const int> prices) {
    const double e0 = basis.energy(basis.index(F0));
    const double ef = basis.energy(basis.index(Ff));
    const double scale = std::max({1.0, std::abs(e0), std::abs(ef)});
    if (std::abs(ef - e0) > 1e-9 * scale) return 0.0;
    const double h = h_element(cfg, basis, Ff, F0, prices);
    return 2.0 * std::numbers::pi * cfg.lambda * cfg.lambda * h * h;
}

/// Off-resonant bound / resonant growth coefficient of the first-order
/// probability envelope (diagnostic companion of golden_rule_rate).
struct ResonanceDiagnostic {
    bool resonant = false;
    double growth_coefficient = 0.0;  // resonant: P1 = coeff * t^2
    double bound = 0.0;               // off-resonant: P1 <= bound for all t
};

inline ResonanceDiagnostic resonance_diagnostic(const MarketConfig& cfg, const StateBasis& basis,
                                                const BasisState& F0, const BasisState& Ff,
                                                std::span<const int> prices) {
    const double e0 = basis.energy(basis.index(F0));
    const double ef = basis.energy(basis.index(Ff));
    const double scale = std::max({1.0, std::abs(e0), std::abs(ef)});
    const double de = ef - e0;
    const double h = h_element(cfg, basis, Ff, F0, prices);
    ResonanceDiagnostic d;
    d.resonant = std::abs(de) <= 1e-9 * scale;
    const double l2h2 = cfg.lambda * cfg.lambda * h * h;
    if (d.resonant)
        d.growth_coefficient = l2h2;
    else
        d.bound = l2h2 * (2.0 / de) * (2.0 / de);
    return d;
}

namespace detail {

// E_{F,F0,Ff}(t) of the constant-price second order, with every removable
// singularity replaced by its analytic limit below eps.
inline std::complex<double> second_order_efunction(double e_mid, double e_0, double e_f, double t,
                                                   double eps) {
    const std::complex<double> it(0.0, t);
    const double a = e_mid - e_0;
    const double g = e_f - e_0;
    const double b = e_f - e_mid;
    auto f = [&](double x) -> std::complex<double> {
        if (std::abs(x) < eps) return it;
        return expm1_i(x * t) / x;
    };
    if (std::abs(a) >= eps) return (f(g) - f(b)) / a;
    // a -> 0: derivative of f at b
    if (std::abs(b) >= eps) {
        const std::complex<double> eibt = std::polar(1.0, b * t);
        return it * eibt / b - expm1_i(b * t) / (b * b);
    }
    return -0.5 * t * t;  // fully degenerate triple
}

}  // namespace detail

/// Second-order coefficient for constant prices (sum over intermediate
/// states of h h E); the (-i)^2 of the double integral is already absorbed,
/// so lambda^2 * c2_constant is the order-lambda^2 amplitude.
inline std::complex<double> c2_constant(const MarketConfig& cfg, const StateBasis& basis,
                                        const BasisState& F0, const BasisState& Ff,
                                        std::span<const int> prices, double t) {
    const int i0 = basis.index(F0);
    const int iff = basis.index(Ff);
    const SparseHermitian hi = build_HI(cfg, basis, prices);
    const double eps = 1e-8 * detail::energy_scale(basis);
    std::complex<double> acc = 0.0;
    hi.for_each_in_row(i0, [&](int mid, std::complex<double> h_mid_0) {
        const std::complex<double> h_f_mid = hi.entry(iff, mid);
        if (h_f_mid == 0.0) return;
        acc += h_f_mid.real() * h_mid_0.real() *
               detail::second_order_efunction(basis.energy(mid), basis.energy(i0),
                                              basis.energy(iff), t, eps);
    });
    return acc;
}

namespace detail {

// I_j(F,G;t) = int_{t_j}^t e^(i gap t') dt' in closed form.
inline std::complex<double> overlap_integral(double gap, double t_j, double t) {
    if (gap == 0.0) return t - t_j;
    return std::polar(1.0, gap * t_j) * expm1_i(gap * (t - t_j)) /
           std::complex<double>(0.0, gap);
}

// J_j(F,G,L;t) = int_{t_j}^t I_j(F,G;t') e^(i beta t') dt' via kernel
// integration in the local variable u = t' - t_j.
inline std::complex<double> nested_overlap_integral(double gap_a, double beta, double t_j,
                                                    double t) {
    const double len = t - t_j;
    ExpPolyKernel inner;  // I_j(t_j + u)
    if (gap_a == 0.0) {
        inner.add_term(1.0, 0.0, 1);
    } else {
        const std::complex<double> base =
            std::polar(1.0, gap_a * t_j) / std::complex<double>(0.0, gap_a);
        inner.add_term(base, gap_a, 0);
        inner.add_term(-base, 0.0, 0);
    }
    ExpPolyKernel integrand = inner.shifted(beta).scaled(std::polar(1.0, beta * t_j));
    return integrand.integrated(len).eval(len);
}

}  // namespace detail

/// Second-order coefficient for a three-window trajectory with changing
/// prices, evaluated at t = 3h: the double time integral split over the
/// 3 x 3 grid of interval pairs, each piece in closed form.
inline std::complex<double> c2_piecewise_M3(const MarketConfig& cfg, const StateBasis& basis,
                                            const PriceTrajectory& trajectory,
                                            const BasisState& F0, const BasisState& Ff) {
    if (trajectory.intervals() != 3)
        throw std::invalid_argument("c2_piecewise_M3: trajectory must have exactly M = 3 intervals");
    const int i0 = basis.index(F0);
    const int iff = basis.index(Ff);
    const double h = trajectory.step();
    const double t1 = h, t2 = 2.0 * h, t3 = 3.0 * h;
    const double scale = detail::energy_scale(basis);

    const SparseHermitian hi0 = build_HI(cfg, basis, trajectory.row(0));
    const SparseHermitian hi1 = build_HI(cfg, basis, trajectory.row(1));
    const SparseHermitian hi2 = build_HI(cfg, basis, trajectory.row(2));

    std::complex<double> acc = 0.0;
    for (int mid = 0; mid < basis.dimension(); ++mid) {
        const double h00 = hi0.entry(mid, i0).real();
        const double h01 = hi1.entry(mid, i0).real();
        const double h02 = hi2.entry(mid, i0).real();
        const double hf0 = hi0.entry(iff, mid).real();
        const double hf1 = hi1.entry(iff, mid).real();
        const double hf2 = hi2.entry(iff, mid).real();
        if ((h00 == 0.0 && h01 == 0.0 && h02 == 0.0) ||
            (hf0 == 0.0 && hf1 == 0.0 && hf2 == 0.0))
            continue;
        const double a = detail::snap_gap(basis.energy(mid) - basis.energy(i0), scale);
        const double b = detail::snap_gap(basis.energy(iff) - basis.energy(mid), scale);

        std::complex<double> term =
            hf0 * h00 * detail::nested_overlap_integral(a, b, 0.0, t1);
        term += hf1 * (h00 * detail::overlap_integral(a, 0.0, t1) *
                           detail::overlap_integral(b, t1, t2) +
                       h01 * detail::nested_overlap_integral(a, b, t1, t2));
        term += hf2 * ((h00 * detail::overlap_integral(a, 0.0, t1) +
                        h01 * detail::overlap_integral(a, t1, t2)) *
                           detail::overlap_integral(b, t2, t3) +
                       h02 * detail::nested_overlap_integral(a, b, t2, t3));
        acc += term;
    }
    return -acc;  // the (-i)^2 in front of the double integral
}

/// Coefficient hierarchy solved to order n: per order j <= n, the complex
/// coefficients c^(j)_F(t) over the basis.
struct DysonCoefficients {
    int order = 0;
    double lambda = 0.0;
    std::vector<Eigen::VectorXcd> coeffs;  // coeffs[j][F], j = 0..order

    /// Partial sum sum_j lambda^j c^(j)_F.
    std::complex<double> amplitude(int state) const {
        std::complex<double> a = 0.0;
        double lj = 1.0;
        for (const auto& c : coeffs) {
            a += lj * c[state];
            lj *= lambda;
        }
        return a;
    }
    double probability(int state) const { return std::norm(amplitude(state)); }
};

/// Solves the interval-by-interval hierarchy exactly: within an interval the
/// matrix elements are constant, so every c^(j) is an exponential-polynomial
/// kernel and each integration is closed-form. Realizes the graph rules:
/// order n carries n interactions, a sum over intermediate states, a factor
/// (-i)^n and free phases between interactions.
inline DysonCoefficients dyson_coefficients(const MarketConfig& cfg, const StateBasis& basis,
                                            const PriceTrajectory& trajectory,
                                            const BasisState& F0, int order, double t,
                                            std::size_t max_cells = std::size_t(1) << 22) {
    if (order < 0) throw std::invalid_argument("dyson_coefficients: order must be >= 0");
    if (t < 0.0 || t > trajectory.duration() * (1.0 + 1e-12))
        throw std::out_of_range("dyson_coefficients: t outside [0, M*h]");
    const std::size_t dim = static_cast<std::size_t>(basis.dimension());
    if (dim * static_cast<std::size_t>(order + 1) > max_cells)
        throw std::length_error("dyson_coefficients: dimension x order exceeds the work cap");

    const int i0 = basis.index(F0);
    const double h = trajectory.step();
    const double scale = detail::energy_scale(basis);
    const std::complex<double> minus_i(0.0, -1.0);

    // Boundary values at the start of the current interval.
    std::vector<Eigen::VectorXcd> bvals(static_cast<std::size_t>(order) + 1,
                                        Eigen::VectorXcd::Zero(basis.dimension()));
    bvals[0][i0] = 1.0;

    int full = std::min(static_cast<int>(std::floor(t / h + 1e-12)), trajectory.intervals());
    double partial = t - h * full;
    if (partial < 0.0) partial = 0.0;

    std::vector<std::vector<ExpPolyKernel>> kernels(
        static_cast<std::size_t>(order) + 1, std::vector<ExpPolyKernel>(dim));

    auto run_interval = [&](int k, double eval_at) {
        const double tk = h * k;
        const SparseHermitian hi = build_HI(cfg, basis, trajectory.row(k));
        for (std::size_t f = 0; f < dim; ++f)
            kernels[0][f] = ExpPolyKernel::constant(bvals[0][static_cast<Eigen::Index>(f)]);
        for (int j = 1; j <= order; ++j) {
            for (int fp = 0; fp < basis.dimension(); ++fp) {
                ExpPolyKernel integrand;
                hi.for_each_in_row(fp, [&](int src, std::complex<double> hval) {
                    const ExpPolyKernel& lower = kernels[static_cast<std::size_t>(j - 1)]
                                                        [static_cast<std::size_t>(src)];
                    if (lower.empty()) return;
                    const double gap =
                        detail::snap_gap(basis.energy(fp) - basis.energy(src), scale);
                    integrand += lower.shifted(gap).scaled(minus_i * hval.real() *
                                                           std::polar(1.0, gap * tk));
                });
                ExpPolyKernel cj = integrand.integrated(h);
                cj += ExpPolyKernel::constant(bvals[static_cast<std::size_t>(j)][fp]);
                kernels[static_cast<std::size_t>(j)][static_cast<std::size_t>(fp)] =
                    std::move(cj);
            }
        }
        for (int j = 0; j <= order; ++j)
            for (std::size_t f = 0; f < dim; ++f)
                bvals[static_cast<std::size_t>(j)][static_cast<Eigen::Index>(f)] =
                    kernels[static_cast<std::size_t>(j)][f].eval(eval_at);
    };

    for (int k = 0; k < full; ++k) run_interval(k, h);
    if (partial > 0.0 && full < trajectory.intervals()) run_interval(full, partial);

    DysonCoefficients out;
    out.order = order;
    out.lambda = cfg.lambda;
    out.coeffs = std::move(bvals);
    return out;
}

/// lambda * max_k max|h_{F,G}(t_k)| * t: the reported breakdown heuristic
/// for the perturbative expansion.
inline double validity_indicator(const MarketConfig& cfg, const StateBasis& basis,
                                 const PriceTrajectory& trajectory, double t) {
    double worst = 0.0;
    for (int k = 0; k < trajectory.intervals(); ++k)
        worst = std::max(worst, build_HI(cfg, basis, trajectory.row(k)).max_abs_entry());
    return cfg.lambda * worst * t;
}

/// Sorted distinct portfolio values of one trader across the basis.
inline std::vector<long long> achievable_portfolios(const StateBasis& basis,
                                                    std::span<const int> prices, int trader) {
    std::vector<long long> vals;
    vals.reserve(static_cast<std::size_t>(basis.dimension()));
    for (int i = 0; i < basis.dimension(); ++i)
        vals.push_back(
            static_cast<long long>(portfolio_value(basis.state(i), prices, trader)));
    std::sort(vals.begin(), vals.end());
    vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
    return vals;
}

/// Probability that trader `trader` ends at the given portfolio value:
/// the sum over all final states matching it. order = nullopt runs the
/// exact propagator; order = n uses the Dyson partial sum through n.
inline double portfolio_transition_probability(const MarketConfig& cfg, const StateBasis& basis,
                                               const PriceTrajectory& trajectory,
                                               const BasisState& F0, int trader,
                                               long long target_portfolio, double t,
                                               std::optional<int> order) {
    const std::span<const int> prices = trajectory.row(trajectory.interval_at(t));
    std::vector<int> members;
    for (int i = 0; i < basis.dimension(); ++i) {
        const long long v =
            static_cast<long long>(portfolio_value(basis.state(i), prices, trader));
        if (v == target_portfolio) members.push_back(i);
    }
    if (members.empty()) return 0.0;

    double acc = 0.0;
    if (!order) {
        ExactPropagator prop(cfg, basis, trajectory);
        StateVector psi = prop.propagate(StateVector::basis_state(basis, basis.index(F0)), t);
        for (int i : members) acc += std::norm(psi.amplitude(i));
    } else {
        DysonCoefficients dc = dyson_coefficients(cfg, basis, trajectory, F0, *order, t);
        for (int i : members) acc += dc.probability(i);
    }
    return acc;
}

}  // namespace qmarket

#endif
