#ifndef QMARKET_EXP_POLY_HPP
#define QMARKET_EXP_POLY_HPP

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <vector>

// Exponential-polynomial functions f(u) = sum_m gamma_m u^p_m e^(i w_m u) on
// a local interval. Closed under pointwise scaling, phase shifts and
// integration from 0, which is all the nested Dyson / Theta integrals need.

namespace qmarket {

class ExpPolyKernel {
public:
    struct Term {
        std::complex<double> coeff;
        double freq = 0.0;
        int power = 0;
    };

    ExpPolyKernel() = default;

    static ExpPolyKernel constant(std::complex<double> c) {
        ExpPolyKernel k;
        if (c != 0.0) k.terms_.push_back({c, 0.0, 0});
        return k;
    }

    const std::vector<Term>& terms() const { return terms_; }
    bool empty() const { return terms_.empty(); }

    void add_term(std::complex<double> coeff, double freq, int power) {
        if (coeff != 0.0) terms_.push_back({coeff, freq, power});
    }

    ExpPolyKernel& operator+=(const ExpPolyKernel& other) {
        terms_.insert(terms_.end(), other.terms_.begin(), other.terms_.end());
        canonicalize();
        return *this;
    }

    ExpPolyKernel scaled(std::complex<double> f) const {
        ExpPolyKernel out;
        if (f == 0.0) return out;
        out.terms_ = terms_;
        for (auto& t : out.terms_) t.coeff *= f;
        return out;
    }

    /// Multiply by e^(i dfreq u).
    ExpPolyKernel shifted(double dfreq) const {
        ExpPolyKernel out;
        out.terms_ = terms_;
        for (auto& t : out.terms_) t.freq += dfreq;
        out.canonicalize();
        return out;
    }

    /// Multiply by another kernel (frequencies add, powers add).
    ExpPolyKernel product(const ExpPolyKernel& other) const {
        ExpPolyKernel out;
        out.terms_.reserve(terms_.size() * other.terms_.size());
        for (const auto& a : terms_)
            for (const auto& b : other.terms_)
                out.terms_.push_back({a.coeff * b.coeff, a.freq + b.freq, a.power + b.power});
        out.canonicalize();
        return out;
    }

    std::complex<double> eval(double u) const {
        std::complex<double> s = 0.0;
        for (const auto& t : terms_) {
            double mono = 1.0;
            for (int r = 0; r < t.power; ++r) mono *= u;
            s += t.coeff * mono * std::polar(1.0, t.freq * u);
        }
        return s;
    }

    /// F(u) = integral of f from 0 to u, exact per term, valid on
    /// [0, domain_len]. domain_len only selects the numerically stable
    /// branch for small |freq * u|.
    ExpPolyKernel integrated(double domain_len) const {
        ExpPolyKernel out;
        for (const auto& t : terms_) integrate_term(t, domain_len, out);
        out.canonicalize();
        return out;
    }

    /// Merge terms with identical (power, freq); deterministic order.
    void canonicalize() {
        std::sort(terms_.begin(), terms_.end(), [](const Term& a, const Term& b) {
            if (a.power != b.power) return a.power < b.power;
            return freq_bits(a.freq) < freq_bits(b.freq);
        });
        std::vector<Term> merged;
        merged.reserve(terms_.size());
        for (const auto& t : terms_) {
            if (!merged.empty() && merged.back().power == t.power &&
                freq_bits(merged.back().freq) == freq_bits(t.freq)) {
                merged.back().coeff += t.coeff;
            } else {
                merged.push_back(t);
            }
        }
        std::erase_if(merged, [](const Term& t) { return t.coeff == 0.0; });
        terms_ = std::move(merged);
    }

private:
    static std::uint64_t freq_bits(double f) {
        if (f == 0.0) f = 0.0;  // normalize -0.0
        std::uint64_t b;
        std::memcpy(&b, &f, sizeof b);
        return b;
    }

    // Below this |freq|*len the integration-by-parts form loses too many
    // digits against the leading u^(p+1) behaviour; switch to a truncated
    // power series (error below double rounding at the threshold).
    static double series_threshold(int power) {
        static constexpr double thr[] = {1e-4, 5e-3, 4e-2, 1.3e-1, 2.7e-1, 4.5e-1, 6.6e-1};
        if (power < 7) return thr[power];
        return std::min(0.75, 0.11 * power);
    }

    static void integrate_term(const Term& t, double domain_len, ExpPolyKernel& out) {
        const int p = t.power;
        if (t.freq == 0.0) {
            out.terms_.push_back({t.coeff / double(p + 1), 0.0, p + 1});
            return;
        }
        const double x = std::abs(t.freq) * domain_len;
        if (x < series_threshold(p)) {
            // int_0^u s^p e^(iws) ds = sum_m (iw)^m u^(p+m+1) / (m! (p+m+1))
            const std::complex<double> iw(0.0, t.freq);
            std::complex<double> fac = t.coeff;
            for (int m = 0;; ++m) {
                out.terms_.push_back({fac / double(p + m + 1), 0.0, p + m + 1});
                fac *= iw / double(m + 1);
                if (std::abs(fac) * std::pow(domain_len, m + 1) <=
                    1e-18 * std::abs(t.coeff))
                    break;
                if (m > 64) break;  // unreachable under the threshold rule
            }
            return;
        }
        // By parts: antiderivative e^(iwu) sum_r beta_r u^(p-r), minus its
        // value at 0 (only the r = p constant survives there).
        const std::complex<double> inv_iw = 1.0 / std::complex<double>(0.0, t.freq);
        std::complex<double> beta = t.coeff * inv_iw;
        for (int r = 0; r <= p; ++r) {
            out.terms_.push_back({beta, t.freq, p - r});
            if (r < p) beta *= -double(p - r) * inv_iw;
        }
        out.terms_.push_back({-beta, 0.0, 0});
    }

    std::vector<Term> terms_;
};

}  // namespace qmarket

#endif
