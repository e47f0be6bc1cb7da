#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <sstream>

#include "oracles.hpp"
#include "qmarket/operators.hpp"

using namespace qmarket;
using Catch::Approx;

namespace {

MarketConfig pair_config(double p = 0.1, double lambda = 0.01) {
    MarketConfig cfg(2, 1);
    cfg.set_omega_share(0, 0, 1.0);
    cfg.set_omega_share(1, 0, 2.0);
    cfg.set_omega_cash(0, 0.3);
    cfg.set_omega_cash(1, 0.5);
    cfg.set_coupling(0, 1, 0, p);
    cfg.lambda = lambda;
    return cfg;
}

}  // namespace

TEST_CASE("apply_exchange reproduces the hand-computed sqrt(2) amplitude") {
    const BasisState s{{0, 1}, {2, 0}};
    auto ex = apply_exchange(s, {0, 1, 0}, 1, 1);
    REQUIRE(ex.has_value());
    REQUIRE(ex->target.shares == std::vector<int>{1, 0});
    REQUIRE(ex->target.cash == std::vector<int>{1, 1});
    REQUIRE(ex->amplitude == Approx(std::sqrt(2.0)).epsilon(1e-15));
}

TEST_CASE("apply_exchange annihilates when the seller holds no share") {
    const BasisState s{{1, 0}, {2, 0}};
    REQUIRE_FALSE(apply_exchange(s, {0, 1, 0}, 1, 1).has_value());
}

TEST_CASE("apply_exchange annihilates when the buyer cannot pay") {
    const BasisState s{{0, 1}, {1, 0}};
    REQUIRE_FALSE(apply_exchange(s, {0, 1, 0}, 2, 1).has_value());
}

TEST_CASE("apply_exchange at price zero still moves the share") {
    const BasisState s{{0, 2}, {0, 0}};
    auto ex = apply_exchange(s, {0, 1, 0}, 0, 1);
    REQUIRE(ex.has_value());
    REQUIRE(ex->target.shares == std::vector<int>{1, 1});
    REQUIRE(ex->target.cash == std::vector<int>{0, 0});
    REQUIRE(ex->amplitude == Approx(std::sqrt(2.0)).epsilon(1e-15));
}

TEST_CASE("apply_exchange matches the one-quantum-at-a-time ladder oracle") {
    std::mt19937 rng(42);
    std::uniform_int_distribution<int> occ(0, 4), price(0, 3), traders(2, 3), types(1, 2);
    for (int trial = 0; trial < 300; ++trial) {
        const int n = traders(rng);
        const int l = types(rng);
        BasisState s;
        s.shares.resize(static_cast<std::size_t>(n) * l);
        s.cash.resize(static_cast<std::size_t>(n));
        for (auto& v : s.shares) v = occ(rng);
        for (auto& v : s.cash) v = occ(rng);
        std::uniform_int_distribution<int> pick(0, n - 1), share(0, l - 1);
        const int buyer = pick(rng);
        int seller = pick(rng);
        if (seller == buyer) seller = (seller + 1) % n;
        const int a = share(rng);
        const int p = price(rng);

        auto fast = apply_exchange(s, {buyer, seller, a}, p, l);
        auto slow = oracles::ladder_exchange(s, buyer, seller, a, p, l);
        REQUIRE(fast.has_value() == slow.has_value());
        if (fast) {
            REQUIRE(fast->target == slow->first);
            REQUIRE(fast->amplitude == Approx(slow->second).epsilon(1e-12));
        }
    }
}

TEST_CASE("H0 is the diagonal of free energies") {
    MarketConfig cfg = pair_config();
    SectorBasis basis = enumerate_sector(cfg, SectorKey{{1}, 2});
    SparseHermitian h0 = build_H0(cfg, basis);
    const int idx = basis.index(BasisState{{1, 0}, {2, 0}});
    REQUIRE(h0.entry(idx, idx).real() == Approx(1.6).epsilon(1e-14));
    double trace = 0.0, expected = 0.0;
    for (int i = 0; i < basis.dimension(); ++i) {
        trace += h0.entry(i, i).real();
        expected += basis.energy(i);
        for (int j = 0; j < basis.dimension(); ++j)
            if (i != j) REQUIRE(h0.entry(i, j) == std::complex<double>(0.0));
    }
    REQUIRE(trace == Approx(expected));
}

TEST_CASE("H_I carries the 2 p Gamma matrix element on the six-state sector") {
    const double p = 0.1;
    MarketConfig cfg = pair_config(p);
    SectorBasis basis = enumerate_sector(cfg, SectorKey{{1}, 2});
    const std::vector<int> prices{1};
    SparseHermitian hi = build_HI(cfg, basis, prices);
    const int src = basis.index(BasisState{{0, 1}, {2, 0}});
    const int dst = basis.index(BasisState{{1, 0}, {1, 1}});
    REQUIRE(std::abs(hi.entry(dst, src)) == Approx(2.0 * p * std::sqrt(2.0)).epsilon(1e-14));
    REQUIRE(std::abs(hi.entry(src, dst)) == Approx(2.0 * p * std::sqrt(2.0)).epsilon(1e-14));
}

TEST_CASE("H_I vanishes with the couplings") {
    MarketConfig cfg = pair_config(0.0);
    SectorBasis basis = enumerate_sector(cfg, SectorKey{{1}, 2});
    SparseHermitian hi = build_HI(cfg, basis, std::vector<int>{1});
    REQUIRE(hi.entries().empty());
}

TEST_CASE("states two exchanges apart are not connected by H_I") {
    MarketConfig cfg = pair_config(0.2);
    SectorBasis basis = enumerate_sector(cfg, SectorKey{{2}, 2});
    SparseHermitian hi = build_HI(cfg, basis, std::vector<int>{1});
    const int a = basis.index(BasisState{{0, 2}, {2, 0}});
    const int b = basis.index(BasisState{{2, 0}, {0, 2}});
    REQUIRE(hi.entry(b, a) == std::complex<double>(0.0));
}

TEST_CASE("assembled Hamiltonians are exactly Hermitian across a random sweep") {
    std::mt19937 rng(777);
    std::uniform_int_distribution<int> nt(2, 3), ns(1, 2), total(0, 2), cash(0, 3);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = nt(rng);
        const int l = ns(rng);
        MarketConfig cfg = oracles::random_config(rng, n, l, 0.1);
        SectorKey key;
        for (int a = 0; a < l; ++a) key.total_shares.push_back(total(rng));
        key.total_cash = cash(rng);
        SectorBasis basis = enumerate_sector(cfg, key);
        PriceTrajectory traj = oracles::random_trajectory(rng, l, 1, 1.0);
        SparseHermitian h = build_H(cfg, basis, traj, 0);
        REQUIRE(h.max_hermiticity_defect() == 0.0);
    }
}

TEST_CASE("merged sectors stay block diagonal and commute with the charges") {
    MarketConfig cfg = pair_config(0.25);
    SectorBasis sec_a = enumerate_sector(cfg, SectorKey{{1}, 2});
    SectorBasis sec_b = enumerate_sector(cfg, SectorKey{{2}, 1});
    std::vector<BasisState> merged_states = sec_a.states();
    for (const auto& s : sec_b.states()) merged_states.push_back(s);
    StateBasis merged(cfg, std::move(merged_states));

    SparseHermitian h = build_H(cfg, merged, PriceTrajectory(1.0, 1, {1}), 0);
    // cross-sector blocks vanish
    for (int i = 0; i < sec_a.dimension(); ++i)
        for (int j = sec_a.dimension(); j < merged.dimension(); ++j) {
            REQUIRE(h.entry(i, j) == std::complex<double>(0.0));
            REQUIRE(h.entry(j, i) == std::complex<double>(0.0));
        }
    // [H, diag N_alpha] = [H, diag K] = 0 at matrix level
    Eigen::MatrixXcd hd = h.dense();
    Eigen::VectorXd n_tot(merged.dimension()), k_tot(merged.dimension());
    for (int i = 0; i < merged.dimension(); ++i) {
        SectorKey key = sector_of(merged.state(i), 2, 1);
        n_tot[i] = key.total_shares[0];
        k_tot[i] = key.total_cash;
    }
    Eigen::MatrixXcd comm_n = hd * n_tot.asDiagonal() - n_tot.asDiagonal() * hd;
    Eigen::MatrixXcd comm_k = hd * k_tot.asDiagonal() - k_tot.asDiagonal() * hd;
    REQUIRE(comm_n.cwiseAbs().maxCoeff() < 1e-12);
    REQUIRE(comm_k.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("build_H composes H0 and lambda H_I") {
    MarketConfig cfg = pair_config(0.1, 0.0);
    SectorBasis basis = enumerate_sector(cfg, SectorKey{{1}, 2});
    PriceTrajectory traj(1.0, 1, {1, 2});
    SparseHermitian h = build_H(cfg, basis, traj, 0);
    SparseHermitian h0 = build_H0(cfg, basis);
    for (int i = 0; i < basis.dimension(); ++i)
        for (int j = 0; j < basis.dimension(); ++j)
            REQUIRE(h.entry(i, j) == h0.entry(i, j));

    cfg.lambda = 0.5;
    SparseHermitian h_a = build_H(cfg, basis, traj, 0);
    SparseHermitian h_b = build_H(cfg, basis, traj, 1);
    for (int i = 0; i < basis.dimension(); ++i)
        REQUIRE(h_a.entry(i, i) == h_b.entry(i, i));  // price change only moves off-diagonals
    REQUIRE_THROWS_AS(build_H(cfg, basis, traj, 2), std::out_of_range);
    REQUIRE_THROWS_AS(build_H(cfg, basis, traj, -1), std::out_of_range);
}

TEST_CASE("coordinate dump is sorted and stable") {
    MarketConfig cfg = pair_config(0.5, 1.0);
    SectorBasis basis = enumerate_sector(cfg, SectorKey{{1}, 0});
    // two states: share with trader 0 or trader 1, no cash to move
    SparseHermitian h = build_H(cfg, basis, PriceTrajectory(1.0, 1, {0}), 0);
    std::ostringstream os;
    dump_coordinate(h, os);
    const std::string expected =
        "0 0 2 0\n"
        "0 1 1 0\n"
        "1 0 1 0\n"
        "1 1 1 0\n";
    REQUIRE(os.str() == expected);
}
