#pragma once

// Test-side generators and brute-force evaluators, written against the raw
// model arrays only.

#include "tiered/analysis/metrics.hpp"
#include "tiered/core/models.hpp"
#include "tiered/random.hpp"

#include <algorithm>
#include <cstdint>
#include <functional>
#include <set>
#include <vector>

namespace tiered::test {

inline TabularMdp random_mdp(std::size_t S, std::size_t A, std::size_t H, std::uint64_t seed,
                             double sparsity = 0.0) {
    Rng rng(seed);
    std::vector<double> P(H * S * A * S), r(H * S * A);
    for (std::size_t row = 0; row < H * S * A; ++row) {
        double sum = 0.0;
        for (std::size_t n = 0; n < S; ++n) {
            double x = rng.uniform();
            if (rng.uniform() < sparsity) x = 0.0;
            P[row * S + n] = x;
            sum += x;
        }
        if (sum == 0.0) {
            P[row * S + rng.below(S)] = 1.0;
            sum = 1.0;
        }
        double acc = 0.0;
        for (std::size_t n = 0; n + 1 < S; ++n) acc += (P[row * S + n] /= sum);
        P[row * S + S - 1] = std::max(0.0, 1.0 - acc);
        r[row] = rng.uniform();
    }
    return TabularMdp(S, A, H, std::move(P), std::move(r));
}

/// V^pi_h(s) by direct recursion.
inline double brute_value(const TabularMdp& m, const Policy& pi, std::size_t h, std::size_t s) {
    if (h == m.horizon()) return 0.0;
    const auto a = pi(h, s);
    double v = m.reward(h, s, a);
    for (std::size_t n = 0; n < m.states(); ++n) {
        const double p = m.transition(h, s, a, n);
        if (p > 0.0) v += p * brute_value(m, pi, h + 1, n);
    }
    return v;
}

/// Calls f on every deterministic policy.
inline void for_each_policy(std::size_t H, std::size_t S, std::size_t A,
                            const std::function<void(const Policy&)>& f) {
    Policy pi(H, S);
    const std::size_t cells = H * S;
    std::vector<std::size_t> digits(cells, 0);
    for (;;) {
        for (std::size_t i = 0; i < cells; ++i) pi(i / S, i % S) = static_cast<Action>(digits[i]);
        f(pi);
        std::size_t i = 0;
        while (i < cells && ++digits[i] == A) digits[i++] = 0;
        if (i == cells) return;
    }
}

/// Exact state occupancy by summing over every trajectory prefix.
inline std::vector<double> brute_state_occupancy(const TabularMdp& m, const Policy& pi) {
    const std::size_t S = m.states(), H = m.horizon();
    std::vector<double> d(H * S, 0.0);
    std::function<void(std::size_t, std::size_t, double)> walk = [&](std::size_t h, std::size_t s,
                                                                      double p) {
        if (h == H || p == 0.0) return;
        d[h * S + s] += p;
        for (std::size_t n = 0; n < S; ++n) walk(h + 1, n, p * m.transition(h, s, pi(h, s), n));
    };
    walk(0, m.initial_state(), 1.0);
    return d;
}

// (h, s) touched by depth-first enumeration of every positive-probability
// path from s_1 that avoids the given pairs.
inline std::set<std::pair<std::size_t, State>> reachable_avoiding(const TabularMdp& m,
                                                                  const PairSets& c1) {
    std::set<std::pair<std::size_t, State>> seen;
    std::function<void(std::size_t, State)> walk = [&](std::size_t h, State s) {
        if (h == m.horizon()) return;
        seen.insert({h, s});
        for (Action a = 0; a < m.actions(); ++a) {
            const auto pair = std::make_pair(s, a);
            if (std::find(c1[h].begin(), c1[h].end(), pair) != c1[h].end()) continue;
            for (State n = 0; n < m.states(); ++n)
                if (m.transition(h, s, a, n) > 0.0) walk(h + 1, n);
        }
    };
    walk(0, m.initial_state());
    return seen;
}

inline PairSets c2_oracle(const TabularMdp& m, const PairSets& c1, const TransferableSets& Z) {
    const auto reach = reachable_avoiding(m, c1);
    const auto any = reachable_avoiding(m, PairSets(m.horizon()));
    PairSets out(m.horizon());
    for (std::size_t h = 0; h < m.horizon(); ++h)
        for (State s = 0; s < m.states(); ++s) {
            if (!any.count({h, s}) || reach.count({h, s}) || Z.contains(h, s)) continue;
            for (Action a = 0; a < m.actions(); ++a) out[h].push_back({s, a});
        }
    return out;
}

} // namespace tiered::test
