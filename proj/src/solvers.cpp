#include "tiered/core/solvers.hpp"

#include "tiered/error.hpp"

#include <algorithm>
#include <string>

namespace tiered {

namespace {

constexpr double kTieTolerance = 1e-12;
constexpr double kGapFloor = 1e-9;

double expected_next(const TabularMdp& mdp, std::size_t h, std::size_t s, std::size_t a,
                     std::span<const double> next_values) {
    const auto probs = mdp.next_state_probs(h, s, a);
    double total = 0.0;
    for (std::size_t n = 0; n < probs.size(); ++n) total += probs[n] * next_values[n];
    return total;
}

} // namespace

ValueSolution value_iteration(const TabularMdp& mdp, bool require_unique) {
    const std::size_t S = mdp.states(), A = mdp.actions(), H = mdp.horizon();
    ValueSolution sol{StateActionTable(H, S, A), StateTable(H + 1, S), Policy(H, S),
                      StateActionTable(H, S, A), 0.0};
    bool found_gap = false;

    for (std::size_t h = H; h-- > 0;) {
        const auto next = sol.V.layer(h + 1);
        for (std::size_t s = 0; s < S; ++s) {
            Action best = 0;
            for (std::size_t a = 0; a < A; ++a) {
                const double q = mdp.reward(h, s, a) + expected_next(mdp, h, s, a, next);
                sol.Q(h, s, a) = q;
                if (q > sol.Q(h, s, best)) best = static_cast<Action>(a);
            }
            const double v = sol.Q(h, s, best);
            sol.V(h, s) = v;
            sol.pi_star(h, s) = best;

            std::size_t optimal_count = 0;
            for (std::size_t a = 0; a < A; ++a) {
                const double g = v - sol.Q(h, s, a);
                sol.gaps(h, s, a) = g;
                if (g <= kTieTolerance) ++optimal_count;
                if (g > kGapFloor && (!found_gap || g < sol.delta_min)) {
                    sol.delta_min = g;
                    found_gap = true;
                }
            }
            if (require_unique && optimal_count > 1)
                throw NonUniqueOptimal("step " + std::to_string(h) + " state " +
                                       std::to_string(s) + " has " +
                                       std::to_string(optimal_count) + " optimal actions");
        }
    }
    if (require_unique && !found_gap) throw NonUniqueOptimal("no positive gap in the MDP");
    return sol;
}

PolicyValues policy_evaluation(const TabularMdp& mdp, const Policy& policy) {
    policy.validate_for(mdp);
    const std::size_t S = mdp.states(), A = mdp.actions(), H = mdp.horizon();
    PolicyValues out{StateActionTable(H, S, A), StateTable(H + 1, S)};
    for (std::size_t h = H; h-- > 0;) {
        const auto next = out.V.layer(h + 1);
        for (std::size_t s = 0; s < S; ++s) {
            for (std::size_t a = 0; a < A; ++a)
                out.Q(h, s, a) = mdp.reward(h, s, a) + expected_next(mdp, h, s, a, next);
            out.V(h, s) = out.Q(h, s, policy(h, s));
        }
    }
    return out;
}

double initial_state_value(const TabularMdp& mdp, const Policy& policy,
                           std::vector<double>& scratch) {
    const std::size_t S = mdp.states(), H = mdp.horizon();
    scratch.assign(2 * S, 0.0);
    double* next = scratch.data();
    double* cur = scratch.data() + S;
    for (std::size_t h = H; h-- > 0;) {
        for (std::size_t s = 0; s < S; ++s) {
            const Action a = policy(h, s);
            const auto probs = mdp.next_state_probs(h, s, a);
            double v = mdp.reward(h, s, a);
            for (std::size_t n = 0; n < S; ++n) v += probs[n] * next[n];
            cur[s] = v;
        }
        std::swap(cur, next);
    }
    return next[mdp.initial_state()];
}

double OccupancyTable::state(std::size_t h, std::size_t s) const {
    double total = 0.0;
    for (double x : d.row(h, s)) total += x;
    return total;
}

void add_occupancy(const TabularMdp& mdp, const Policy& policy, StateActionTable& acc,
                   std::vector<double>& scratch) {
    const std::size_t S = mdp.states(), H = mdp.horizon();
    scratch.assign(2 * S, 0.0);
    double* cur = scratch.data();
    double* next = scratch.data() + S;
    cur[mdp.initial_state()] = 1.0;
    for (std::size_t h = 0; h < H; ++h) {
        std::fill(next, next + S, 0.0);
        for (std::size_t s = 0; s < S; ++s) {
            if (cur[s] == 0.0) continue;
            const Action a = policy(h, s);
            acc(h, s, a) += cur[s];
            const auto probs = mdp.next_state_probs(h, s, a);
            for (std::size_t n = 0; n < S; ++n) next[n] += cur[s] * probs[n];
        }
        std::swap(cur, next);
    }
}

OccupancyTable occupancy(const TabularMdp& mdp, const Policy& policy) {
    policy.validate_for(mdp);
    OccupancyTable out{StateActionTable(mdp.horizon(), mdp.states(), mdp.actions())};
    std::vector<double> scratch;
    add_occupancy(mdp, policy, out.d, scratch);
    return out;
}

void sample_episode_into(const TabularMdp& mdp, const Policy& policy, Rng& rng, Trajectory& out) {
    const std::size_t H = mdp.horizon();
    out.steps.resize(H);
    State s = mdp.initial_state();
    for (std::size_t h = 0; h < H; ++h) {
        const Action a = policy(h, s);
        const auto next = static_cast<State>(rng.categorical(mdp.next_state_probs(h, s, a)));
        out.steps[h] = Step{s, a, mdp.reward(h, s, a), next};
        s = next;
    }
}

Trajectory sample_episode(const TabularMdp& mdp, const Policy& policy, Rng& rng) {
    policy.validate_for(mdp);
    Trajectory t;
    sample_episode_into(mdp, policy, rng, t);
    return t;
}

} // namespace tiered
