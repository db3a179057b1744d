#pragma once

#include "tiered/core/models.hpp"
#include "tiered/core/tables.hpp"
#include "tiered/random.hpp"

#include <vector>

namespace tiered {

/// Exact optimal solution of a TabularMdp.
struct ValueSolution {
    StateActionTable Q;    ///< Q*[h][s][a]
    StateTable V;          ///< V*[h][s], with the terminal layer V[H] = 0
    Policy pi_star;        ///< greedy, lowest action index on ties
    StateActionTable gaps; ///< V*[h][s] - Q*[h][s][a]
    /// Smallest gap above 1e-9 over all (h, s, a); 0 when no such gap exists.
    double delta_min = 0.0;

    double initial_value(State s1) const { return V(0, s1); }
};

/// Backward induction from V[H] = 0. With `require_unique`, throws
/// NonUniqueOptimal if any state has two actions within 1e-12 of the
/// maximum, or if there is no positive gap at all.
ValueSolution value_iteration(const TabularMdp& mdp, bool require_unique = false);

struct PolicyValues {
    StateActionTable Q;
    StateTable V;
};

/// Exact Q^pi / V^pi by backward induction. Throws ShapeMismatch.
PolicyValues policy_evaluation(const TabularMdp& mdp, const Policy& policy);

/// V^pi_1(s_1) without materializing Q. `scratch` is reused between calls.
double initial_state_value(const TabularMdp& mdp, const Policy& policy,
                           std::vector<double>& scratch);

/// d[h][s][a] = Pr(s_h = s, a_h = a | pi), computed forward from the point
/// mass on the initial state.
struct OccupancyTable {
    StateActionTable d;

    double state(std::size_t h, std::size_t s) const;
};

OccupancyTable occupancy(const TabularMdp& mdp, const Policy& policy);

/// Accumulates the occupancy of `policy` into `acc` without allocating.
/// `scratch` holds two state layers between calls.
void add_occupancy(const TabularMdp& mdp, const Policy& policy, StateActionTable& acc,
                   std::vector<double>& scratch);

Trajectory sample_episode(const TabularMdp& mdp, const Policy& policy, Rng& rng);
/// Same draws as sample_episode, reusing the storage of `out`.
void sample_episode_into(const TabularMdp& mdp, const Policy& policy, Rng& rng, Trajectory& out);

/// One Bernoulli reward from `arm`.
inline double pull(const MabInstance& task, std::size_t arm, Rng& rng) {
    return rng.bernoulli(task.mean(arm)) ? 1.0 : 0.0;
}

} // namespace tiered
