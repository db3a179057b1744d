#pragma once

#include "tiered/core/models.hpp"
#include "tiered/core/solvers.hpp"
#include "tiered/instances/factory.hpp"
#include "tiered/rl/rl.hpp"

#include <span>
#include <utility>
#include <vector>

namespace tiered {

/// x if x >= w, else 0.
inline double clip(double x, double w) { return x >= w ? x : 0.0; }

/// Per step h, sorted state indices.
using StateSets = std::vector<std::vector<State>>;
using PairSets = std::vector<std::vector<std::pair<State, Action>>>;

/// States where V*_Lo - V*_Hi <= eps and both optimal actions agree.
/// Throws NonUniqueOptimal if either task has tied optimal actions.
StateSets epsilon_close_states(const TabularMdp& lo, const TabularMdp& hi, double eps);

struct TransferableSets {
    StateSets states;
    /// Lowest-index witnessing source, aligned with `states`.
    std::vector<std::vector<std::size_t>> witness;

    std::size_t size() const;
    std::size_t size(std::size_t h) const { return states[h].size(); }
    bool contains(std::size_t h, State s) const;
};

/// single uses the first source: d*_Lo(s) > lambda and close within
/// delta_min_tilde / (4(H+1)). multi additionally needs d*_Hi(s) > 0 and
/// takes any source w with d*_Lo,w(s) >= lambda and closeness. Occupancies
/// and value differences are rounded to 1e-12 before comparing.
TransferableSets transferable_sets(const MdpFamily& family, double lambda,
                                   double delta_min_tilde, RlMode mode);

struct BenefitableSets {
    PairSets C1;
    PairSets C2;
    PairSets Cstar;
    PairSets C;
};

/// C1: suboptimal actions at transferable states. C2: every pair at states
/// outside Z that are reachable from s_1 through the support of P_Hi, but
/// not once C1 pairs are removed. Cstar: pairs with d*_Hi > 0.
BenefitableSets benefitable_sets(const MdpFamily& family, double lambda, double delta_min_tilde,
                                 RlMode mode);

/// Prefix sums of V*_1(s_1) - V^pi_1(s_1).
std::vector<double> pseudo_regret(const TabularMdp& task, std::span<const Policy> policies);

/// E = Q_tilde - P V_tilde' + P V_under' - Q_under under the true transitions.
StateActionTable surplus(const TabularMdp& hi, const RlHiState& state);

/// H |P_hat - P|_1 < b at every visited pair.
bool bonus_event(const TabularMdp& task, std::span<const double> P_hat,
                 const StateActionTable& counts, const StateActionTable& b);

/// 1/2 D - alpha log(2SAHk) <= N <= e D + alpha log(2SAHk) everywhere, with D
/// the summed occupancy of the policies that produced the counts N.
bool concentration_event(const StateActionTable& counts, const StateActionTable& occupancy_sum,
                         std::uint64_t k, double alpha);

struct CheckpointDiagnostics {
    std::uint64_t k = 0;
    bool bonus_event = false;
    bool surplus_within_bounds = false;
    /// Bound violated although the bonus event holds.
    bool inconsistent = false;
    bool lo_underestimates = false;
    bool hi_underestimates = false;
    bool hi_overestimates = false;
    bool concentration = false;
    double max_surplus_excess = 0.0;
};

struct DiagnosticsReport {
    std::vector<CheckpointDiagnostics> checkpoints;

    double bonus_event_rate() const;
    double concentration_rate() const;
    /// Fraction of checkpoints with both underestimation properties.
    double underestimation_rate() const;
    /// Fraction of checkpoints with k > burn_in where V_tilde_1(s_1) >= V*_1(s_1).
    double overestimation_rate(std::uint64_t burn_in) const;
    std::size_t inconsistencies() const;
};

/// Throws MissingArtifacts unless the run recorded checkpoint artifacts.
DiagnosticsReport diagnostics(const RlRunResult& run, const MdpFamily& family, double alpha);

} // namespace tiered
