#pragma once

#include "tiered/core/models.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace tiered {

struct FamilyMeta {
    std::string kind;
    std::uint64_t seed = 0;
    nlohmann::json params = nlohmann::json::object();
};

/// One target task and W source tasks sharing S, A, H (or the arm count).
template <class Task>
struct TaskFamily {
    Task hi;
    std::vector<Task> lo;
    FamilyMeta meta;

    std::size_t sources() const { return lo.size(); }
};

using BanditFamily = TaskFamily<MabInstance>;
using MdpFamily = TaskFamily<TabularMdp>;

enum class LowerBoundKind { thm2, thm3 };

/// Two-armed constructions: `lo` is M = (mu, mu - delta); `hi_candidates`
/// are {M, M'} for thm2 and {M, M', M''} for thm3.
struct LowerBoundInstances {
    MabInstance lo;
    std::vector<MabInstance> hi_candidates;
    FamilyMeta meta;

    /// Single-source family with hi_candidates[candidate] as the target.
    BanditFamily family(std::size_t candidate) const;
};

/// thm2: requires 0 < mu - delta and mu + delta < 1.
/// thm3: requires 0 < mu - 2 delta, mu + delta < 1 and delta' in [delta/2, delta];
/// delta' defaults to delta/2. Throws ParameterOutOfRange.
LowerBoundInstances make_lower_bound_instances(LowerBoundKind kind, double mu, double delta,
                                               std::optional<double> delta_prime = {});

enum class OvdExampleKind { identical, small_error, known_diff, plus_one_shift };

struct OvdExampleParams {
    // small-error: largest reward change and largest L1 change per row
    double reward_delta = 0.0;
    double transition_delta = 0.0;
    /// Gap used for the small-error bounds; the base task's own Delta_min if unset.
    std::optional<double> delta_min;
    std::uint64_t seed = 0;
    // known-diff
    double xi_r = 0.0;
    double xi_p = 0.0;
};

/// Builds a source task from `base`:
///   identical       deep copy
///   small-error     random perturbation within reward_delta / transition_delta,
///                   which must respect Delta_min/(4H(H+1)) and Delta_min/(4H^2(H+1))
///   known-diff      r'(h, s, a) = r + xi_r + (H - h) xi_p with h counted from 1
///   plus-one-shift  r' = r + 1
/// The last two widen reward_cap. Throws PerturbationTooLarge.
TabularMdp make_ovd_example(OvdExampleKind kind, const TabularMdp& base,
                            const OvdExampleParams& params = {});

/// Random task near `base`: every reward moves by at most `reward_delta`
/// (clamped to [0, reward_cap]) and every transition row by at most
/// `transition_l1` in L1 norm.
TabularMdp perturb_model(const TabularMdp& base, double reward_delta, double transition_l1,
                         std::uint64_t seed);

enum class OvdMode { all_states, reachable_only };

struct OvdReport {
    bool holds = false;
    OvdMode mode = OvdMode::all_states;
    /// max over checked (h, s) of V*_Hi - Delta_min/(2(H+1)) - V*_Lo; values
    /// within 1e-12 of zero are reported as zero.
    double worst_violation = 0.0;
    /// (h, s) pairs with a positive violation. Empty for bandits.
    std::vector<std::pair<std::size_t, std::size_t>> violating_states;
};

/// Reachable-only restricts the check to states with positive occupancy
/// under the source's optimal policy. Throws ShapeMismatch.
OvdReport verify_ovd(const TabularMdp& lo, const TabularMdp& hi, double delta_min,
                     OvdMode mode = OvdMode::all_states);
/// Bandits count as horizon 0: the threshold is Delta_min / 2.
OvdReport verify_ovd(const MabInstance& lo, const MabInstance& hi, double delta_min);

/// Random target with Delta_min = delta_target and W sources that relabel its
/// actions by an independent random permutation at every (h, s). The family
/// with W sources extends the family with W - 1 sources for the same seed.
/// Throws ParameterOutOfRange or CalibrationFailed.
MdpFamily build_experiment(std::size_t S, std::size_t A, std::size_t H, std::size_t W,
                           double delta_target, std::uint64_t seed);

/// Bandit family with the given target means and W copies as sources.
BanditFamily bandit_family(std::vector<double> hi_means,
                           std::vector<std::vector<double>> lo_means);

nlohmann::json to_json(const MdpFamily& family);
nlohmann::json to_json(const BanditFamily& family);
MdpFamily mdp_family_from_json(const nlohmann::json& j);
BanditFamily bandit_family_from_json(const nlohmann::json& j);

} // namespace tiered
