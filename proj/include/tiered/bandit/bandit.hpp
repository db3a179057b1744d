#pragma once

#include "tiered/core/models.hpp"
#include "tiered/instances/factory.hpp"
#include "tiered/random.hpp"
#include "tiered/trace.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tiered {

/// Pull counts and reward sums of one bandit task.
class ArmStats {
  public:
    ArmStats() = default;
    explicit ArmStats(std::size_t arms) : counts_(arms, 0), sums_(arms, 0.0) {}

    std::size_t arms() const { return counts_.size(); }
    std::uint64_t count(std::size_t arm) const { return counts_[arm]; }
    double mean(std::size_t arm) const {
        return counts_[arm] ? sums_[arm] / static_cast<double>(counts_[arm]) : 0.0;
    }
    std::uint64_t total() const;
    /// Lowest-index arm among the most pulled.
    std::size_t most_pulled() const;

    void record(std::size_t arm, double reward) {
        ++counts_[arm];
        sums_[arm] += reward;
    }

    /// Test setup: overwrite one arm's statistics.
    void set(std::size_t arm, std::uint64_t count, double mean) {
        counts_[arm] = count;
        sums_[arm] = mean * static_cast<double>(count);
    }

  private:
    std::vector<std::uint64_t> counts_;
    std::vector<double> sums_;
};

struct BanditLearnerState {
    std::vector<ArmStats> lo;
    ArmStats hi;
    std::optional<std::size_t> trusted_task;
    std::size_t last_hi_action = 0;
    double alpha = 3.0;

    BanditLearnerState() = default;
    BanditLearnerState(std::size_t arms, std::size_t sources, double alpha_)
        : lo(sources, ArmStats(arms)), hi(arms), alpha(alpha_) {}
};

struct ConfidenceBounds {
    std::vector<double> ucb;
    std::vector<double> lcb;
};

/// log f(k) with f(k) = 1 + 16 A^2 (k+1)^2, times W for multiple sources.
double confidence_log_term(std::uint64_t k, std::size_t arms, bool multi_source, std::size_t W);

/// mean +- sqrt(2 alpha log f(k) / N). Throws UninitializedArm if an arm is unpulled.
ConfidenceBounds confidence_bounds(const ArmStats& stats, std::uint64_t k, double alpha,
                                   bool multi_source = false, std::size_t W = 1);
void confidence_bounds_into(const ArmStats& stats, std::uint64_t k, double alpha,
                            bool multi_source, std::size_t W, ConfidenceBounds& out);

std::size_t argmax_lowest(const std::vector<double>& v);

struct CheckEventRecord {
    std::uint64_t k = 0;
    /// Arm checked: the source's LCB maximizer (the trusted source's, for multiple sources).
    std::size_t arm = 0;
    bool passed = false;
    Branch branch = Branch::explore;
    std::optional<std::size_t> trusted_task;
};

struct Alg1Decision {
    std::size_t pi_lo = 0;
    std::size_t pi_hi = 0;
    CheckEventRecord record;
};

/// Uses state.lo[0] as the source. Throws UninitializedArm.
Alg1Decision alg1_step(const BanditLearnerState& state, std::uint64_t k, double epsilon);

struct Alg6Decision {
    std::vector<std::size_t> pi_lo;
    std::size_t pi_hi = 0;
    std::optional<std::size_t> w;
    /// Sources passing the check, ascending.
    std::vector<std::size_t> candidates;
    CheckEventRecord record;
};

/// Trust-till-failure over the sources in `state`. Reads the previous trusted
/// source and target action from the state without modifying it. Draws from
/// `rng` only when a uniform choice among candidates is needed.
Alg6Decision alg6_step(const BanditLearnerState& state, std::uint64_t k, double epsilon,
                       Rng& rng);

enum class BanditAlgo { ucb, alg1, alg6 };

const char* to_string(BanditAlgo a);
BanditAlgo bandit_algo_from_string(const std::string& s);

/// Everything the target saw at one iteration, for replaying decisions.
struct BanditIterationView {
    std::uint64_t k;
    const BanditLearnerState& before;
    std::span<const std::size_t> pi_lo;
    std::size_t pi_hi;
    const CheckEventRecord& record;
    const std::vector<std::size_t>& candidates;
};

struct BanditRunConfig {
    BanditAlgo algo = BanditAlgo::alg1;
    std::uint64_t K = 1000;
    double alpha = 3.0;
    double epsilon = 0.0;
    std::uint64_t seed = 0;
    std::uint64_t checkpoint_stride = 0; ///< 0 picks max(1, K/1000)
    std::function<void(const BanditIterationView&)> observer;
};

/// Every source runs UCB; the target runs UCB, the single-source trust rule
/// (first source only) or the multi-source rule. The first A iterations pull every arm
/// once in each task. Throws ParameterOutOfRange.
RegretTrace run_bandit(const BanditFamily& family, const BanditRunConfig& config);

} // namespace tiered
