#pragma once

#include "tiered/core/tables.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace tiered {

using Action = std::uint32_t;
using State = std::uint32_t;

/// Multi-armed bandit with Bernoulli arms.
class MabInstance {
  public:
    MabInstance() = default;
    /// Throws InvalidModel unless every mean lies in [0, 1] and there is at
    /// least one arm.
    explicit MabInstance(std::vector<double> means);

    std::size_t arm_count() const { return means_.size(); }
    const std::vector<double>& means() const { return means_; }
    double mean(std::size_t arm) const { return means_[arm]; }

    double best_mean() const;
    /// Lowest-index maximizer.
    std::size_t best_arm() const;
    /// gap(i) = max_j mean(j) - mean(i).
    std::vector<double> gaps() const;
    /// Smallest gap above 1e-9. Throws NonUniqueOptimal if two arms tie for
    /// the best mean and `require_unique` is set, or if no positive gap exists.
    double delta_min(bool require_unique = true) const;
    bool has_unique_optimal() const;

    friend bool operator==(const MabInstance&, const MabInstance&) = default;

  private:
    std::vector<double> means_;
};

/// Finite-horizon tabular MDP with time-dependent transitions and
/// deterministic rewards. Indices are 0-based; step h = 0 is the first step.
class TabularMdp {
  public:
    TabularMdp() = default;
    /// `transitions` is row-major [h][s][a][s'], `rewards` is [h][s][a].
    /// Rows must be probability vectors (sum within 1e-12, entries >= 0) and
    /// rewards must lie in [0, reward_cap]. Throws InvalidModel otherwise.
    TabularMdp(std::size_t states, std::size_t actions, std::size_t horizon,
               std::vector<double> transitions, std::vector<double> rewards,
               State initial_state = 0, double reward_cap = 1.0);

    std::size_t states() const { return S_; }
    std::size_t actions() const { return A_; }
    std::size_t horizon() const { return H_; }
    State initial_state() const { return s1_; }
    /// Rewards are bounded by [0, reward_cap]; 1 except for shifted tasks.
    double reward_cap() const { return reward_cap_; }

    std::span<const double> next_state_probs(std::size_t h, std::size_t s, std::size_t a) const {
        return {P_.data() + ((h * S_ + s) * A_ + a) * S_, S_};
    }
    double transition(std::size_t h, std::size_t s, std::size_t a, std::size_t next) const {
        return P_[((h * S_ + s) * A_ + a) * S_ + next];
    }
    double reward(std::size_t h, std::size_t s, std::size_t a) const {
        return r_[(h * S_ + s) * A_ + a];
    }

    const std::vector<double>& transitions() const { return P_; }
    const std::vector<double>& rewards() const { return r_; }

    bool same_shape(const TabularMdp& other) const {
        return S_ == other.S_ && A_ == other.A_ && H_ == other.H_;
    }

    friend bool operator==(const TabularMdp&, const TabularMdp&) = default;

  private:
    std::size_t S_ = 0, A_ = 0, H_ = 0;
    std::vector<double> P_;
    std::vector<double> r_;
    State s1_ = 0;
    double reward_cap_ = 1.0;
};

/// Deterministic time-dependent policy: action(h, s).
class Policy {
  public:
    Policy() = default;
    Policy(std::size_t horizon, std::size_t states, Action fill = 0)
        : H_(horizon), S_(states), actions_(horizon * states, fill) {}

    std::size_t horizon() const { return H_; }
    std::size_t states() const { return S_; }

    Action& operator()(std::size_t h, std::size_t s) { return actions_[h * S_ + s]; }
    Action operator()(std::size_t h, std::size_t s) const { return actions_[h * S_ + s]; }

    const std::vector<Action>& data() const { return actions_; }

    /// Throws ShapeMismatch unless the policy fits `mdp` and every action is
    /// in range.
    void validate_for(const TabularMdp& mdp) const;

    friend bool operator==(const Policy&, const Policy&) = default;

  private:
    std::size_t H_ = 0, S_ = 0;
    std::vector<Action> actions_;
};

struct Step {
    State state;
    Action action;
    double reward;
    State next_state;

    friend bool operator==(const Step&, const Step&) = default;
};

/// One episode: exactly H steps starting at the initial state.
struct Trajectory {
    std::vector<Step> steps;

    friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

} // namespace tiered
