#pragma once

#include "tiered/core/models.hpp"
#include "tiered/core/solvers.hpp"
#include "tiered/core/tables.hpp"
#include "tiered/instances/factory.hpp"
#include "tiered/random.hpp"
#include "tiered/trace.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tiered {

/// Visit counters N[h][s][a] and N[h][s][a][s'].
class VisitDataset {
  public:
    VisitDataset() = default;
    VisitDataset(std::size_t horizon, std::size_t states, std::size_t actions);

    std::size_t horizon() const { return H_; }
    std::size_t states() const { return S_; }
    std::size_t actions() const { return A_; }

    std::uint64_t count(std::size_t h, std::size_t s, std::size_t a) const {
        return n_[(h * S_ + s) * A_ + a];
    }
    std::uint64_t count(std::size_t h, std::size_t s, std::size_t a, std::size_t next) const {
        return nsas_[((h * S_ + s) * A_ + a) * S_ + next];
    }
    std::uint64_t state_count(std::size_t h, std::size_t s) const;
    std::uint64_t max_count(std::size_t h, std::size_t s) const;
    /// Lowest-index action among the most taken at (h, s).
    Action most_taken(std::size_t h, std::size_t s) const;

    void add(std::size_t h, std::size_t s, std::size_t a, std::size_t next);
    void add(const Trajectory& episode);

    /// Counts as a table of doubles.
    StateActionTable counts() const;

  private:
    std::size_t H_ = 0, S_ = 0, A_ = 0;
    std::vector<std::uint64_t> n_;
    std::vector<std::uint64_t> nsas_;
};

/// Empirical transitions; unvisited pairs keep an all-zero row.
class EstimatedModel {
  public:
    EstimatedModel() = default;
    EstimatedModel(std::size_t horizon, std::size_t states, std::size_t actions)
        : H_(horizon), S_(states), A_(actions), p_(horizon * states * actions * states, 0.0) {}

    std::span<const double> row(std::size_t h, std::size_t s, std::size_t a) const {
        return {p_.data() + ((h * S_ + s) * A_ + a) * S_, S_};
    }
    /// Recomputes one row from the counts.
    void refresh(const VisitDataset& data, std::size_t h, std::size_t s, std::size_t a);
    const std::vector<double>& data() const { return p_; }

  private:
    std::size_t H_ = 0, S_ = 0, A_ = 0;
    std::vector<double> p_;
};

EstimatedModel model_learning(const VisitDataset& data);

/// delta_k = 1/(S A H W k^alpha), floored at 1e-12; W = 1 for a single source.
double confidence_delta(std::uint64_t k, double alpha, std::size_t S, std::size_t A,
                        std::size_t H, std::size_t W = 1);

/// min(H, S H sqrt(log(S^2 A / delta) / (2N))), and H when N = 0.
double bonus_value(std::uint64_t n, double delta, std::size_t S, std::size_t A, std::size_t H);

/// Throws DeltaOutOfRange unless delta lies in (0, 1/2).
StateActionTable bonus(const VisitDataset& data, double delta, std::size_t S, std::size_t A,
                       std::size_t H);
/// `scale` multiplies the confidence width before the cap at H.
void bonus_into(const VisitDataset& data, double delta, StateActionTable& out, double scale = 1.0);

enum class BonusKind { hoeffding, bernstein };

const char* to_string(BonusKind b);
BonusKind bonus_kind_from_string(const std::string& s);

/// Empirical Bernstein variant: min(H, sqrt(2 Var L / N) + 7 H L / (3N)) with
/// L = log(S^2 A / delta) and Var the variance of `next_values[h+1]` under the
/// estimated row; H when N = 0.
void bernstein_bonus_into(const VisitDataset& data, const EstimatedModel& model,
                          const StateTable& next_values, double delta, StateActionTable& out,
                          double scale = 1.0);

/// Backward pass shared by the pessimistic and optimistic learners.
struct GreedyValues {
    StateActionTable Q;
    StateTable V;
    Policy pi;

    GreedyValues() = default;
    GreedyValues(std::size_t H, std::size_t S, std::size_t A)
        : Q(H, S, A), V(H + 1, S), pi(H, S) {}
};

/// Q = max{0, r + P_hat V' - b}, V = max_a Q, lowest-index argmax.
/// `rewards` is laid out [h][s][a] as in TabularMdp.
void pvi_lower_pass(std::span<const double> rewards, const EstimatedModel& model,
                    const StateActionTable& b, GreedyValues& out);
GreedyValues pvi_lower_pass(std::span<const double> rewards, const EstimatedModel& model,
                            const StateActionTable& b);

/// Q = min{H, r + P_hat V' + b} with the greedy policy.
void optimistic_pass(std::span<const double> rewards, const EstimatedModel& model,
                     const StateActionTable& b, GreedyValues& out);

/// Optimistic learner on one source task.
struct RlLoState {
    VisitDataset data;
    EstimatedModel model;
    StateActionTable b;
    GreedyValues optimistic;
    GreedyValues pessimistic;

    RlLoState() = default;
    RlLoState(std::size_t H, std::size_t S, std::size_t A)
        : data(H, S, A), model(H, S, A), b(H, S, A), optimistic(H, S, A), pessimistic(H, S, A) {}

    void record(const Trajectory& episode);
};

/// Refreshes the bonus for delta_k and returns the greedy optimistic policy.
/// The Bernstein bonus takes its variance from the previous optimistic values.
const Policy& optimistic_lo_step(std::span<const double> rewards, RlLoState& lo, double delta_k,
                                 BonusKind kind = BonusKind::hoeffding, double scale = 1.0);

/// What the target reads from one source at iteration k.
struct LoOutputs {
    const StateTable* V_under;
    const Policy* pi_under;
    const VisitDataset* counts;
};

struct RlHiState {
    StateActionTable Q_tilde;
    StateTable V_tilde;
    StateActionTable Q_under;
    StateTable V_under;
    Policy pi;
    /// Trusted source per (h, s); -1 when the state explored.
    std::vector<int> trusted;
    std::size_t H = 0, S = 0;

    RlHiState() = default;
    RlHiState(std::size_t H_, std::size_t S_, std::size_t A_)
        : Q_tilde(H_, S_, A_), V_tilde(H_ + 1, S_), Q_under(H_, S_, A_), V_under(H_ + 1, S_),
          pi(H_, S_), trusted(H_ * S_, -1), H(H_), S(S_) {}

    int trusted_at(std::size_t h, std::size_t s) const { return trusted[h * S + s]; }
};

struct HiPassParams {
    double epsilon = 0.0;
    double lambda = 0.3;
    std::uint64_t k = 1;
    /// The checking event is forced false when unset.
    bool check_enabled = true;
};

/// Task selection at one state: keep the previous source while it passes,
/// else a candidate whose most-taken action matches the previous target
/// action (only if a source was trusted before), else uniform. `modal_action`
/// holds each source's most-taken action at this state. Empty candidates give
/// std::nullopt.
std::optional<std::size_t> select_task_per_state(std::span<const std::size_t> candidates,
                                                 std::optional<std::size_t> prev_w,
                                                 Action prev_hi_action,
                                                 std::span<const Action> modal_action, Rng& rng);

/// One backward pass of the robust target learner over sources `lo`. With one
/// source this is the single-source rule; with none it is optimistic value
/// iteration with the overestimation revision. `prev` supplies the previous
/// trusted sources and policy; `rng` is used only for uniform selection.
void robust_hi_pass(std::span<const double> rewards, const EstimatedModel& model,
                    const StateActionTable& b, std::span<const LoOutputs> lo,
                    const HiPassParams& params, const RlHiState& prev, Rng& rng,
                    RlHiState& out);

enum class RlMode { single, multi };

/// Tables captured at one checkpoint, all computed from the data of the first
/// k - 1 episodes.
struct RlCheckpointArtifact {
    std::uint64_t k = 0;
    RlHiState hi;
    StateActionTable b_hi;
    std::vector<double> P_hat_hi;
    StateActionTable N_hi;
    /// Summed occupancy of the k - 1 target policies already played.
    StateActionTable occupancy_sum_hi;
    std::vector<GreedyValues> lo_pessimistic;
    std::vector<StateActionTable> b_lo;
    std::vector<std::vector<double>> P_hat_lo;
    std::vector<StateActionTable> N_lo;
    std::vector<StateActionTable> occupancy_sum_lo;
};

struct RlRunConfig {
    RlMode mode = RlMode::multi;
    std::uint64_t K = 1000;
    double alpha = 3.0;
    double lambda = 0.3;
    BonusKind bonus = BonusKind::hoeffding;
    double bonus_scale = 1.0;
    /// Passed straight to the check; Delta_tilde / (4(H+1)) is the usual choice.
    double epsilon = 0.0;
    /// The checking event is forced false for k < transfer_start_k.
    std::uint64_t transfer_start_k = 0;
    std::uint64_t seed = 0;
    std::uint64_t checkpoint_stride = 0; ///< 0 picks max(1, K/1000)
    bool record_artifacts = false;
    /// Start of the window for tail trust counts; 0 picks K - K/10 + 1.
    std::uint64_t tail_start_k = 0;
};

struct RlRunResult {
    RegretTrace trace;
    std::size_t H = 0, S = 0, W = 0;
    /// Iterations at which (h, s) trusted some source.
    std::vector<std::uint64_t> trust_counts;
    /// Same, restricted to k >= tail_start_k.
    std::vector<std::uint64_t> tail_trust_counts;
    std::uint64_t tail_iterations = 0;
    /// [h][s][w], with bin W counting iterations without a trusted source.
    std::vector<std::uint64_t> trusted_task_histogram;
    std::vector<RlCheckpointArtifact> artifacts;

    double trust_fraction() const;
    double tail_trust_fraction(std::size_t h, std::size_t s) const;
};

/// Default lambda: 0.3 when S = 3, else 1/S.
double default_lambda(std::size_t S);

/// Runs the sources and the target in lockstep. Throws ParameterOutOfRange.
RlRunResult run_tiered_rl(const MdpFamily& family, const RlRunConfig& config);

} // namespace tiered
