#include "tiered/rl/rl.hpp"

#include "tiered/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tiered {

VisitDataset::VisitDataset(std::size_t horizon, std::size_t states, std::size_t actions)
    : H_(horizon), S_(states), A_(actions), n_(horizon * states * actions, 0),
      nsas_(horizon * states * actions * states, 0) {}

std::uint64_t VisitDataset::state_count(std::size_t h, std::size_t s) const {
    std::uint64_t total = 0;
    for (std::size_t a = 0; a < A_; ++a) total += count(h, s, a);
    return total;
}

std::uint64_t VisitDataset::max_count(std::size_t h, std::size_t s) const {
    return count(h, s, most_taken(h, s));
}

Action VisitDataset::most_taken(std::size_t h, std::size_t s) const {
    const auto* row = n_.data() + (h * S_ + s) * A_;
    return static_cast<Action>(std::max_element(row, row + A_) - row);
}

void VisitDataset::add(std::size_t h, std::size_t s, std::size_t a, std::size_t next) {
    const std::size_t i = (h * S_ + s) * A_ + a;
    ++n_[i];
    ++nsas_[i * S_ + next];
}

void VisitDataset::add(const Trajectory& episode) {
    for (std::size_t h = 0; h < episode.steps.size(); ++h) {
        const auto& st = episode.steps[h];
        add(h, st.state, st.action, st.next_state);
    }
}

StateActionTable VisitDataset::counts() const {
    StateActionTable t(H_, S_, A_);
    for (std::size_t i = 0; i < n_.size(); ++i) t.data()[i] = static_cast<double>(n_[i]);
    return t;
}

void EstimatedModel::refresh(const VisitDataset& data, std::size_t h, std::size_t s,
                             std::size_t a) {
    const std::uint64_t n = data.count(h, s, a);
    double* row = p_.data() + ((h * S_ + s) * A_ + a) * S_;
    if (n == 0) {
        std::fill(row, row + S_, 0.0);
        return;
    }
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t next = 0; next < S_; ++next)
        row[next] = static_cast<double>(data.count(h, s, a, next)) * inv;
}

EstimatedModel model_learning(const VisitDataset& data) {
    EstimatedModel m(data.horizon(), data.states(), data.actions());
    for (std::size_t h = 0; h < data.horizon(); ++h)
        for (std::size_t s = 0; s < data.states(); ++s)
            for (std::size_t a = 0; a < data.actions(); ++a) m.refresh(data, h, s, a);
    return m;
}

double confidence_delta(std::uint64_t k, double alpha, std::size_t S, std::size_t A,
                        std::size_t H, std::size_t W) {
    const double scale = static_cast<double>(S * A * H * std::max<std::size_t>(W, 1));
    const double d = 1.0 / (scale * std::pow(static_cast<double>(std::max<std::uint64_t>(k, 1)),
                                             alpha));
    return std::max(d, 1e-12);
}

namespace {

void check_delta(double delta) {
    if (!(delta > 0.0 && delta < 0.5))
        throw DeltaOutOfRange("delta " + std::to_string(delta) + " outside (0, 1/2)");
}

double bonus_scale(double delta, std::size_t S, std::size_t A, std::size_t H) {
    const double Sd = static_cast<double>(S);
    return Sd * static_cast<double>(H) *
           std::sqrt(std::log(Sd * Sd * static_cast<double>(A) / delta) / 2.0);
}

} // namespace

double bonus_value(std::uint64_t n, double delta, std::size_t S, std::size_t A, std::size_t H) {
    const double Hd = static_cast<double>(H);
    if (n == 0) return Hd;
    return std::min(Hd, bonus_scale(delta, S, A, H) / std::sqrt(static_cast<double>(n)));
}

void bonus_into(const VisitDataset& data, double delta, StateActionTable& out, double scale_by) {
    check_delta(delta);
    const std::size_t H = data.horizon(), S = data.states(), A = data.actions();
    const double Hd = static_cast<double>(H);
    const double scale = scale_by * bonus_scale(delta, S, A, H);
    for (std::size_t h = 0; h < H; ++h)
        for (std::size_t s = 0; s < S; ++s)
            for (std::size_t a = 0; a < A; ++a) {
                const std::uint64_t n = data.count(h, s, a);
                out(h, s, a) =
                    n == 0 ? Hd : std::min(Hd, scale / std::sqrt(static_cast<double>(n)));
            }
}

void bernstein_bonus_into(const VisitDataset& data, const EstimatedModel& model,
                          const StateTable& next_values, double delta, StateActionTable& out,
                          double scale_by) {
    check_delta(delta);
    const std::size_t H = data.horizon(), S = data.states(), A = data.actions();
    const double Hd = static_cast<double>(H);
    const double L = std::log(static_cast<double>(S * S * A) / delta);
    for (std::size_t h = 0; h < H; ++h) {
        const auto v = next_values.layer(h + 1);
        for (std::size_t s = 0; s < S; ++s)
            for (std::size_t a = 0; a < A; ++a) {
                const std::uint64_t n = data.count(h, s, a);
                if (n == 0) {
                    out(h, s, a) = Hd;
                    continue;
                }
                const auto row = model.row(h, s, a);
                double m = 0.0, m2 = 0.0;
                for (std::size_t i = 0; i < S; ++i) {
                    m += row[i] * v[i];
                    m2 += row[i] * v[i] * v[i];
                }
                const double var = std::max(0.0, m2 - m * m);
                const double nd = static_cast<double>(n);
                out(h, s, a) = std::min(
                    Hd, scale_by * (std::sqrt(2.0 * var * L / nd) + 7.0 * Hd * L / (3.0 * nd)));
            }
    }
}

const char* to_string(BonusKind b) { return b == BonusKind::hoeffding ? "hoeffding" : "bernstein"; }

BonusKind bonus_kind_from_string(const std::string& s) {
    if (s == "hoeffding") return BonusKind::hoeffding;
    if (s == "bernstein") return BonusKind::bernstein;
    throw ConfigError("unknown bonus '" + s + "' (expected hoeffding or bernstein)");
}

StateActionTable bonus(const VisitDataset& data, double delta, std::size_t S, std::size_t A,
                       std::size_t H) {
    if (data.states() != S || data.actions() != A || data.horizon() != H)
        throw ShapeMismatch("dataset shape does not match S, A, H");
    StateActionTable out(H, S, A);
    bonus_into(data, delta, out);
    return out;
}

namespace {

template <class Clamp>
void greedy_pass(std::span<const double> rewards, const EstimatedModel& model,
                 const StateActionTable& b, double sign, Clamp clamp, GreedyValues& out) {
    const std::size_t H = out.Q.horizon(), S = out.Q.states(), A = out.Q.actions();
    for (std::size_t h = H; h-- > 0;) {
        const auto next = out.V.layer(h + 1);
        for (std::size_t s = 0; s < S; ++s) {
            Action best = 0;
            for (std::size_t a = 0; a < A; ++a) {
                const auto row = model.row(h, s, a);
                double pv = 0.0;
                for (std::size_t n = 0; n < S; ++n) pv += row[n] * next[n];
                const double q = clamp(rewards[(h * S + s) * A + a] + pv + sign * b(h, s, a));
                out.Q(h, s, a) = q;
                if (q > out.Q(h, s, best)) best = static_cast<Action>(a);
            }
            out.pi(h, s) = best;
            out.V(h, s) = out.Q(h, s, best);
        }
    }
}

} // namespace

void pvi_lower_pass(std::span<const double> rewards, const EstimatedModel& model,
                    const StateActionTable& b, GreedyValues& out) {
    greedy_pass(rewards, model, b, -1.0, [](double q) { return std::max(0.0, q); }, out);
}

GreedyValues pvi_lower_pass(std::span<const double> rewards, const EstimatedModel& model,
                            const StateActionTable& b) {
    GreedyValues out(b.horizon(), b.states(), b.actions());
    pvi_lower_pass(rewards, model, b, out);
    return out;
}

void optimistic_pass(std::span<const double> rewards, const EstimatedModel& model,
                     const StateActionTable& b, GreedyValues& out) {
    const double H = static_cast<double>(b.horizon());
    greedy_pass(rewards, model, b, 1.0, [H](double q) { return std::min(H, q); }, out);
}

void RlLoState::record(const Trajectory& episode) {
    data.add(episode);
    for (std::size_t h = 0; h < episode.steps.size(); ++h)
        model.refresh(data, h, episode.steps[h].state, episode.steps[h].action);
}

const Policy& optimistic_lo_step(std::span<const double> rewards, RlLoState& lo, double delta_k,
                                 BonusKind kind, double scale) {
    if (kind == BonusKind::bernstein)
        bernstein_bonus_into(lo.data, lo.model, lo.optimistic.V, delta_k, lo.b, scale);
    else
        bonus_into(lo.data, delta_k, lo.b, scale);
    optimistic_pass(rewards, lo.model, lo.b, lo.optimistic);
    return lo.optimistic.pi;
}

std::optional<std::size_t> select_task_per_state(std::span<const std::size_t> candidates,
                                                 std::optional<std::size_t> prev_w,
                                                 Action prev_hi_action,
                                                 std::span<const Action> modal_action, Rng& rng) {
    if (candidates.empty()) return std::nullopt;
    if (prev_w) {
        if (std::find(candidates.begin(), candidates.end(), *prev_w) != candidates.end())
            return prev_w;
        for (std::size_t w : candidates)
            if (modal_action[w] == prev_hi_action) return w;
    }
    return candidates[rng.below(candidates.size())];
}

void robust_hi_pass(std::span<const double> rewards, const EstimatedModel& model,
                    const StateActionTable& b, std::span<const LoOutputs> lo,
                    const HiPassParams& params, const RlHiState& prev, Rng& rng,
                    RlHiState& out) {
    const std::size_t H = b.horizon(), S = b.states(), A = b.actions();
    const double Hd = static_cast<double>(H);
    const double count_threshold = params.lambda * static_cast<double>(params.k);
    const std::size_t W = lo.size();
    std::vector<std::size_t> candidates;
    candidates.reserve(W);
    std::vector<Action> modal(W, 0);

    for (std::size_t h = H; h-- > 0;) {
        const auto next_under = out.V_under.layer(h + 1);
        const auto next_tilde = out.V_tilde.layer(h + 1);
        for (std::size_t s = 0; s < S; ++s) {
            for (std::size_t a = 0; a < A; ++a) {
                const auto row = model.row(h, s, a);
                double pu = 0.0, pt = 0.0;
                for (std::size_t n = 0; n < S; ++n) {
                    pu += row[n] * next_under[n];
                    pt += row[n] * next_tilde[n];
                }
                const double r = rewards[(h * S + s) * A + a];
                out.Q_under(h, s, a) = std::max(0.0, r + pu - b(h, s, a));
                out.Q_tilde(h, s, a) = std::min(Hd, r + pt + b(h, s, a));
            }

            candidates.clear();
            if (params.check_enabled) {
                for (std::size_t w = 0; w < W; ++w) {
                    const Action under = (*lo[w].pi_under)(h, s);
                    const bool close =
                        (*lo[w].V_under)(h, s) <= out.Q_tilde(h, s, under) + params.epsilon;
                    if (!close) continue;
                    modal[w] = lo[w].counts->most_taken(h, s);
                    const auto top = static_cast<double>(lo[w].counts->count(h, s, modal[w]));
                    if (3.0 * top > count_threshold) candidates.push_back(w);
                }
            }
            const int prev_trusted = prev.trusted.empty() ? -1 : prev.trusted_at(h, s);
            std::optional<std::size_t> prev_w;
            if (prev_trusted >= 0) prev_w = static_cast<std::size_t>(prev_trusted);
            const Action prev_action = prev.pi.horizon() ? prev.pi(h, s) : 0;
            const auto chosen = select_task_per_state(candidates, prev_w, prev_action, modal, rng);

            Action act;
            if (chosen) {
                act = modal[*chosen];
                out.trusted[h * S + s] = static_cast<int>(*chosen);
            } else {
                act = 0;
                for (std::size_t a = 1; a < A; ++a)
                    if (out.Q_tilde(h, s, a) > out.Q_tilde(h, s, act)) act = static_cast<Action>(a);
                out.trusted[h * S + s] = -1;
            }
            out.pi(h, s) = act;
            const double qt = out.Q_tilde(h, s, act);
            const double qu = out.Q_under(h, s, act);
            out.V_tilde(h, s) = std::min(Hd, qt + (qt - qu) / Hd);
            out.V_under(h, s) = qu;
        }
    }
}

double RlRunResult::trust_fraction() const {
    return trace.trust_opportunities
               ? static_cast<double>(trace.trust_events) /
                     static_cast<double>(trace.trust_opportunities)
               : 0.0;
}

double RlRunResult::tail_trust_fraction(std::size_t h, std::size_t s) const {
    return tail_iterations ? static_cast<double>(tail_trust_counts[h * S + s]) /
                                 static_cast<double>(tail_iterations)
                           : 0.0;
}

double default_lambda(std::size_t S) { return S == 3 ? 0.3 : 1.0 / static_cast<double>(S); }

RlRunResult run_tiered_rl(const MdpFamily& family, const RlRunConfig& config) {
    const TabularMdp& hi_task = family.hi;
    const std::size_t S = hi_task.states(), A = hi_task.actions(), H = hi_task.horizon();
    if (config.K == 0) throw ParameterOutOfRange("K must be at least 1");
    if (!(config.alpha > 0.0)) throw ParameterOutOfRange("alpha must be positive");
    if (!(config.lambda > 0.0)) throw ParameterOutOfRange("lambda must be positive");
    if (config.epsilon < 0.0) throw ParameterOutOfRange("epsilon must be nonnegative");
    for (const auto& t : family.lo)
        if (!t.same_shape(hi_task)) throw ShapeMismatch("source and target shapes differ");

    const std::size_t W =
        config.mode == RlMode::single ? std::min<std::size_t>(family.sources(), 1)
                                      : family.sources();
    const std::size_t delta_w = config.mode == RlMode::multi ? std::max<std::size_t>(W, 1) : 1;
    const std::uint64_t stride =
        config.checkpoint_stride ? config.checkpoint_stride : default_checkpoint_stride(config.K);
    const std::uint64_t tail_start =
        config.tail_start_k ? config.tail_start_k : config.K - config.K / 10 + 1;

    const double v_star_hi = value_iteration(hi_task).V(0, hi_task.initial_state());
    std::vector<double> v_star_lo(W);
    for (std::size_t w = 0; w < W; ++w)
        v_star_lo[w] = value_iteration(family.lo[w]).V(0, family.lo[w].initial_state());

    std::vector<RlLoState> lo(W, RlLoState(H, S, A));
    std::vector<Rng> lo_rng;
    for (std::size_t w = 0; w < W; ++w) lo_rng.emplace_back(derive_seed(config.seed, w, "lo-episodes"));
    Rng hi_rng(derive_seed(config.seed, 0, "hi-episodes"));
    Rng select_rng(derive_seed(config.seed, 0, "task-selection"));

    VisitDataset hi_data(H, S, A);
    EstimatedModel hi_model(H, S, A);
    StateActionTable hi_b(H, S, A);
    RlHiState hi_prev(H, S, A), hi_cur(H, S, A);

    std::vector<LoOutputs> outputs(W);
    for (std::size_t w = 0; w < W; ++w)
        outputs[w] = {&lo[w].pessimistic.V, &lo[w].pessimistic.pi, &lo[w].data};

    std::vector<Trajectory> lo_episode(W);
    Trajectory hi_episode;
    std::vector<double> scratch;

    StateActionTable occ_hi;
    std::vector<StateActionTable> occ_lo;
    if (config.record_artifacts) {
        occ_hi = StateActionTable(H, S, A);
        occ_lo.assign(W, StateActionTable(H, S, A));
    }

    RlRunResult result;
    result.H = H;
    result.S = S;
    result.W = W;
    result.trust_counts.assign(H * S, 0);
    result.tail_trust_counts.assign(H * S, 0);
    result.trusted_task_histogram.assign(H * S * (W + 1), 0);
    RegretTrace& trace = result.trace;
    trace.final_regret_lo.assign(W, 0.0);
    std::vector<double> lo_window(W, 0.0);
    double hi_window = 0.0;

    for (std::uint64_t k = 1; k <= config.K; ++k) {
        const double delta_k = confidence_delta(k, config.alpha, S, A, H, delta_w);

        for (std::size_t w = 0; w < W; ++w) {
            const auto rewards = std::span<const double>(family.lo[w].rewards());
            const Policy& pi = optimistic_lo_step(rewards, lo[w], delta_k, config.bonus, config.bonus_scale);
            pvi_lower_pass(rewards, lo[w].model, lo[w].b, lo[w].pessimistic);
            sample_episode_into(family.lo[w], pi, lo_rng[w], lo_episode[w]);
        }

        if (config.bonus == BonusKind::bernstein)
            bernstein_bonus_into(hi_data, hi_model, hi_prev.V_tilde, delta_k, hi_b,
                                 config.bonus_scale);
        else
            bonus_into(hi_data, delta_k, hi_b, config.bonus_scale);
        HiPassParams params;
        params.epsilon = config.epsilon;
        params.lambda = config.lambda;
        params.k = k;
        params.check_enabled = k >= config.transfer_start_k;
        robust_hi_pass(hi_task.rewards(), hi_model, hi_b, outputs, params, hi_prev, select_rng,
                       hi_cur);
        sample_episode_into(hi_task, hi_cur.pi, hi_rng, hi_episode);

        const double hi_gap = v_star_hi - initial_state_value(hi_task, hi_cur.pi, scratch);
        trace.final_regret_hi += hi_gap;
        hi_window += hi_gap;
        for (std::size_t w = 0; w < W; ++w) {
            const double g =
                v_star_lo[w] - initial_state_value(family.lo[w], lo[w].optimistic.pi, scratch);
            trace.final_regret_lo[w] += g;
            lo_window[w] += g;
        }

        const bool checkpoint = is_checkpoint(k, stride, config.K);
        if (checkpoint && config.record_artifacts) {
            RlCheckpointArtifact art;
            art.k = k;
            art.hi = hi_cur;
            art.b_hi = hi_b;
            art.P_hat_hi = hi_model.data();
            art.N_hi = hi_data.counts();
            art.occupancy_sum_hi = occ_hi;
            for (std::size_t w = 0; w < W; ++w) {
                art.lo_pessimistic.push_back(lo[w].pessimistic);
                art.b_lo.push_back(lo[w].b);
                art.P_hat_lo.push_back(lo[w].model.data());
                art.N_lo.push_back(lo[w].data.counts());
                art.occupancy_sum_lo.push_back(occ_lo[w]);
            }
            result.artifacts.push_back(std::move(art));
        }
        if (config.record_artifacts) {
            add_occupancy(hi_task, hi_cur.pi, occ_hi, scratch);
            for (std::size_t w = 0; w < W; ++w)
                add_occupancy(family.lo[w], lo[w].optimistic.pi, occ_lo[w], scratch);
        }

        for (std::size_t w = 0; w < W; ++w) lo[w].record(lo_episode[w]);
        hi_data.add(hi_episode);
        for (std::size_t h = 0; h < H; ++h)
            hi_model.refresh(hi_data, h, hi_episode.steps[h].state, hi_episode.steps[h].action);

        bool any_trust = false;
        std::size_t trusted_states = 0;
        const bool in_tail = k >= tail_start;
        for (std::size_t i = 0; i < H * S; ++i) {
            const int t = hi_cur.trusted[i];
            result.trusted_task_histogram[i * (W + 1) + (t >= 0 ? static_cast<std::size_t>(t) : W)]++;
            if (t >= 0) {
                any_trust = true;
                ++trusted_states;
                ++result.trust_counts[i];
                if (in_tail) ++result.tail_trust_counts[i];
            }
        }
        if (in_tail) ++result.tail_iterations;
        trace.trust_events += trusted_states;
        trace.trust_opportunities += H * S;

        if (checkpoint) {
            for (std::size_t w = 0; w < W; ++w) {
                trace.rows.push_back({k, static_cast<int>(w), lo_window[w],
                                      trace.final_regret_lo[w], Branch::none, ""});
                lo_window[w] = 0.0;
            }
            std::string trusted;
            for (std::size_t h = 0; h < H; ++h)
                for (std::size_t s = 0; s < S; ++s) {
                    const int t = hi_cur.trusted_at(h, s);
                    if (t < 0) continue;
                    if (!trusted.empty()) trusted += ';';
                    trusted += std::to_string(h) + '.' + std::to_string(s) + '=' + std::to_string(t);
                }
            trace.rows.push_back({k, kHiTier, hi_window, trace.final_regret_hi,
                                  any_trust ? Branch::trust : Branch::explore, trusted});
            hi_window = 0.0;
        }
        std::swap(hi_prev, hi_cur);
    }
    trace.iterations = config.K;
    return result;
}

} // namespace tiered
