#include "tiered/bandit/bandit.hpp"

#include "tiered/core/solvers.hpp"
#include "tiered/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tiered {

std::uint64_t ArmStats::total() const {
    return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

std::size_t ArmStats::most_pulled() const {
    return static_cast<std::size_t>(std::max_element(counts_.begin(), counts_.end()) -
                                    counts_.begin());
}

double confidence_log_term(std::uint64_t k, std::size_t arms, bool multi_source, std::size_t W) {
    const double A = static_cast<double>(arms);
    const double k1 = static_cast<double>(k) + 1.0;
    const double scale = multi_source ? static_cast<double>(W) : 1.0;
    return std::log(1.0 + 16.0 * scale * A * A * k1 * k1);
}

void confidence_bounds_into(const ArmStats& stats, std::uint64_t k, double alpha,
                            bool multi_source, std::size_t W, ConfidenceBounds& out) {
    const std::size_t A = stats.arms();
    const double numerator = 2.0 * alpha * confidence_log_term(k, A, multi_source, W);
    out.ucb.resize(A);
    out.lcb.resize(A);
    for (std::size_t i = 0; i < A; ++i) {
        if (stats.count(i) == 0) throw UninitializedArm("arm " + std::to_string(i) + " unpulled");
        const double radius = std::sqrt(numerator / static_cast<double>(stats.count(i)));
        out.ucb[i] = stats.mean(i) + radius;
        out.lcb[i] = stats.mean(i) - radius;
    }
}

ConfidenceBounds confidence_bounds(const ArmStats& stats, std::uint64_t k, double alpha,
                                   bool multi_source, std::size_t W) {
    ConfidenceBounds out;
    confidence_bounds_into(stats, k, alpha, multi_source, W, out);
    return out;
}

std::size_t argmax_lowest(const std::vector<double>& v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

namespace {

bool check_passes(const ArmStats& lo, const ConfidenceBounds& lo_b, const ConfidenceBounds& hi_b,
                  std::size_t under, std::uint64_t k, double epsilon) {
    return lo_b.lcb[under] <= hi_b.ucb[under] + epsilon && 2 * lo.count(under) > k;
}

} // namespace

Alg1Decision alg1_step(const BanditLearnerState& state, std::uint64_t k, double epsilon) {
    if (state.lo.empty()) throw ParameterOutOfRange("single-source rule needs a source task");
    const auto lo_b = confidence_bounds(state.lo[0], k, state.alpha);
    const auto hi_b = confidence_bounds(state.hi, k, state.alpha);
    Alg1Decision d;
    d.pi_lo = argmax_lowest(lo_b.ucb);
    const std::size_t under = argmax_lowest(lo_b.lcb);
    d.record.k = k;
    d.record.arm = under;
    d.record.passed = check_passes(state.lo[0], lo_b, hi_b, under, k, epsilon);
    if (d.record.passed) {
        d.pi_hi = under;
        d.record.branch = Branch::trust;
        d.record.trusted_task = 0;
    } else {
        d.pi_hi = argmax_lowest(hi_b.ucb);
        d.record.branch = Branch::explore;
    }
    return d;
}

Alg6Decision alg6_step(const BanditLearnerState& state, std::uint64_t k, double epsilon,
                       Rng& rng) {
    const std::size_t W = state.lo.size();
    if (W == 0) throw ParameterOutOfRange("multi-source rule needs at least one source");
    const auto hi_b = confidence_bounds(state.hi, k, state.alpha, true, W);
    Alg6Decision d;
    d.pi_lo.resize(W);
    std::vector<std::size_t> under(W);
    ConfidenceBounds lo_b;
    for (std::size_t w = 0; w < W; ++w) {
        confidence_bounds_into(state.lo[w], k, state.alpha, true, W, lo_b);
        d.pi_lo[w] = argmax_lowest(lo_b.ucb);
        under[w] = argmax_lowest(lo_b.lcb);
        if (check_passes(state.lo[w], lo_b, hi_b, under[w], k, epsilon)) d.candidates.push_back(w);
    }
    d.record.k = k;
    if (d.candidates.empty()) {
        d.pi_hi = argmax_lowest(hi_b.ucb);
        d.record.arm = d.pi_hi;
        d.record.branch = Branch::explore;
        return d;
    }
    const auto& prev = state.trusted_task;
    auto in_candidates = [&](std::size_t w) {
        return std::find(d.candidates.begin(), d.candidates.end(), w) != d.candidates.end();
    };
    std::optional<std::size_t> chosen;
    if (prev && in_candidates(*prev)) {
        chosen = prev;
    } else if (prev) {
        for (std::size_t w : d.candidates) {
            if (state.lo[w].most_pulled() == state.last_hi_action) {
                chosen = w;
                break;
            }
        }
    }
    if (!chosen) chosen = d.candidates[rng.below(d.candidates.size())];
    d.w = chosen;
    d.pi_hi = under[*chosen];
    d.record.arm = under[*chosen];
    d.record.passed = true;
    d.record.branch = Branch::trust;
    d.record.trusted_task = chosen;
    return d;
}

const char* to_string(BanditAlgo a) {
    switch (a) {
    case BanditAlgo::ucb: return "ucb";
    case BanditAlgo::alg1: return "alg1";
    case BanditAlgo::alg6: return "alg6";
    }
    return "";
}

BanditAlgo bandit_algo_from_string(const std::string& s) {
    if (s == "ucb") return BanditAlgo::ucb;
    if (s == "alg1") return BanditAlgo::alg1;
    if (s == "alg6") return BanditAlgo::alg6;
    throw ConfigError("unknown bandit algo '" + s + "' (expected ucb, alg1 or alg6)");
}

RegretTrace run_bandit(const BanditFamily& family, const BanditRunConfig& config) {
    const std::size_t A = family.hi.arm_count();
    const std::size_t W = family.sources();
    if (config.K == 0) throw ParameterOutOfRange("K must be at least 1");
    if (!(config.alpha > 2.0)) throw ParameterOutOfRange("alpha must exceed 2");
    if (config.algo != BanditAlgo::ucb && W == 0)
        throw ParameterOutOfRange("transfer needs at least one source task");
    for (const auto& t : family.lo)
        if (t.arm_count() != A) throw ShapeMismatch("arm counts differ");

    const bool multi = config.algo == BanditAlgo::alg6;
    const std::uint64_t stride =
        config.checkpoint_stride ? config.checkpoint_stride : default_checkpoint_stride(config.K);

    const auto hi_gaps = family.hi.gaps();
    std::vector<std::vector<double>> lo_gaps;
    for (const auto& t : family.lo) lo_gaps.push_back(t.gaps());

    std::vector<Rng> lo_rng;
    for (std::size_t w = 0; w < W; ++w) lo_rng.emplace_back(derive_seed(config.seed, w, "lo-rewards"));
    Rng hi_rng(derive_seed(config.seed, 0, "hi-rewards"));
    Rng select_rng(derive_seed(config.seed, 0, "task-selection"));

    BanditLearnerState state(A, W, config.alpha);
    RegretTrace trace;
    trace.final_regret_lo.assign(W, 0.0);
    std::vector<double> lo_window(W, 0.0);
    double hi_window = 0.0;

    std::vector<std::size_t> pi_lo(W);
    std::vector<std::size_t> no_candidates;
    ConfidenceBounds bounds;

    for (std::uint64_t k = 1; k <= config.K; ++k) {
        std::size_t pi_hi = 0;
        CheckEventRecord record;
        record.k = k;
        const std::vector<std::size_t>* candidates = &no_candidates;
        Alg6Decision multi_decision;

        if (k <= A) {
            std::fill(pi_lo.begin(), pi_lo.end(), static_cast<std::size_t>(k - 1));
            pi_hi = static_cast<std::size_t>(k - 1);
            record.branch = Branch::init;
            record.arm = pi_hi;
        } else if (config.algo == BanditAlgo::alg6) {
            multi_decision = alg6_step(state, k, config.epsilon, select_rng);
            std::copy(multi_decision.pi_lo.begin(), multi_decision.pi_lo.end(), pi_lo.begin());
            pi_hi = multi_decision.pi_hi;
            record = multi_decision.record;
            candidates = &multi_decision.candidates;
        } else {
            for (std::size_t w = 0; w < W; ++w) {
                confidence_bounds_into(state.lo[w], k, config.alpha, multi, W, bounds);
                pi_lo[w] = argmax_lowest(bounds.ucb);
            }
            if (config.algo == BanditAlgo::alg1) {
                const auto d = alg1_step(state, k, config.epsilon);
                pi_hi = d.pi_hi;
                record = d.record;
            } else {
                confidence_bounds_into(state.hi, k, config.alpha, false, 1, bounds);
                pi_hi = argmax_lowest(bounds.ucb);
                record.branch = Branch::explore;
                record.arm = pi_hi;
            }
        }

        if (config.observer)
            config.observer(BanditIterationView{k, state, pi_lo, pi_hi, record, *candidates});

        for (std::size_t w = 0; w < W; ++w) {
            state.lo[w].record(pi_lo[w], pull(family.lo[w], pi_lo[w], lo_rng[w]));
            trace.final_regret_lo[w] += lo_gaps[w][pi_lo[w]];
            lo_window[w] += lo_gaps[w][pi_lo[w]];
        }
        state.hi.record(pi_hi, pull(family.hi, pi_hi, hi_rng));
        trace.final_regret_hi += hi_gaps[pi_hi];
        hi_window += hi_gaps[pi_hi];
        state.trusted_task = record.trusted_task;
        state.last_hi_action = pi_hi;

        if (k > A) {
            ++trace.trust_opportunities;
            if (record.branch == Branch::trust) ++trace.trust_events;
        }

        if (is_checkpoint(k, stride, config.K)) {
            for (std::size_t w = 0; w < W; ++w) {
                trace.rows.push_back({k, static_cast<int>(w), lo_window[w],
                                      trace.final_regret_lo[w], Branch::none, ""});
                lo_window[w] = 0.0;
            }
            trace.rows.push_back({k, kHiTier, hi_window, trace.final_regret_hi, record.branch,
                                  record.trusted_task ? std::to_string(*record.trusted_task) : ""});
            hi_window = 0.0;
        }
    }
    trace.iterations = config.K;
    return trace;
}

} // namespace tiered
