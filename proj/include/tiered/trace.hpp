#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace tiered {

enum class Branch { init, trust, explore, none };

const char* to_string(Branch b);

/// Target tier is kHiTier; source w is tier w.
inline constexpr int kHiTier = -1;

std::string tier_label(int tier);

/// One emitted checkpoint for one tier. `increment` is the pseudo-regret
/// accumulated since the previous row of the same tier.
struct TraceRow {
    std::uint64_t k = 0;
    int tier = kHiTier;
    double increment = 0.0;
    double cumulative = 0.0;
    Branch branch = Branch::none;
    /// Bandits: index of the trusted source. RL: "h.s=w" entries joined by ';'.
    std::string trusted_task;
};

struct RegretTrace {
    std::vector<TraceRow> rows;
    std::vector<double> final_regret_lo;
    double final_regret_hi = 0.0;
    std::uint64_t iterations = 0;
    /// Iterations on which the target trusted a source (bandits), or (h, s)
    /// pairs that trusted one, summed over iterations (RL).
    std::uint64_t trust_events = 0;
    /// Main-loop iterations (bandits), or H S per iteration (RL).
    std::uint64_t trust_opportunities = 0;

    /// (k, cumulative) at every checkpoint of one tier.
    std::vector<std::pair<std::uint64_t, double>> series(int tier) const;
    /// Cumulative regret of a tier at checkpoint k; throws if k was not emitted.
    double cumulative_at(int tier, std::uint64_t k) const;
};

/// Checkpoints every `stride` iterations plus the last one.
inline bool is_checkpoint(std::uint64_t k, std::uint64_t stride, std::uint64_t K) {
    return k == K || (stride > 0 && k % stride == 0);
}

inline std::uint64_t default_checkpoint_stride(std::uint64_t K) {
    return K / 1000 > 0 ? K / 1000 : 1;
}

/// run_id,seed,algo,k,tier,regret_increment,cum_regret,branch,trusted_task
void write_trace_header(std::ostream& out);
void write_trace_rows(std::ostream& out, const RegretTrace& trace, const std::string& run_id,
                      std::uint64_t seed, const std::string& algo);

/// %.17g
std::string format_double(double x);

} // namespace tiered
