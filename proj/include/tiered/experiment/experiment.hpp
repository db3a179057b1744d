#pragma once

#include "tiered/instances/factory.hpp"
#include "tiered/rl/rl.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace tiered {

enum class ExperimentKind { bandit, rl };

/// Where the task family comes from. Exactly one of the three forms is set.
struct FamilySpec {
    /// Family JSON as written by `instances`.
    std::optional<nlohmann::json> inline_family;
    std::optional<std::filesystem::path> file;
    /// rl: build_experiment(S, A, H, W, delta_min, seed) with W the largest
    /// variant. bandit: a lower-bound construction.
    std::optional<nlohmann::json> generate;
    /// Generated families only: draw a fresh family per run seed.
    bool per_seed = false;
};

struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::rl;
    std::string name = "experiment";
    FamilySpec family;
    /// bandit: ucb, alg1, alg6. rl: single, multi.
    std::vector<std::string> algos;
    /// Source counts; each variant uses the first W sources of the family.
    std::vector<std::size_t> W;
    std::uint64_t K = 1000;
    double alpha = 3.0;
    std::optional<double> lambda;
    /// Unset means the exact Delta_min of the family.
    std::optional<double> delta_min_tilde;
    /// Overrides Delta_tilde / (4(H+1)) (H = 0 for bandits).
    std::optional<double> epsilon;
    std::uint64_t transfer_start_k = 0;
    BonusKind bonus = BonusKind::hoeffding;
    double bonus_scale = 1.0;
    std::vector<std::uint64_t> seeds;
    std::filesystem::path output_dir = "out";
    std::uint64_t checkpoint_stride = 0;
    unsigned threads = 0;
};

/// Field-level validation; relative paths resolve against `base_dir`.
/// Throws ConfigError naming the offending field.
ExperimentConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);
/// Fully resolved form with every default written out.
nlohmann::json to_json(const ExperimentConfig& config);

struct RunSpec {
    std::string variant; ///< "<algo>_W<W>"
    std::string algo;
    std::size_t W = 0;
    std::uint64_t seed = 0;
    std::string run_id; ///< "<variant>_seed<seed>"
};

/// Cross product of algos, W and seeds, in that nesting order.
std::vector<RunSpec> plan_runs(const ExperimentConfig& config);

/// Seed of the generated family used by a run.
std::uint64_t family_seed(const ExperimentConfig& config, std::uint64_t run_seed);

/// The source-prefixed family and learner settings of one rl run, exactly as
/// run_experiment executes it.
struct RlRunSetup {
    MdpFamily family;
    RlRunConfig config;
    double delta_min_tilde = 0.0;
};
RlRunSetup rl_run_setup(const ExperimentConfig& config, const RunSpec& run);

struct ExperimentOutputs {
    std::vector<std::filesystem::path> traces;
    std::vector<std::filesystem::path> run_summaries;
    std::vector<std::filesystem::path> variant_summaries;
    std::filesystem::path summary_csv;
    std::filesystem::path manifest;
};

/// Writes traces/<run_id>.csv, runs/<run_id>.json, summary_<variant>.json,
/// summary.csv and manifest.json under output_dir. Every file is written to a
/// temporary name and renamed; on failure every file this call created is
/// removed before the error propagates.
ExperimentOutputs run_experiment(const ExperimentConfig& config);

struct SummaryRow {
    std::string variant;
    std::uint64_t k = 0;
    double mean = 0.0;
    double lo96 = 0.0;
    double hi96 = 0.0;
    std::size_t n_seeds = 0;
};

/// Linear interpolation between closest ranks: position q (n - 1) in the
/// sorted sample.
double percentile(std::vector<double> values, double q);

/// Mean and 2nd/98th percentiles of the target's cumulative regret across
/// seeds at every checkpoint, per variant (the `algo` column). Throws
/// SchemaMismatch on malformed traces or mismatched checkpoints.
std::vector<SummaryRow> summarize(const std::vector<std::filesystem::path>& traces);
/// All *.csv below `dir`/traces, or below `dir` itself if it has no traces/.
std::vector<SummaryRow> summarize_dir(const std::filesystem::path& dir);
/// variant,k,mean,lo96,hi96,n_seeds
void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows);

void write_file_atomic(const std::filesystem::path& path, const std::string& content);

} // namespace tiered
