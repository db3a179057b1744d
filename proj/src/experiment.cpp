#include "tiered/experiment/experiment.hpp"

#include "tiered/bandit/bandit.hpp"
#include "tiered/core/solvers.hpp"
#include "tiered/error.hpp"
#include "tiered/random.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace tiered {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---- config parsing ------------------------------------------------------

[[noreturn]] void bad(const std::string& field, const std::string& what) {
    throw ConfigError("config." + field + ": " + what);
}

void reject_unknown(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::none_of(keys.begin(), keys.end(), [&](const char* k) { return it.key() == k; }))
            bad(where.empty() ? it.key() : where + "." + it.key(), "unknown field");
    }
}

std::uint64_t as_count(const json& v, const std::string& field, std::uint64_t minimum = 0) {
    if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0))
        bad(field, "expected a nonnegative integer");
    const auto x = v.get<std::uint64_t>();
    if (x < minimum) bad(field, "must be at least " + std::to_string(minimum));
    return x;
}

double as_real(const json& v, const std::string& field) {
    if (!v.is_number()) bad(field, "expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) bad(field, "must be finite");
    return x;
}

std::string as_string(const json& v, const std::string& field) {
    if (!v.is_string()) bad(field, "expected a string");
    return v.get<std::string>();
}

const char* kind_name(ExperimentKind k) { return k == ExperimentKind::bandit ? "bandit" : "rl"; }

bool is_bandit_algo(const std::string& a) { return a == "ucb" || a == "alg1" || a == "alg6"; }
bool is_rl_algo(const std::string& a) { return a == "single" || a == "multi"; }

void check_algo_W(const ExperimentConfig& c) {
    for (const auto& a : c.algos) {
        for (auto w : c.W) {
            const bool single = a == "alg1" || a == "single";
            if (single && w != 1) bad("W", "algo '" + a + "' needs exactly one source, got " + std::to_string(w));
            if (a == "alg6" && w == 0) bad("W", "algo 'alg6' needs at least one source");
        }
    }
}

// ---- families --------------------------------------------------------------

struct LoadedFamily {
    std::optional<MdpFamily> mdp;
    std::optional<BanditFamily> bandit;

    std::size_t sources() const { return mdp ? mdp->sources() : bandit->sources(); }
};

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path.string() + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

std::size_t max_W(const ExperimentConfig& c) { return *std::max_element(c.W.begin(), c.W.end()); }

LoadedFamily load_family(const ExperimentConfig& c, std::uint64_t run_seed) {
    LoadedFamily out;
    const auto& spec = c.family;
    json j;
    if (spec.generate) {
        const json& g = *spec.generate;
        if (c.kind == ExperimentKind::rl) {
            out.mdp = build_experiment(g.at("S").get<std::size_t>(), g.at("A").get<std::size_t>(),
                                       g.at("H").get<std::size_t>(), max_W(c),
                                       g.at("delta_min").get<double>(), family_seed(c, run_seed));
        } else {
            const auto kind = g.at("kind").get<std::string>() == "thm2" ? LowerBoundKind::thm2
                                                                         : LowerBoundKind::thm3;
            std::optional<double> dp;
            if (g.contains("delta_prime")) dp = g.at("delta_prime").get<double>();
            const auto lb = make_lower_bound_instances(kind, g.at("mu").get<double>(),
                                                       g.at("delta").get<double>(), dp);
            const auto candidate = g.value("candidate", std::size_t{0});
            if (candidate >= lb.hi_candidates.size())
                throw ConfigError("config.family.generate.candidate: out of range");
            out.bandit = lb.family(candidate);
        }
        return out;
    }
    j = spec.inline_family ? *spec.inline_family : read_json_file(*spec.file);
    try {
        if (c.kind == ExperimentKind::rl) out.mdp = mdp_family_from_json(j);
        else out.bandit = bandit_family_from_json(j);
    } catch (const Error& e) {
        throw ConfigError(std::string("config.family: ") + e.what());
    }
    return out;
}

template <class Task>
TaskFamily<Task> prefix(const TaskFamily<Task>& f, std::size_t W) {
    TaskFamily<Task> out{f.hi, std::vector<Task>(f.lo.begin(), f.lo.begin() + W), f.meta};
    return out;
}

double oracle_gap(const MdpFamily& f) {
    double g = value_iteration(f.hi).delta_min;
    for (const auto& t : f.lo) {
        const double d = value_iteration(t).delta_min;
        if (d > 0.0 && (g == 0.0 || d < g)) g = d;
    }
    return g;
}

double oracle_gap(const BanditFamily& f) {
    double g = f.hi.delta_min(false);
    for (const auto& t : f.lo) {
        const double d = t.delta_min(false);
        if (d > 0.0 && (g == 0.0 || d < g)) g = d;
    }
    return g;
}

// ---- one run ---------------------------------------------------------------

RlRunSetup rl_setup(const ExperimentConfig& c, const RunSpec& r, const MdpFamily& full) {
    RlRunSetup out{prefix(full, r.W), {}, 0.0};
    const std::size_t H = out.family.hi.horizon();
    out.delta_min_tilde = c.delta_min_tilde ? *c.delta_min_tilde : oracle_gap(out.family);
    RlRunConfig& rc = out.config;
    rc.mode = r.algo == "single" ? RlMode::single : RlMode::multi;
    rc.K = c.K;
    rc.alpha = c.alpha;
    rc.lambda = c.lambda ? *c.lambda : default_lambda(out.family.hi.states());
    rc.bonus = c.bonus;
    rc.bonus_scale = c.bonus_scale;
    rc.epsilon = c.epsilon ? *c.epsilon : out.delta_min_tilde / (4.0 * (static_cast<double>(H) + 1.0));
    rc.transfer_start_k = c.transfer_start_k;
    rc.seed = r.seed;
    rc.checkpoint_stride = c.checkpoint_stride;
    return out;
}

struct RunRecord {
    RunSpec spec;
    std::string csv;
    json summary;
    double final_hi = 0.0;
    double trust_fraction = 0.0;
};

std::string trace_csv(const RegretTrace& trace, const RunSpec& r) {
    std::ostringstream out;
    write_trace_header(out);
    write_trace_rows(out, trace, r.run_id, r.seed, r.variant);
    return out.str();
}

RunRecord execute(const ExperimentConfig& c, const RunSpec& r, const LoadedFamily* shared) {
    LoadedFamily local;
    if (!shared) local = load_family(c, r.seed);
    const LoadedFamily& fam = shared ? *shared : local;

    RunRecord rec{r, {}, json::object(), 0.0, 0.0};
    json derived = json::object();
    RegretTrace trace;
    double gap = 0.0, eps = 0.0;

    if (fam.mdp) {
        auto setup = rl_setup(c, r, *fam.mdp);
        gap = setup.delta_min_tilde;
        eps = setup.config.epsilon;
        const auto& family = setup.family;
        const auto& rc = setup.config;
        auto result = run_tiered_rl(family, rc);
        rec.trust_fraction = result.trust_fraction();
        trace = std::move(result.trace);
        json lo = json::array();
        for (std::size_t w = 0; w < r.W; ++w) lo.push_back(derive_seed(r.seed, w, "lo-episodes"));
        derived["lo-episodes"] = lo;
        derived["hi-episodes"] = derive_seed(r.seed, 0, "hi-episodes");
        derived["task-selection"] = derive_seed(r.seed, 0, "task-selection");
        rec.summary["lambda"] = rc.lambda;
    } else {
        const auto family = prefix(*fam.bandit, r.W);
        gap = c.delta_min_tilde ? *c.delta_min_tilde : oracle_gap(family);
        eps = c.epsilon ? *c.epsilon : gap / 4.0;
        BanditRunConfig bc;
        bc.algo = bandit_algo_from_string(r.algo);
        bc.K = c.K;
        bc.alpha = c.alpha;
        bc.epsilon = eps;
        bc.seed = r.seed;
        bc.checkpoint_stride = c.checkpoint_stride;
        trace = run_bandit(family, bc);
        rec.trust_fraction = trace.trust_opportunities
                                 ? static_cast<double>(trace.trust_events) /
                                       static_cast<double>(trace.trust_opportunities)
                                 : 0.0;
        json lo = json::array();
        for (std::size_t w = 0; w < r.W; ++w) lo.push_back(derive_seed(r.seed, w, "lo-rewards"));
        derived["lo-rewards"] = lo;
        derived["hi-rewards"] = derive_seed(r.seed, 0, "hi-rewards");
        derived["task-selection"] = derive_seed(r.seed, 0, "task-selection");
    }
    if (c.family.generate && c.kind == ExperimentKind::rl) derived["family"] = family_seed(c, r.seed);

    rec.final_hi = trace.final_regret_hi;
    rec.csv = trace_csv(trace, r);
    rec.summary["run_id"] = r.run_id;
    rec.summary["variant"] = r.variant;
    rec.summary["algo"] = r.algo;
    rec.summary["W"] = r.W;
    rec.summary["seed"] = r.seed;
    rec.summary["K"] = c.K;
    rec.summary["delta_min_tilde"] = gap;
    rec.summary["epsilon"] = eps;
    rec.summary["final_regret_hi"] = trace.final_regret_hi;
    rec.summary["final_regret_lo"] = trace.final_regret_lo;
    rec.summary["trust_fraction"] = rec.trust_fraction;
    rec.summary["derived_seeds"] = derived;
    rec.summary["trace"] = "traces/" + r.run_id + ".csv";
    return rec;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

// Tracks created files so a failed run can remove them.
class OutputSet {
  public:
    void write(const fs::path& path, const std::string& content) {
        write_file_atomic(path, content);
        std::lock_guard lock(mutex_);
        created_.push_back(path);
    }
    void rollback() {
        std::lock_guard lock(mutex_);
        std::error_code ec;
        for (const auto& p : created_) fs::remove(p, ec);
        // innermost first; removal only succeeds on empty directories
        for (auto d = dirs_.rbegin(); d != dirs_.rend(); ++d) fs::remove(*d, ec);
        created_.clear();
    }
    void made_dir(const fs::path& d) { dirs_.push_back(d); }

  private:
    std::mutex mutex_;
    std::vector<fs::path> created_;
    std::vector<fs::path> dirs_;
};

void ensure_dir(const fs::path& d, OutputSet& out) {
    if (fs::exists(d)) return;
    fs::create_directories(d);
    out.made_dir(d);
}

// ---- summaries -------------------------------------------------------------

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_real(const std::string& s, const fs::path& file) {
    try {
        std::size_t used = 0;
        const double x = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return x;
    } catch (const std::exception&) {
        throw SchemaMismatch("'" + file.string() + "': bad number '" + s + "'");
    }
}

std::uint64_t parse_count(const std::string& s, const fs::path& file) {
    if (s.empty() || !std::all_of(s.begin(), s.end(), [](char ch) { return ch >= '0' && ch <= '9'; }))
        throw SchemaMismatch("'" + file.string() + "': bad integer '" + s + "'");
    return std::stoull(s);
}

json band_json(const std::vector<double>& v) {
    double sum = 0.0;
    for (double x : v) sum += x;
    return {{"mean", sum / static_cast<double>(v.size())},
            {"lo96", percentile(v, 0.02)},
            {"hi96", percentile(v, 0.98)},
            {"per_seed", v}};
}

} // namespace

// ---- public ----------------------------------------------------------------

ExperimentConfig parse_config(const json& j, const fs::path& base_dir) {
    if (!j.is_object()) throw ConfigError("config: expected an object");
    reject_unknown(j, "",
                   {"kind", "name", "family", "algos", "W", "K", "alpha", "lambda", "delta_min_tilde",
                    "epsilon", "transfer_start_k", "bonus", "bonus_scale", "seeds", "output_dir",
                    "checkpoint_stride", "threads"});
    ExperimentConfig c;
    if (!j.contains("kind")) bad("kind", "required (bandit or rl)");
    const auto kind = as_string(j.at("kind"), "kind");
    if (kind == "bandit") c.kind = ExperimentKind::bandit;
    else if (kind == "rl") c.kind = ExperimentKind::rl;
    else bad("kind", "expected bandit or rl, got '" + kind + "'");
    if (j.contains("name")) {
        c.name = as_string(j.at("name"), "name");
        if (c.name.empty()) bad("name", "must not be empty");
    }

    if (!j.contains("family")) bad("family", "required");
    const json& f = j.at("family");
    if (!f.is_object()) bad("family", "expected an object");
    reject_unknown(f, "family", {"inline", "file", "generate", "per_seed"});
    const int forms = f.contains("inline") + f.contains("file") + f.contains("generate");
    if (forms != 1) bad("family", "give exactly one of inline, file, generate");
    if (f.contains("inline")) c.family.inline_family = f.at("inline");
    if (f.contains("file")) {
        fs::path p = as_string(f.at("file"), "family.file");
        c.family.file = p.is_absolute() || base_dir.empty() ? p : base_dir / p;
    }
    if (f.contains("generate")) {
        const json& g = f.at("generate");
        if (!g.is_object()) bad("family.generate", "expected an object");
        if (c.kind == ExperimentKind::rl) {
            reject_unknown(g, "family.generate", {"S", "A", "H", "delta_min", "seed"});
            for (const char* k : {"S", "A", "H"}) {
                if (!g.contains(k)) bad(std::string("family.generate.") + k, "required");
                as_count(g.at(k), std::string("family.generate.") + k, 1);
            }
            if (!g.contains("delta_min")) bad("family.generate.delta_min", "required");
            if (!(as_real(g.at("delta_min"), "family.generate.delta_min") > 0.0))
                bad("family.generate.delta_min", "must be positive");
            if (g.contains("seed")) as_count(g.at("seed"), "family.generate.seed");
        } else {
            reject_unknown(g, "family.generate", {"kind", "mu", "delta", "delta_prime", "candidate"});
            if (!g.contains("kind")) bad("family.generate.kind", "required (thm2 or thm3)");
            const auto lk = as_string(g.at("kind"), "family.generate.kind");
            if (lk != "thm2" && lk != "thm3") bad("family.generate.kind", "expected thm2 or thm3");
            for (const char* k : {"mu", "delta"}) {
                if (!g.contains(k)) bad(std::string("family.generate.") + k, "required");
                as_real(g.at(k), std::string("family.generate.") + k);
            }
            if (g.contains("delta_prime")) as_real(g.at("delta_prime"), "family.generate.delta_prime");
            if (g.contains("candidate")) as_count(g.at("candidate"), "family.generate.candidate");
        }
        c.family.generate = g;
    }
    if (f.contains("per_seed")) {
        if (!f.at("per_seed").is_boolean()) bad("family.per_seed", "expected true or false");
        c.family.per_seed = f.at("per_seed").get<bool>();
        if (c.family.per_seed && !c.family.generate)
            bad("family.per_seed", "only applies to generated families");
    }

    if (!j.contains("algos")) bad("algos", "required");
    const json& algos = j.at("algos");
    if (!algos.is_array() || algos.empty()) bad("algos", "expected a nonempty list");
    for (std::size_t i = 0; i < algos.size(); ++i) {
        const auto field = "algos[" + std::to_string(i) + "]";
        const auto a = as_string(algos[i], field);
        if (c.kind == ExperimentKind::bandit && !is_bandit_algo(a))
            bad(field, "expected ucb, alg1 or alg6, got '" + a + "'");
        if (c.kind == ExperimentKind::rl && !is_rl_algo(a))
            bad(field, "expected single or multi, got '" + a + "'");
        if (std::find(c.algos.begin(), c.algos.end(), a) != c.algos.end()) bad(field, "duplicate");
        c.algos.push_back(a);
    }

    if (j.contains("W")) {
        const json& w = j.at("W");
        if (!w.is_array() || w.empty()) bad("W", "expected a nonempty list");
        for (std::size_t i = 0; i < w.size(); ++i) {
            const auto x = as_count(w[i], "W[" + std::to_string(i) + "]");
            if (std::find(c.W.begin(), c.W.end(), x) != c.W.end())
                bad("W[" + std::to_string(i) + "]", "duplicate");
            c.W.push_back(static_cast<std::size_t>(x));
        }
    } else {
        c.W = {1};
    }
    check_algo_W(c);

    if (j.contains("K")) c.K = as_count(j.at("K"), "K", 1);
    if (j.contains("alpha")) c.alpha = as_real(j.at("alpha"), "alpha");
    if (!(c.alpha > 2.0)) bad("alpha", "must exceed 2");
    if (j.contains("lambda")) {
        c.lambda = as_real(j.at("lambda"), "lambda");
        if (!(*c.lambda > 0.0)) bad("lambda", "must be positive");
    }
    if (j.contains("delta_min_tilde")) {
        const json& d = j.at("delta_min_tilde");
        if (!(d.is_string() && d.get<std::string>() == "oracle")) {
            c.delta_min_tilde = as_real(d, "delta_min_tilde");
            if (!(*c.delta_min_tilde > 0.0)) bad("delta_min_tilde", "must be positive or \"oracle\"");
        }
    }
    if (j.contains("epsilon")) {
        c.epsilon = as_real(j.at("epsilon"), "epsilon");
        if (*c.epsilon < 0.0) bad("epsilon", "must be nonnegative");
    }
    if (j.contains("transfer_start_k")) c.transfer_start_k = as_count(j.at("transfer_start_k"), "transfer_start_k");
    if (j.contains("bonus")) {
        const auto b = as_string(j.at("bonus"), "bonus");
        if (b != "hoeffding" && b != "bernstein") bad("bonus", "expected hoeffding or bernstein");
        c.bonus = bonus_kind_from_string(b);
    }
    if (j.contains("bonus_scale")) {
        c.bonus_scale = as_real(j.at("bonus_scale"), "bonus_scale");
        if (!(c.bonus_scale > 0.0)) bad("bonus_scale", "must be positive");
    }

    if (!j.contains("seeds")) bad("seeds", "required");
    const json& seeds = j.at("seeds");
    if (!seeds.is_array() || seeds.empty()) bad("seeds", "expected a nonempty list");
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        const auto field = "seeds[" + std::to_string(i) + "]";
        const auto s = as_count(seeds[i], field);
        if (std::find(c.seeds.begin(), c.seeds.end(), s) != c.seeds.end()) bad(field, "duplicate seed");
        c.seeds.push_back(s);
    }

    if (j.contains("output_dir")) {
        fs::path p = as_string(j.at("output_dir"), "output_dir");
        if (p.empty()) bad("output_dir", "must not be empty");
        c.output_dir = p;
    }
    if (c.output_dir.is_relative() && !base_dir.empty()) c.output_dir = base_dir / c.output_dir;
    if (j.contains("checkpoint_stride")) c.checkpoint_stride = as_count(j.at("checkpoint_stride"), "checkpoint_stride");
    if (j.contains("threads")) c.threads = static_cast<unsigned>(as_count(j.at("threads"), "threads"));
    return c;
}

ExperimentConfig load_config(const fs::path& path) {
    const json j = read_json_file(path);
    // Paths in the file are relative to the working directory, like CLI arguments.
    return parse_config(j, {});
}

json to_json(const ExperimentConfig& c) {
    json j;
    j["kind"] = kind_name(c.kind);
    j["name"] = c.name;
    json f = json::object();
    if (c.family.inline_family) f["inline"] = *c.family.inline_family;
    if (c.family.file) f["file"] = c.family.file->string();
    if (c.family.generate) f["generate"] = *c.family.generate;
    f["per_seed"] = c.family.per_seed;
    j["family"] = f;
    j["algos"] = c.algos;
    j["W"] = c.W;
    j["K"] = c.K;
    j["alpha"] = c.alpha;
    j["lambda"] = c.lambda ? json(*c.lambda) : json("default");
    j["delta_min_tilde"] = c.delta_min_tilde ? json(*c.delta_min_tilde) : json("oracle");
    j["epsilon"] = c.epsilon ? json(*c.epsilon) : json("default");
    j["transfer_start_k"] = c.transfer_start_k;
    j["bonus"] = to_string(c.bonus);
    j["bonus_scale"] = c.bonus_scale;
    j["seeds"] = c.seeds;
    j["output_dir"] = c.output_dir.string();
    j["checkpoint_stride"] = c.checkpoint_stride ? c.checkpoint_stride : default_checkpoint_stride(c.K);
    return j;
}

std::vector<RunSpec> plan_runs(const ExperimentConfig& c) {
    std::vector<RunSpec> out;
    for (const auto& a : c.algos)
        for (auto w : c.W)
            for (auto s : c.seeds) {
                RunSpec r;
                r.algo = a;
                r.W = w;
                r.seed = s;
                r.variant = a + "_W" + std::to_string(w);
                r.run_id = r.variant + "_seed" + std::to_string(s);
                out.push_back(std::move(r));
            }
    return out;
}

std::uint64_t family_seed(const ExperimentConfig& c, std::uint64_t run_seed) {
    const std::uint64_t base =
        c.family.generate ? c.family.generate->value("seed", std::uint64_t{0}) : 0;
    return c.family.per_seed ? derive_seed(run_seed, base, "family") : base;
}

RlRunSetup rl_run_setup(const ExperimentConfig& c, const RunSpec& r) {
    if (c.kind != ExperimentKind::rl) throw ConfigError("config.kind: not an rl experiment");
    const auto fam = load_family(c, r.seed);
    if (r.W > fam.sources())
        throw ConfigError("config.W: family has only " + std::to_string(fam.sources()) + " sources");
    return rl_setup(c, r, *fam.mdp);
}

void write_file_atomic(const fs::path& path, const std::string& content) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
        out << content;
        out.flush();
        if (!out) {
            std::error_code ec;
            fs::remove(tmp, ec);
            throw std::runtime_error("write to '" + tmp.string() + "' failed");
        }
    }
    fs::rename(tmp, path);
}

ExperimentOutputs run_experiment(const ExperimentConfig& c) {
    const auto runs = plan_runs(c);
    OutputSet files;
    ExperimentOutputs outputs;
    try {
        // Fixed families are loaded and checked once, before any run starts.
        std::optional<LoadedFamily> shared;
        if (!c.family.per_seed) {
            shared = load_family(c, 0);
            if (max_W(c) > shared->sources())
                throw ConfigError("config.W: family has only " + std::to_string(shared->sources()) +
                                  " source tasks");
        }

        ensure_dir(c.output_dir, files);
        ensure_dir(c.output_dir / "traces", files);
        ensure_dir(c.output_dir / "runs", files);

        std::vector<RunRecord> records(runs.size());
        std::atomic<std::size_t> next{0};
        std::atomic<bool> failed{false};
        std::exception_ptr error;
        std::mutex error_mutex;
        auto worker = [&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= runs.size() || failed.load()) return;
                try {
                    records[i] = execute(c, runs[i], shared ? &*shared : nullptr);
                    files.write(c.output_dir / "traces" / (runs[i].run_id + ".csv"), records[i].csv);
                    files.write(c.output_dir / "runs" / (runs[i].run_id + ".json"),
                                dump(records[i].summary));
                    records[i].csv.clear();
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                    failed = true;
                }
            }
        };
        unsigned n = c.threads ? c.threads : std::max(1u, std::thread::hardware_concurrency());
        n = static_cast<unsigned>(std::min<std::size_t>(n, runs.size()));
        std::vector<std::jthread> pool;
        for (unsigned t = 0; t + 1 < n; ++t) pool.emplace_back(worker);
        worker();
        pool.clear();
        if (error) std::rethrow_exception(error);

        json manifest_runs = json::array();
        std::map<std::string, std::vector<const RunRecord*>> by_variant;
        std::vector<std::string> variant_order;
        for (const auto& r : records) {
            outputs.traces.push_back(c.output_dir / "traces" / (r.spec.run_id + ".csv"));
            outputs.run_summaries.push_back(c.output_dir / "runs" / (r.spec.run_id + ".json"));
            if (!by_variant.count(r.spec.variant)) variant_order.push_back(r.spec.variant);
            by_variant[r.spec.variant].push_back(&r);
            manifest_runs.push_back({{"run_id", r.spec.run_id},
                                     {"variant", r.spec.variant},
                                     {"seed", r.spec.seed},
                                     {"derived_seeds", r.summary.at("derived_seeds")},
                                     {"trace", r.summary.at("trace")},
                                     {"summary", "runs/" + r.spec.run_id + ".json"}});
        }
        json variants = json::array();
        for (const auto& v : variant_order) {
            const auto& group = by_variant[v];
            std::vector<double> finals, trust;
            std::vector<std::uint64_t> seeds;
            for (const auto* r : group) {
                finals.push_back(r->final_hi);
                trust.push_back(r->trust_fraction);
                seeds.push_back(r->spec.seed);
            }
            json s = {{"variant", v},
                      {"algo", group.front()->spec.algo},
                      {"W", group.front()->spec.W},
                      {"K", c.K},
                      {"n_seeds", group.size()},
                      {"seeds", seeds},
                      {"final_regret_hi", band_json(finals)},
                      {"trust_fraction", band_json(trust)}};
            const auto path = c.output_dir / ("summary_" + v + ".json");
            files.write(path, dump(s));
            outputs.variant_summaries.push_back(path);
            variants.push_back("summary_" + v + ".json");
        }

        std::ostringstream csv;
        write_summary_csv(csv, summarize(outputs.traces));
        outputs.summary_csv = c.output_dir / "summary.csv";
        files.write(outputs.summary_csv, csv.str());

        json manifest = {{"library_version", TIERED_VERSION},
                         {"config", to_json(c)},
                         {"seed_derivation", "derive_seed(master, index, tag): splitmix64 over "
                                             "master, index and an FNV-1a hash of tag"},
                         {"runs", manifest_runs},
                         {"variant_summaries", variants},
                         {"summary_csv", "summary.csv"}};
        if (c.family.generate && c.kind == ExperimentKind::rl && !c.family.per_seed)
            manifest["family_seed"] = family_seed(c, 0);
        outputs.manifest = c.output_dir / "manifest.json";
        files.write(outputs.manifest, dump(manifest));
    } catch (...) {
        files.rollback();
        throw;
    }
    return outputs;
}

double percentile(std::vector<double> v, double q) {
    if (v.empty()) throw ParameterOutOfRange("percentile of an empty sample");
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    const double t = pos - static_cast<double>(lo);
    return v[lo] + t * (v[hi] - v[lo]);
}

std::vector<SummaryRow> summarize(const std::vector<fs::path>& traces) {
    if (traces.empty()) throw SchemaMismatch("no trace files to summarize");
    static const std::string header =
        "run_id,seed,algo,k,tier,regret_increment,cum_regret,branch,trusted_task";
    // variant -> run_id -> k -> cumulative target regret
    std::map<std::string, std::map<std::string, std::map<std::uint64_t, double>>> data;
    std::vector<std::string> order;
    for (const auto& file : traces) {
        std::ifstream in(file);
        if (!in) throw SchemaMismatch("cannot open '" + file.string() + "'");
        std::string line;
        if (!std::getline(in, line) || line != header)
            throw SchemaMismatch("'" + file.string() + "': unexpected header");
        std::size_t lineno = 1;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            const auto cells = split_csv(line);
            if (cells.size() != 9)
                throw SchemaMismatch("'" + file.string() + "' line " + std::to_string(lineno) +
                                     ": expected 9 columns, got " + std::to_string(cells.size()));
            if (cells[4] != "hi") continue;
            const auto& variant = cells[2];
            if (!data.count(variant)) order.push_back(variant);
            auto& run = data[variant][cells[0]];
            const auto k = parse_count(cells[3], file);
            if (!run.emplace(k, parse_real(cells[6], file)).second)
                throw SchemaMismatch("'" + file.string() + "': duplicate checkpoint k = " + std::to_string(k));
        }
    }
    std::vector<SummaryRow> out;
    for (const auto& variant : order) {
        const auto& runs = data[variant];
        const auto& first = runs.begin()->second;
        for (const auto& [id, run] : runs) {
            if (run.size() != first.size() ||
                !std::equal(run.begin(), run.end(), first.begin(),
                            [](const auto& a, const auto& b) { return a.first == b.first; }))
                throw SchemaMismatch("variant '" + variant + "': run '" + id +
                                     "' has different checkpoints");
        }
        for (const auto& [k, unused] : first) {
            std::vector<double> v;
            for (const auto& [id, run] : runs) v.push_back(run.at(k));
            double sum = 0.0;
            for (double x : v) sum += x;
            out.push_back({variant, k, sum / static_cast<double>(v.size()), percentile(v, 0.02),
                           percentile(v, 0.98), v.size()});
        }
    }
    return out;
}

std::vector<SummaryRow> summarize_dir(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw SchemaMismatch("'" + dir.string() + "' is not a directory");
    const fs::path root = fs::is_directory(dir / "traces") ? dir / "traces" : dir;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_regular_file() && e.path().extension() == ".csv" && e.path().filename() != "summary.csv")
            files.push_back(e.path());
    std::sort(files.begin(), files.end());
    return summarize(files);
}

void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows) {
    out << "variant,k,mean,lo96,hi96,n_seeds\n";
    for (const auto& r : rows)
        out << r.variant << ',' << r.k << ',' << format_double(r.mean) << ',' << format_double(r.lo96)
            << ',' << format_double(r.hi96) << ',' << r.n_seeds << '\n';
}

} // namespace tiered
