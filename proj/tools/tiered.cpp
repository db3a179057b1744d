// Command-line entry point: run, summarize, instances, sets, verify-ovd.

#include "tiered/analysis/metrics.hpp"
#include "tiered/core/serialization.hpp"
#include "tiered/core/solvers.hpp"
#include "tiered/error.hpp"
#include "tiered/experiment/experiment.hpp"
#include "tiered/instances/factory.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using nlohmann::json;
using namespace tiered;

json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw SchemaMismatch("'" + path + "' is not valid JSON: " + e.what());
    }
}

bool is_bandit_family(const json& j) {
    return j.is_object() && j.contains("hi") && j.at("hi").is_object() && j.at("hi").contains("means");
}

void emit(const json& j, const std::string& out_path) {
    const auto text = j.dump(2) + "\n";
    if (out_path.empty() || out_path == "-") std::cout << text;
    else write_file_atomic(out_path, text);
}

json state_sets_json(const StateSets& sets) {
    json j = json::object();
    for (std::size_t h = 0; h < sets.size(); ++h) j[std::to_string(h)] = sets[h];
    return j;
}

json pair_sets_json(const PairSets& sets) {
    json j = json::object();
    for (std::size_t h = 0; h < sets.size(); ++h) {
        json layer = json::array();
        for (auto [s, a] : sets[h]) layer.push_back({s, a});
        j[std::to_string(h)] = layer;
    }
    return j;
}

RlMode parse_mode(const std::string& m) {
    if (m == "single") return RlMode::single;
    if (m == "multi") return RlMode::multi;
    throw ConfigError("--mode: expected single or multi, got '" + m + "'");
}

OvdExampleKind parse_example(const std::string& k) {
    if (k == "identical") return OvdExampleKind::identical;
    if (k == "small-error") return OvdExampleKind::small_error;
    if (k == "known-diff") return OvdExampleKind::known_diff;
    if (k == "plus-one-shift") return OvdExampleKind::plus_one_shift;
    throw ConfigError("--example: expected identical, small-error, known-diff or plus-one-shift");
}

double family_gap(const MdpFamily& f) {
    double g = value_iteration(f.hi).delta_min;
    for (const auto& t : f.lo) {
        const double d = value_iteration(t).delta_min;
        if (d > 0.0 && (g == 0.0 || d < g)) g = d;
    }
    return g;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Tiered transfer learning experiments"};
    app.set_version_flag("--version", TIERED_VERSION);
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "Run every variant and seed of an experiment config");
    std::string config_path;
    unsigned threads = 0;
    std::string output_override;
    run->add_option("config", config_path, "Experiment config (JSON)")->required();
    run->add_option("--threads", threads, "Worker threads (0 = all cores)");
    run->add_option("--output-dir", output_override, "Overrides output_dir");

    auto* summarize_cmd = app.add_subcommand("summarize", "Aggregate trace CSVs across seeds");
    std::string summarize_dir_path, summarize_out;
    summarize_cmd->add_option("dir", summarize_dir_path, "Output directory of a run")->required();
    summarize_cmd->add_option("-o,--output", summarize_out, "Destination (default <dir>/summary.csv, - for stdout)");

    auto* instances = app.add_subcommand("instances", "Emit a task family as JSON");
    std::string inst_kind, inst_out, inst_base, inst_example = "identical";
    std::size_t S = 3, A = 3, H = 5, W = 1, candidate = 0;
    double delta = 0.1, mu = 0.5, reward_delta = 0.0, transition_delta = 0.0, xi_r = 0.0, xi_p = 0.0;
    std::optional<double> delta_prime;
    std::uint64_t inst_seed = 0;
    bool all_candidates = false;
    instances->add_option("kind", inst_kind, "experiment | thm2 | thm3 | ovd")->required()
        ->check(CLI::IsMember({"experiment", "thm2", "thm3", "ovd"}));
    instances->add_option("--S", S, "States (experiment)");
    instances->add_option("--A", A, "Actions (experiment)");
    instances->add_option("--H", H, "Horizon (experiment)");
    instances->add_option("--W", W, "Source tasks (experiment)");
    instances->add_option("--delta", delta, "Delta_min (experiment) or gap (thm2/thm3)");
    instances->add_option("--mu", mu, "Best mean (thm2/thm3)");
    instances->add_option("--delta-prime", delta_prime, "Second gap (thm3)");
    instances->add_option("--candidate", candidate, "Target candidate index (thm2/thm3)");
    instances->add_flag("--all-candidates", all_candidates, "Emit one family per target candidate");
    instances->add_option("--base", inst_base, "Base task or family JSON (ovd)");
    instances->add_option("--example", inst_example, "identical | small-error | known-diff | plus-one-shift");
    instances->add_option("--reward-delta", reward_delta, "small-error reward bound");
    instances->add_option("--transition-delta", transition_delta, "small-error L1 bound");
    instances->add_option("--xi-r", xi_r, "known-diff reward shift");
    instances->add_option("--xi-p", xi_p, "known-diff per-step shift");
    instances->add_option("--seed", inst_seed, "Seed");
    instances->add_option("-o,--output", inst_out, "Destination (default stdout)");

    auto* sets = app.add_subcommand("sets", "Transferable and benefitable sets of an MDP family");
    std::string sets_family, sets_mode = "multi", sets_out;
    double lambda = 0.3;
    std::optional<double> sets_gap;
    sets->add_option("family", sets_family, "Family JSON")->required();
    sets->add_option("--lambda", lambda, "Occupancy threshold");
    sets->add_option("--mode", sets_mode, "single | multi");
    sets->add_option("--delta-min-tilde", sets_gap, "Gap lower bound (default: exact)");
    sets->add_option("-o,--output", sets_out, "Destination (default stdout)");

    auto* ovd = app.add_subcommand("verify-ovd", "Check optimal value dominance for every source");
    std::string ovd_family, ovd_mode = "all";
    std::optional<double> ovd_gap;
    ovd->add_option("family", ovd_family, "Family JSON")->required();
    ovd->add_option("--mode", ovd_mode, "all | reachable")->check(CLI::IsMember({"all", "reachable"}));
    ovd->add_option("--delta-min", ovd_gap, "Gap (default: exact Delta_min of the family)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*run) {
            auto config = load_config(config_path);
            if (threads) config.threads = threads;
            if (!output_override.empty()) config.output_dir = output_override;
            const auto out = run_experiment(config);
            std::cout << "wrote " << out.traces.size() << " traces, " << out.variant_summaries.size()
                      << " variant summaries, " << out.manifest.string() << "\n";
        } else if (*summarize_cmd) {
            const auto rows = summarize_dir(summarize_dir_path);
            std::ostringstream csv;
            write_summary_csv(csv, rows);
            if (summarize_out == "-") std::cout << csv.str();
            else {
                const std::filesystem::path dest =
                    summarize_out.empty() ? std::filesystem::path(summarize_dir_path) / "summary.csv"
                                          : std::filesystem::path(summarize_out);
                write_file_atomic(dest, csv.str());
                std::cout << "wrote " << dest.string() << "\n";
            }
        } else if (*instances) {
            if (inst_kind == "experiment") {
                emit(to_json(build_experiment(S, A, H, W, delta, inst_seed)), inst_out);
            } else if (inst_kind == "thm2" || inst_kind == "thm3") {
                const auto lb = make_lower_bound_instances(
                    inst_kind == "thm2" ? LowerBoundKind::thm2 : LowerBoundKind::thm3, mu, delta, delta_prime);
                if (all_candidates) {
                    json arr = json::array();
                    for (std::size_t i = 0; i < lb.hi_candidates.size(); ++i) arr.push_back(to_json(lb.family(i)));
                    emit(arr, inst_out);
                } else {
                    if (candidate >= lb.hi_candidates.size())
                        throw ParameterOutOfRange("--candidate: out of range");
                    emit(to_json(lb.family(candidate)), inst_out);
                }
            } else {
                if (inst_base.empty()) throw ConfigError("--base is required for ovd");
                const json base_json = read_json(inst_base);
                const TabularMdp base = base_json.contains("hi") ? mdp_from_json(base_json.at("hi"))
                                                                 : mdp_from_json(base_json);
                OvdExampleParams p;
                p.reward_delta = reward_delta;
                p.transition_delta = transition_delta;
                p.seed = inst_seed;
                p.xi_r = xi_r;
                p.xi_p = xi_p;
                MdpFamily fam{base, {make_ovd_example(parse_example(inst_example), base, p)},
                              FamilyMeta{"ovd-" + inst_example, inst_seed,
                                         {{"reward_delta", reward_delta},
                                          {"transition_delta", transition_delta},
                                          {"xi_r", xi_r},
                                          {"xi_p", xi_p}}}};
                emit(to_json(fam), inst_out);
            }
        } else if (*sets) {
            const auto family = mdp_family_from_json(read_json(sets_family));
            const auto mode = parse_mode(sets_mode);
            const double gap = sets_gap ? *sets_gap : family_gap(family);
            const auto Z = transferable_sets(family, lambda, gap, mode);
            const auto C = benefitable_sets(family, lambda, gap, mode);
            json witness = json::object();
            for (std::size_t h = 0; h < Z.witness.size(); ++h) witness[std::to_string(h)] = Z.witness[h];
            emit({{"lambda", lambda},
                  {"mode", sets_mode},
                  {"delta_min_tilde", gap},
                  {"Z", state_sets_json(Z.states)},
                  {"witness", witness},
                  {"C1", pair_sets_json(C.C1)},
                  {"C2", pair_sets_json(C.C2)},
                  {"Cstar", pair_sets_json(C.Cstar)},
                  {"C", pair_sets_json(C.C)}},
                 sets_out);
        } else if (*ovd) {
            const json j = read_json(ovd_family);
            json reports = json::array();
            bool all = true;
            auto report_json = [&](const OvdReport& r, std::size_t w) {
                json v = json::array();
                for (auto [h, s] : r.violating_states) v.push_back({h, s});
                all = all && r.holds;
                return json{{"source", w},
                            {"holds", r.holds},
                            {"worst_violation", r.worst_violation},
                            {"violating_states", v}};
            };
            double gap = 0.0;
            if (is_bandit_family(j)) {
                const auto f = bandit_family_from_json(j);
                gap = ovd_gap ? *ovd_gap : f.hi.delta_min(false);
                for (std::size_t w = 0; w < f.sources(); ++w)
                    reports.push_back(report_json(verify_ovd(f.lo[w], f.hi, gap), w));
            } else {
                const auto f = mdp_family_from_json(j);
                gap = ovd_gap ? *ovd_gap : family_gap(f);
                const auto mode = ovd_mode == "reachable" ? OvdMode::reachable_only : OvdMode::all_states;
                for (std::size_t w = 0; w < f.sources(); ++w)
                    reports.push_back(report_json(verify_ovd(f.lo[w], f.hi, gap, mode), w));
            }
            emit({{"delta_min", gap}, {"holds", all}, {"sources", reports}}, "");
        }
    } catch (const CalibrationFailed& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const MissingArtifacts& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const Error& e) {
        // everything else in the hierarchy is a validation failure
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
