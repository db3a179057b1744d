#include "tiered/trace.hpp"

#include "tiered/error.hpp"

#include <cstdio>

namespace tiered {

const char* to_string(Branch b) {
    switch (b) {
    case Branch::init: return "init";
    case Branch::trust: return "trust";
    case Branch::explore: return "explore";
    case Branch::none: return "";
    }
    return "";
}

std::string tier_label(int tier) { return tier == kHiTier ? "hi" : "lo:" + std::to_string(tier); }

std::vector<std::pair<std::uint64_t, double>> RegretTrace::series(int tier) const {
    std::vector<std::pair<std::uint64_t, double>> out;
    for (const auto& row : rows)
        if (row.tier == tier) out.emplace_back(row.k, row.cumulative);
    return out;
}

double RegretTrace::cumulative_at(int tier, std::uint64_t k) const {
    for (const auto& row : rows)
        if (row.tier == tier && row.k == k) return row.cumulative;
    throw Error("no checkpoint at k = " + std::to_string(k) + " for tier " + tier_label(tier));
}

std::string format_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

void write_trace_header(std::ostream& out) {
    out << "run_id,seed,algo,k,tier,regret_increment,cum_regret,branch,trusted_task\n";
}

void write_trace_rows(std::ostream& out, const RegretTrace& trace, const std::string& run_id,
                      std::uint64_t seed, const std::string& algo) {
    for (const auto& row : trace.rows) {
        out << run_id << ',' << seed << ',' << algo << ',' << row.k << ',' << tier_label(row.tier)
            << ',' << format_double(row.increment) << ',' << format_double(row.cumulative) << ','
            << to_string(row.branch) << ',' << row.trusted_task << '\n';
    }
}

} // namespace tiered
