#include "tiered/instances/factory.hpp"

#include "tiered/core/serialization.hpp"
#include "tiered/core/solvers.hpp"
#include "tiered/error.hpp"
#include "tiered/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace tiered {

using nlohmann::json;

namespace {

constexpr double kViolationSnap = 1e-12;

double snap(double x) { return std::abs(x) <= kViolationSnap ? 0.0 : x; }

std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
    return p;
}

void normalize(std::span<double> row) {
    double total = 0.0;
    for (double x : row) total += x;
    for (double& x : row) x /= total;
    // push the rounding residue onto the largest entry
    double again = 0.0;
    for (double x : row) again += x;
    *std::max_element(row.begin(), row.end()) += 1.0 - again;
}

TabularMdp with_rewards(const TabularMdp& base, std::vector<double> r, double cap) {
    return TabularMdp(base.states(), base.actions(), base.horizon(), base.transitions(),
                      std::move(r), base.initial_state(), cap);
}

// Adjusts rewards bottom-up so that every gap is at least `target`, then lifts
// one non-optimal action so the smallest gap equals `target`.
void calibrate_gaps(std::size_t S, std::size_t A, std::size_t H, const std::vector<double>& P,
                    std::vector<double>& r, double target) {
    std::vector<double> next(S, 0.0), cur(S, 0.0), cont(A);
    auto idx = [&](std::size_t h, std::size_t s, std::size_t a) { return (h * S + s) * A + a; };
    struct Candidate {
        std::size_t h, s, a;
        double gap, lifted_reward;
    };
    std::vector<Candidate> slack;

    for (std::size_t h = H; h-- > 0;) {
        for (std::size_t s = 0; s < S; ++s) {
            for (std::size_t a = 0; a < A; ++a) {
                const double* row = P.data() + idx(h, s, a) * S;
                double c = 0.0;
                for (std::size_t n = 0; n < S; ++n) c += row[n] * next[n];
                cont[a] = c;
            }
            std::size_t best = 0;
            for (std::size_t a = 1; a < A; ++a)
                if (r[idx(h, s, a)] + cont[a] > r[idx(h, s, best)] + cont[best]) best = a;

            if (A > 1) {
                double need = 0.0;
                for (std::size_t a = 0; a < A; ++a)
                    if (a != best) need = std::max(need, cont[a] + target - cont[best]);
                if (need > 1.0) {
                    best = static_cast<std::size_t>(
                        std::max_element(cont.begin(), cont.end()) - cont.begin());
                    for (std::size_t a = 0; a < A; ++a) r[idx(h, s, a)] = a == best ? 1.0 : 0.0;
                } else {
                    r[idx(h, s, best)] = std::max(r[idx(h, s, best)], need);
                    const double q_best = r[idx(h, s, best)] + cont[best];
                    for (std::size_t a = 0; a < A; ++a) {
                        if (a == best) continue;
                        const double cap = q_best - target - cont[a];
                        r[idx(h, s, a)] = std::clamp(std::min(r[idx(h, s, a)], cap), 0.0, 1.0);
                    }
                }
                const double q_best = r[idx(h, s, best)] + cont[best];
                for (std::size_t a = 0; a < A; ++a)
                    if (a != best)
                        slack.push_back({h, s, a, q_best - r[idx(h, s, a)] - cont[a],
                                         q_best - target - cont[a]});
            }
            cur[s] = r[idx(h, s, best)] + cont[best];
        }
        std::swap(cur, next);
    }

    std::sort(slack.begin(), slack.end(),
              [](const Candidate& x, const Candidate& y) { return x.gap < y.gap; });
    for (const auto& c : slack) {
        if (c.lifted_reward >= 0.0 && c.lifted_reward <= 1.0) {
            r[idx(c.h, c.s, c.a)] = c.lifted_reward;
            return;
        }
    }
    throw CalibrationFailed("no action can be moved to the target gap");
}

} // namespace

BanditFamily LowerBoundInstances::family(std::size_t candidate) const {
    if (candidate >= hi_candidates.size()) throw ParameterOutOfRange("no such hi candidate");
    BanditFamily f{hi_candidates[candidate], {lo}, meta};
    f.meta.params["candidate"] = candidate;
    return f;
}

LowerBoundInstances make_lower_bound_instances(LowerBoundKind kind, double mu, double delta,
                                               std::optional<double> delta_prime) {
    if (!(delta > 0.0)) throw ParameterOutOfRange("delta must be positive");
    LowerBoundInstances out;
    out.meta.params = {{"mu", mu}, {"delta", delta}};
    if (kind == LowerBoundKind::thm2) {
        if (!(mu - delta > 0.0 && mu + delta < 1.0))
            throw ParameterOutOfRange("thm2 needs 0 < mu - delta and mu + delta < 1");
        out.meta.kind = "thm2";
        out.lo = MabInstance({mu, mu - delta});
        out.hi_candidates = {out.lo, MabInstance({mu, mu + delta})};
        return out;
    }
    const double dp = delta_prime.value_or(delta / 2.0);
    if (!(mu - 2.0 * delta > 0.0 && mu + delta < 1.0))
        throw ParameterOutOfRange("thm3 needs 0 < mu - 2 delta and mu + delta < 1");
    if (!(dp >= delta / 2.0 && dp <= delta))
        throw ParameterOutOfRange("thm3 needs delta' in [delta/2, delta]");
    out.meta.kind = "thm3";
    out.meta.params["delta_prime"] = dp;
    out.lo = MabInstance({mu, mu - delta});
    out.hi_candidates = {out.lo, MabInstance({mu - dp, mu - delta - dp}),
                         MabInstance({mu - dp, mu + delta - dp})};
    return out;
}

TabularMdp perturb_model(const TabularMdp& base, double reward_delta, double transition_l1,
                         std::uint64_t seed) {
    if (reward_delta < 0.0 || transition_l1 < 0.0)
        throw ParameterOutOfRange("perturbation sizes must be nonnegative");
    const std::size_t S = base.states(), rows = base.horizon() * S * base.actions();
    Rng rng(derive_seed(seed, 0, "perturb"));
    std::vector<double> r = base.rewards();
    for (double& x : r)
        x = std::clamp(x + reward_delta * (2.0 * rng.uniform() - 1.0), 0.0, base.reward_cap());
    // mixing with a random distribution q moves a row by t * |q - p|_1 <= 2t
    std::vector<double> P = base.transitions();
    const double t = transition_l1 / 2.0;
    std::vector<double> q(S);
    for (std::size_t row = 0; row < rows; ++row) {
        for (double& x : q) x = rng.uniform() + 1e-3;
        normalize(q);
        std::span<double> p(P.data() + row * S, S);
        for (std::size_t n = 0; n < S; ++n) p[n] = (1.0 - t) * p[n] + t * q[n];
        normalize(p);
    }
    return TabularMdp(S, base.actions(), base.horizon(), std::move(P), std::move(r),
                      base.initial_state(), base.reward_cap());
}

TabularMdp make_ovd_example(OvdExampleKind kind, const TabularMdp& base,
                            const OvdExampleParams& params) {
    const std::size_t H = base.horizon(), S = base.states(), A = base.actions();
    switch (kind) {
    case OvdExampleKind::identical:
        return base;
    case OvdExampleKind::small_error: {
        const double dmin = params.delta_min ? *params.delta_min : value_iteration(base).delta_min;
        const double Hd = static_cast<double>(H);
        const double r_bound = dmin / (4.0 * Hd * (Hd + 1.0));
        const double p_bound = dmin / (4.0 * Hd * Hd * (Hd + 1.0));
        if (params.reward_delta > r_bound)
            throw PerturbationTooLarge("reward change " + std::to_string(params.reward_delta) +
                                       " exceeds " + std::to_string(r_bound));
        if (params.transition_delta > p_bound)
            throw PerturbationTooLarge("transition change " +
                                       std::to_string(params.transition_delta) + " exceeds " +
                                       std::to_string(p_bound));
        // renormalization can add a rounding residue, so stay a hair inside
        return perturb_model(base, params.reward_delta, params.transition_delta * (1.0 - 1e-9),
                             params.seed);
    }
    case OvdExampleKind::known_diff: {
        if (params.xi_r < 0.0 || params.xi_p < 0.0)
            throw ParameterOutOfRange("xi_r and xi_p must be nonnegative");
        std::vector<double> r = base.rewards();
        double top = 0.0;
        for (std::size_t h = 0; h < H; ++h) {
            const double shift = params.xi_r + static_cast<double>(H - 1 - h) * params.xi_p;
            top = std::max(top, shift);
            for (std::size_t i = 0; i < S * A; ++i) r[h * S * A + i] += shift;
        }
        return with_rewards(base, std::move(r), base.reward_cap() + top);
    }
    case OvdExampleKind::plus_one_shift: {
        std::vector<double> r = base.rewards();
        for (double& x : r) x += 1.0;
        return with_rewards(base, std::move(r), base.reward_cap() + 1.0);
    }
    }
    throw ParameterOutOfRange("unknown OVD example kind");
}

OvdReport verify_ovd(const TabularMdp& lo, const TabularMdp& hi, double delta_min, OvdMode mode) {
    if (!lo.same_shape(hi)) throw ShapeMismatch("OVD needs tasks of the same shape");
    if (!(delta_min > 0.0)) throw ParameterOutOfRange("delta_min must be positive");
    const std::size_t H = hi.horizon(), S = hi.states();
    const auto lo_sol = value_iteration(lo);
    const auto hi_sol = value_iteration(hi);
    std::optional<OccupancyTable> d_lo;
    if (mode == OvdMode::reachable_only) d_lo = occupancy(lo, lo_sol.pi_star);

    const double margin = delta_min / (2.0 * (static_cast<double>(H) + 1.0));
    OvdReport report;
    report.mode = mode;
    bool any = false;
    for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t s = 0; s < S; ++s) {
            if (d_lo && !(d_lo->state(h, s) > kViolationSnap)) continue;
            const double v = snap(hi_sol.V(h, s) - margin - lo_sol.V(h, s));
            if (!any || v > report.worst_violation) report.worst_violation = v;
            any = true;
            if (v > 0.0) report.violating_states.emplace_back(h, s);
        }
    }
    report.holds = report.worst_violation <= 0.0;
    return report;
}

OvdReport verify_ovd(const MabInstance& lo, const MabInstance& hi, double delta_min) {
    if (lo.arm_count() != hi.arm_count()) throw ShapeMismatch("arm counts differ");
    if (!(delta_min > 0.0)) throw ParameterOutOfRange("delta_min must be positive");
    OvdReport report;
    report.worst_violation = snap(hi.best_mean() - delta_min / 2.0 - lo.best_mean());
    report.holds = report.worst_violation <= 0.0;
    return report;
}

MdpFamily build_experiment(std::size_t S, std::size_t A, std::size_t H, std::size_t W,
                           double delta_target, std::uint64_t seed) {
    if (S == 0 || A == 0 || H == 0) throw ParameterOutOfRange("S, A and H must be at least 1");
    if (A < 2) throw ParameterOutOfRange("a positive gap needs at least two actions");
    if (!(delta_target > 0.0 && delta_target <= 1.0))
        throw ParameterOutOfRange("delta_target must lie in (0, 1]");

    Rng rng(derive_seed(seed, 0, "target-task"));
    std::vector<double> P(H * S * A * S);
    std::vector<double> r(H * S * A);
    for (std::size_t row = 0; row < H * S * A; ++row) {
        std::span<double> p(P.data() + row * S, S);
        for (double& x : p) x = rng.uniform() + 1e-12;
        normalize(p);
    }
    for (double& x : r) x = rng.uniform();
    calibrate_gaps(S, A, H, P, r, delta_target);

    MdpFamily family;
    family.hi = TabularMdp(S, A, H, P, r);
    const auto sol = value_iteration(family.hi, true);
    if (std::abs(sol.delta_min - delta_target) > 1e-9)
        throw CalibrationFailed("calibrated Delta_min " + std::to_string(sol.delta_min) +
                                " misses target " + std::to_string(delta_target));

    for (std::size_t w = 0; w < W; ++w) {
        Rng perm_rng(derive_seed(seed, w + 1, "source-permutation"));
        std::vector<double> Pl(P.size()), rl(r.size());
        for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t s = 0; s < S; ++s) {
                const auto sigma = random_permutation(A, perm_rng);
                for (std::size_t a = 0; a < A; ++a) {
                    const std::size_t from = (h * S + s) * A + a;
                    const std::size_t to = (h * S + s) * A + sigma[a];
                    std::copy_n(P.begin() + from * S, S, Pl.begin() + to * S);
                    rl[to] = r[from];
                }
            }
        }
        family.lo.emplace_back(S, A, H, std::move(Pl), std::move(rl));
    }
    family.meta.kind = "experiment";
    family.meta.seed = seed;
    family.meta.params = {{"S", S}, {"A", A}, {"H", H}, {"W", W}, {"delta_target", delta_target}};
    return family;
}

BanditFamily bandit_family(std::vector<double> hi_means,
                           std::vector<std::vector<double>> lo_means) {
    BanditFamily f;
    f.hi = MabInstance(std::move(hi_means));
    for (auto& m : lo_means) {
        f.lo.emplace_back(std::move(m));
        if (f.lo.back().arm_count() != f.hi.arm_count())
            throw ShapeMismatch("source and target arm counts differ");
    }
    f.meta.kind = "means";
    return f;
}

namespace {

json meta_json(const FamilyMeta& m) {
    return {{"kind", m.kind}, {"seed", m.seed}, {"params", m.params}};
}

FamilyMeta meta_from(const json& j) {
    FamilyMeta m;
    if (!j.contains("meta")) return m;
    const json& mj = j.at("meta");
    m.kind = mj.value("kind", std::string{});
    m.seed = mj.value("seed", std::uint64_t{0});
    if (mj.contains("params")) m.params = mj.at("params");
    return m;
}

template <class Family, class Parse>
Family family_from(const json& j, Parse parse) {
    if (!j.is_object() || !j.contains("hi") || !j.contains("lo") || !j.at("lo").is_array())
        throw SchemaMismatch("family needs 'hi' and an array 'lo'");
    Family f;
    f.hi = parse(j.at("hi"));
    for (const auto& t : j.at("lo")) f.lo.push_back(parse(t));
    f.meta = meta_from(j);
    return f;
}

} // namespace

json to_json(const MdpFamily& family) {
    json lo = json::array();
    for (const auto& t : family.lo) lo.push_back(to_json(t));
    return {{"hi", to_json(family.hi)}, {"lo", lo}, {"meta", meta_json(family.meta)}};
}

json to_json(const BanditFamily& family) {
    json lo = json::array();
    for (const auto& t : family.lo) lo.push_back(to_json(t));
    return {{"hi", to_json(family.hi)}, {"lo", lo}, {"meta", meta_json(family.meta)}};
}

MdpFamily mdp_family_from_json(const json& j) {
    auto f = family_from<MdpFamily>(j, [](const json& t) { return mdp_from_json(t); });
    for (const auto& t : f.lo)
        if (!t.same_shape(f.hi)) throw ShapeMismatch("source and target shapes differ");
    return f;
}

BanditFamily bandit_family_from_json(const json& j) {
    auto f = family_from<BanditFamily>(j, [](const json& t) { return mab_from_json(t); });
    for (const auto& t : f.lo)
        if (t.arm_count() != f.hi.arm_count()) throw ShapeMismatch("arm counts differ");
    return f;
}

} // namespace tiered
