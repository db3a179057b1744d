#include "tiered/analysis/metrics.hpp"

#include "tiered/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace tiered {

namespace {

constexpr double kTolerance = 1e-9;

double round12(double x) { return std::round(x * 1e12) / 1e12; }

bool is_close(const ValueSolution& lo, const ValueSolution& hi, std::size_t h, std::size_t s,
              double eps) {
    return round12(lo.V(h, s) - hi.V(h, s)) <= eps && lo.pi_star(h, s) == hi.pi_star(h, s);
}

std::size_t checked_horizon(const MdpFamily& family) {
    for (const auto& t : family.lo)
        if (!t.same_shape(family.hi)) throw ShapeMismatch("source and target shapes differ");
    return family.hi.horizon();
}

} // namespace

StateSets epsilon_close_states(const TabularMdp& lo, const TabularMdp& hi, double eps) {
    if (!lo.same_shape(hi)) throw ShapeMismatch("tasks differ in shape");
    const auto ls = value_iteration(lo, true);
    const auto hs = value_iteration(hi, true);
    StateSets out(hi.horizon());
    for (std::size_t h = 0; h < hi.horizon(); ++h)
        for (std::size_t s = 0; s < hi.states(); ++s)
            if (is_close(ls, hs, h, s, eps)) out[h].push_back(static_cast<State>(s));
    return out;
}

std::size_t TransferableSets::size() const {
    std::size_t n = 0;
    for (const auto& layer : states) n += layer.size();
    return n;
}

bool TransferableSets::contains(std::size_t h, State s) const {
    return std::binary_search(states[h].begin(), states[h].end(), s);
}

TransferableSets transferable_sets(const MdpFamily& family, double lambda,
                                   double delta_min_tilde, RlMode mode) {
    const std::size_t H = checked_horizon(family), S = family.hi.states();
    const double eps = delta_min_tilde / (4.0 * (static_cast<double>(H) + 1.0));
    const std::size_t W = mode == RlMode::single ? std::min<std::size_t>(1, family.sources())
                                                 : family.sources();
    const auto hs = value_iteration(family.hi, true);
    const auto d_hi = occupancy(family.hi, hs.pi_star);
    std::vector<ValueSolution> ls;
    std::vector<OccupancyTable> d_lo;
    for (std::size_t w = 0; w < W; ++w) {
        ls.push_back(value_iteration(family.lo[w], true));
        d_lo.push_back(occupancy(family.lo[w], ls.back().pi_star));
    }

    TransferableSets out{StateSets(H), std::vector<std::vector<std::size_t>>(H)};
    for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t s = 0; s < S; ++s) {
            if (mode == RlMode::multi && !(round12(d_hi.state(h, s)) > 0.0)) continue;
            for (std::size_t w = 0; w < W; ++w) {
                const double d = round12(d_lo[w].state(h, s));
                const bool heavy = mode == RlMode::single ? d > lambda : d >= lambda;
                if (heavy && is_close(ls[w], hs, h, s, eps)) {
                    out.states[h].push_back(static_cast<State>(s));
                    out.witness[h].push_back(w);
                    break;
                }
            }
        }
    }
    return out;
}

BenefitableSets benefitable_sets(const MdpFamily& family, double lambda, double delta_min_tilde,
                                 RlMode mode) {
    const TabularMdp& hi = family.hi;
    const std::size_t H = hi.horizon(), S = hi.states(), A = hi.actions();
    const auto Z = transferable_sets(family, lambda, delta_min_tilde, mode);
    const auto hs = value_iteration(hi, true);
    const auto d_hi = occupancy(hi, hs.pi_star);

    BenefitableSets out{PairSets(H), PairSets(H), PairSets(H), PairSets(H)};
    auto in_c1 = [&](std::size_t h, std::size_t s, std::size_t a) {
        return Z.contains(h, static_cast<State>(s)) && a != hs.pi_star(h, s);
    };

    // Blocked: reachable over the support of P_Hi, but not once C1 pairs are cut.
    std::vector<char> reach(S, 0), next(S, 0), any(S, 0), any_next(S, 0);
    reach[hi.initial_state()] = 1;
    any[hi.initial_state()] = 1;
    for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t s = 0; s < S; ++s) {
            for (std::size_t a = 0; a < A; ++a) {
                const auto pair = std::make_pair(static_cast<State>(s), static_cast<Action>(a));
                if (in_c1(h, s, a)) out.C1[h].push_back(pair);
                else if (any[s] && !reach[s] && !Z.contains(h, static_cast<State>(s)))
                    out.C2[h].push_back(pair);
                if (round12(d_hi.d(h, s, a)) > 0.0) out.Cstar[h].push_back(pair);
            }
        }
        std::fill(next.begin(), next.end(), 0);
        std::fill(any_next.begin(), any_next.end(), 0);
        for (std::size_t s = 0; s < S; ++s) {
            if (!any[s]) continue;
            for (std::size_t a = 0; a < A; ++a) {
                const bool open = reach[s] && !in_c1(h, s, a);
                const auto row = hi.next_state_probs(h, s, a);
                for (std::size_t n = 0; n < S; ++n) {
                    if (row[n] <= 0.0) continue;
                    any_next[n] = 1;
                    if (open) next[n] = 1;
                }
            }
        }
        std::swap(reach, next);
        std::swap(any, any_next);
    }
    for (std::size_t h = 0; h < H; ++h) {
        auto& c = out.C[h];
        c = out.C1[h];
        c.insert(c.end(), out.C2[h].begin(), out.C2[h].end());
        c.insert(c.end(), out.Cstar[h].begin(), out.Cstar[h].end());
        std::sort(c.begin(), c.end());
        c.erase(std::unique(c.begin(), c.end()), c.end());
    }
    return out;
}

std::vector<double> pseudo_regret(const TabularMdp& task, std::span<const Policy> policies) {
    const double v_star = value_iteration(task).V(0, task.initial_state());
    std::vector<double> out;
    out.reserve(policies.size());
    std::vector<double> scratch;
    double total = 0.0;
    for (const auto& pi : policies) {
        pi.validate_for(task);
        total += v_star - initial_state_value(task, pi, scratch);
        out.push_back(total);
    }
    return out;
}

StateActionTable surplus(const TabularMdp& hi, const RlHiState& state) {
    const std::size_t H = hi.horizon(), S = hi.states(), A = hi.actions();
    StateActionTable E(H, S, A);
    for (std::size_t h = 0; h < H; ++h) {
        const auto vt = state.V_tilde.layer(h + 1);
        const auto vu = state.V_under.layer(h + 1);
        for (std::size_t s = 0; s < S; ++s)
            for (std::size_t a = 0; a < A; ++a) {
                const auto row = hi.next_state_probs(h, s, a);
                double pt = 0.0, pu = 0.0;
                for (std::size_t n = 0; n < S; ++n) {
                    pt += row[n] * vt[n];
                    pu += row[n] * vu[n];
                }
                E(h, s, a) = state.Q_tilde(h, s, a) - pt + pu - state.Q_under(h, s, a);
            }
    }
    return E;
}

bool bonus_event(const TabularMdp& task, std::span<const double> P_hat,
                 const StateActionTable& counts, const StateActionTable& b) {
    const std::size_t H = task.horizon(), S = task.states(), A = task.actions();
    const double Hd = static_cast<double>(H);
    for (std::size_t h = 0; h < H; ++h)
        for (std::size_t s = 0; s < S; ++s)
            for (std::size_t a = 0; a < A; ++a) {
                if (counts(h, s, a) == 0.0) continue;
                const auto row = task.next_state_probs(h, s, a);
                const double* est = P_hat.data() + ((h * S + s) * A + a) * S;
                double l1 = 0.0;
                for (std::size_t n = 0; n < S; ++n) l1 += std::abs(est[n] - row[n]);
                if (!(Hd * l1 < b(h, s, a))) return false;
            }
    return true;
}

bool concentration_event(const StateActionTable& counts, const StateActionTable& occupancy_sum,
                         std::uint64_t k, double alpha) {
    const double SAH = static_cast<double>(counts.horizon() * counts.states() * counts.actions());
    const double slack = alpha * std::log(2.0 * SAH * static_cast<double>(std::max<std::uint64_t>(k, 1)));
    const auto& n = counts.data();
    const auto& d = occupancy_sum.data();
    for (std::size_t i = 0; i < n.size(); ++i) {
        if (n[i] < 0.5 * d[i] - slack) return false;
        if (n[i] > std::numbers::e * d[i] + slack) return false;
    }
    return true;
}

namespace {

double rate(const std::vector<CheckpointDiagnostics>& c, bool CheckpointDiagnostics::*field) {
    if (c.empty()) return 0.0;
    std::size_t n = 0;
    for (const auto& x : c) n += x.*field ? 1 : 0;
    return static_cast<double>(n) / static_cast<double>(c.size());
}

bool table_at_most(const StateActionTable& lhs, const StateActionTable& rhs) {
    for (std::size_t i = 0; i < lhs.data().size(); ++i)
        if (lhs.data()[i] > rhs.data()[i] + kTolerance) return false;
    return true;
}

} // namespace

double DiagnosticsReport::bonus_event_rate() const {
    return rate(checkpoints, &CheckpointDiagnostics::bonus_event);
}

double DiagnosticsReport::concentration_rate() const {
    return rate(checkpoints, &CheckpointDiagnostics::concentration);
}

double DiagnosticsReport::underestimation_rate() const {
    if (checkpoints.empty()) return 0.0;
    std::size_t n = 0;
    for (const auto& c : checkpoints) n += c.lo_underestimates && c.hi_underestimates ? 1 : 0;
    return static_cast<double>(n) / static_cast<double>(checkpoints.size());
}

double DiagnosticsReport::overestimation_rate(std::uint64_t burn_in) const {
    std::size_t n = 0, total = 0;
    for (const auto& c : checkpoints) {
        if (c.k <= burn_in) continue;
        ++total;
        n += c.hi_overestimates ? 1 : 0;
    }
    return total ? static_cast<double>(n) / static_cast<double>(total) : 0.0;
}

std::size_t DiagnosticsReport::inconsistencies() const {
    std::size_t n = 0;
    for (const auto& c : checkpoints) n += c.inconsistent ? 1 : 0;
    return n;
}

DiagnosticsReport diagnostics(const RlRunResult& run, const MdpFamily& family, double alpha) {
    if (run.artifacts.empty())
        throw MissingArtifacts("run did not record checkpoint artifacts (set record_artifacts)");
    const TabularMdp& hi = family.hi;
    const double Hd = static_cast<double>(hi.horizon());
    const auto hs = value_iteration(hi);
    std::vector<ValueSolution> ls;
    for (std::size_t w = 0; w < run.W; ++w) ls.push_back(value_iteration(family.lo[w]));

    DiagnosticsReport report;
    for (const auto& art : run.artifacts) {
        CheckpointDiagnostics c;
        c.k = art.k;
        c.bonus_event = bonus_event(hi, art.P_hat_hi, art.N_hi, art.b_hi);
        for (std::size_t w = 0; w < run.W && c.bonus_event; ++w)
            c.bonus_event = bonus_event(family.lo[w], art.P_hat_lo[w], art.N_lo[w], art.b_lo[w]);

        const auto E = surplus(hi, art.hi);
        c.surplus_within_bounds = true;
        for (std::size_t i = 0; i < E.data().size(); ++i) {
            const double upper = std::min(Hd, 4.0 * art.b_hi.data()[i]);
            const double e = E.data()[i];
            c.max_surplus_excess = std::max({c.max_surplus_excess, -e, e - upper});
            if (e < -kTolerance || e > upper + kTolerance) c.surplus_within_bounds = false;
        }
        c.inconsistent = c.bonus_event && !c.surplus_within_bounds;

        c.hi_underestimates = table_at_most(art.hi.Q_under, hs.Q);
        c.lo_underestimates = true;
        for (std::size_t w = 0; w < run.W; ++w)
            if (!table_at_most(art.lo_pessimistic[w].Q, ls[w].Q)) c.lo_underestimates = false;
        c.hi_overestimates =
            art.hi.V_tilde(0, hi.initial_state()) >= hs.V(0, hi.initial_state()) - kTolerance;

        const std::uint64_t episodes = art.k - 1;
        c.concentration = concentration_event(art.N_hi, art.occupancy_sum_hi, episodes, alpha);
        for (std::size_t w = 0; w < run.W && c.concentration; ++w)
            c.concentration =
                concentration_event(art.N_lo[w], art.occupancy_sum_lo[w], episodes, alpha);
        report.checkpoints.push_back(c);
    }
    return report;
}

} // namespace tiered
