#include "tiered/core/models.hpp"

#include "tiered/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace tiered {

namespace {
constexpr double kSumTolerance = 1e-12;
constexpr double kGapFloor = 1e-9;
constexpr double kTieTolerance = 1e-12;
} // namespace

MabInstance::MabInstance(std::vector<double> means) : means_(std::move(means)) {
    if (means_.empty()) throw InvalidModel("bandit needs at least one arm");
    for (std::size_t i = 0; i < means_.size(); ++i) {
        if (!(means_[i] >= 0.0 && means_[i] <= 1.0))
            throw InvalidModel("arm " + std::to_string(i) + " mean outside [0,1]");
    }
}

double MabInstance::best_mean() const { return *std::max_element(means_.begin(), means_.end()); }

std::size_t MabInstance::best_arm() const {
    return static_cast<std::size_t>(std::max_element(means_.begin(), means_.end()) -
                                    means_.begin());
}

std::vector<double> MabInstance::gaps() const {
    const double best = best_mean();
    std::vector<double> g(means_.size());
    for (std::size_t i = 0; i < means_.size(); ++i) g[i] = best - means_[i];
    return g;
}

bool MabInstance::has_unique_optimal() const {
    std::size_t at_best = 0;
    for (double g : gaps())
        if (g <= kTieTolerance) ++at_best;
    return at_best == 1;
}

double MabInstance::delta_min(bool require_unique) const {
    if (require_unique && !has_unique_optimal())
        throw NonUniqueOptimal("bandit has more than one optimal arm");
    double best = 0.0;
    bool found = false;
    for (double g : gaps()) {
        if (g > kGapFloor && (!found || g < best)) {
            best = g;
            found = true;
        }
    }
    if (!found) throw NonUniqueOptimal("bandit has no positive gap");
    return best;
}

TabularMdp::TabularMdp(std::size_t states, std::size_t actions, std::size_t horizon,
                       std::vector<double> transitions, std::vector<double> rewards,
                       State initial_state, double reward_cap)
    : S_(states), A_(actions), H_(horizon), P_(std::move(transitions)), r_(std::move(rewards)),
      s1_(initial_state), reward_cap_(reward_cap) {
    if (S_ == 0 || A_ == 0 || H_ == 0) throw InvalidModel("S, A and H must be positive");
    if (P_.size() != H_ * S_ * A_ * S_)
        throw InvalidModel("transition array has " + std::to_string(P_.size()) +
                           " entries, expected H*S*A*S = " + std::to_string(H_ * S_ * A_ * S_));
    if (r_.size() != H_ * S_ * A_)
        throw InvalidModel("reward array has " + std::to_string(r_.size()) +
                           " entries, expected H*S*A = " + std::to_string(H_ * S_ * A_));
    if (s1_ >= S_) throw InvalidModel("initial state out of range");
    if (!(reward_cap_ >= 0.0)) throw InvalidModel("reward cap must be nonnegative");
    for (std::size_t row = 0; row < H_ * S_ * A_; ++row) {
        double total = 0.0;
        for (std::size_t n = 0; n < S_; ++n) {
            const double p = P_[row * S_ + n];
            if (!(p >= 0.0)) throw InvalidModel("negative transition probability");
            total += p;
        }
        if (std::abs(total - 1.0) > kSumTolerance)
            throw InvalidModel("transition row " + std::to_string(row) + " sums to " +
                               std::to_string(total));
        const double r = r_[row];
        if (!(r >= 0.0 && r <= reward_cap_ + kSumTolerance))
            throw InvalidModel("reward " + std::to_string(row) + " outside [0, cap]");
    }
}

void Policy::validate_for(const TabularMdp& mdp) const {
    if (H_ != mdp.horizon() || S_ != mdp.states())
        throw ShapeMismatch("policy shape does not match the MDP");
    for (Action a : actions_)
        if (a >= mdp.actions()) throw ShapeMismatch("policy action out of range");
}

} // namespace tiered
