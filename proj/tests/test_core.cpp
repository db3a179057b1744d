#include "support.hpp"

#include "tiered/core/serialization.hpp"
#include "tiered/core/solvers.hpp"
#include "tiered/error.hpp"

#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

using namespace tiered;

TEST_CASE("bandit instance validation and gaps") {
    CHECK_THROWS_AS(MabInstance(std::vector<double>{}), InvalidModel);
    CHECK_THROWS_AS(MabInstance({0.5, 1.2}), InvalidModel);
    const MabInstance m({0.9, 0.7, 0.6});
    CHECK(m.best_arm() == 0);
    CHECK(m.delta_min() == doctest::Approx(0.2));
    CHECK(m.gaps()[2] == doctest::Approx(0.3));
    CHECK_THROWS_AS(MabInstance({0.5, 0.5}).delta_min(), NonUniqueOptimal);
    CHECK(MabInstance({0.5, 0.5, 0.2}).delta_min(false) == doctest::Approx(0.3));
    CHECK_THROWS_AS(MabInstance({0.5, 0.5}).delta_min(false), NonUniqueOptimal);
}

TEST_CASE("tabular MDP validation") {
    CHECK_THROWS_AS(TabularMdp(0, 1, 1, {}, {}), InvalidModel);
    CHECK_THROWS_AS(TabularMdp(1, 1, 1, {0.5}, {0.0}), InvalidModel);
    CHECK_THROWS_AS(TabularMdp(1, 1, 1, {1.0}, {1.5}), InvalidModel);
    CHECK_THROWS_AS(TabularMdp(2, 1, 1, {1.0, 0.0, 0.0, 1.0}, {0.0, 0.0}, 2), InvalidModel);
    CHECK_NOTHROW(TabularMdp(1, 1, 1, {1.0}, {1.5}, 0, 2.0));
    const auto m = test::random_mdp(3, 2, 2, 1);
    Policy bad(2, 3, 5);
    CHECK_THROWS_AS(bad.validate_for(m), ShapeMismatch);
    CHECK_THROWS_AS(policy_evaluation(m, Policy(3, 3)), ShapeMismatch);
}

TEST_CASE("value iteration matches exhaustive policy enumeration") {
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
        const auto m = test::random_mdp(2, 2, 3, seed);
        const auto sol = value_iteration(m);
        for (std::size_t h = 0; h < 3; ++h)
            for (std::size_t s = 0; s < 2; ++s) {
                double best = -1.0;
                test::for_each_policy(3, 2, 2, [&](const Policy& pi) {
                    best = std::max(best, test::brute_value(m, pi, h, s));
                });
                CHECK(std::abs(sol.V(h, s) - best) <= 1e-12);
            }
        CHECK(std::abs(test::brute_value(m, sol.pi_star, 0, 0) - sol.V(0, 0)) <= 1e-12);
    }
}

TEST_CASE("value iteration breaks ties toward the lowest action and flags them") {
    const TabularMdp m(1, 3, 1, {1.0, 1.0, 1.0}, {0.2, 0.7, 0.7});
    const auto sol = value_iteration(m);
    CHECK(sol.pi_star(0, 0) == 1);
    CHECK(sol.delta_min == doctest::Approx(0.5));
    CHECK_THROWS_AS(value_iteration(m, true), NonUniqueOptimal);
    const TabularMdp flat(1, 2, 1, {1.0, 1.0}, {0.3, 0.3});
    CHECK(value_iteration(flat).delta_min == 0.0);
    CHECK_THROWS_AS(value_iteration(flat, true), NonUniqueOptimal);
}

TEST_CASE("policy evaluation and initial state value agree with recursion") {
    const auto m = test::random_mdp(3, 3, 4, 11);
    Rng rng(5);
    std::vector<double> scratch;
    for (int rep = 0; rep < 20; ++rep) {
        Policy pi(4, 3);
        for (std::size_t h = 0; h < 4; ++h)
            for (std::size_t s = 0; s < 3; ++s) pi(h, s) = static_cast<Action>(rng.below(3));
        const auto pv = policy_evaluation(m, pi);
        for (std::size_t h = 0; h < 4; ++h)
            for (std::size_t s = 0; s < 3; ++s)
                CHECK(std::abs(pv.V(h, s) - test::brute_value(m, pi, h, s)) <= 1e-12);
        CHECK(std::abs(initial_state_value(m, pi, scratch) - pv.V(0, 0)) <= 1e-12);
    }
}

TEST_CASE("occupancy matches trajectory enumeration and sums to one per step") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto m = test::random_mdp(3, 2, 3, 100 + seed, 0.4);
        Policy pi(3, 3);
        for (std::size_t h = 0; h < 3; ++h)
            for (std::size_t s = 0; s < 3; ++s) pi(h, s) = static_cast<Action>((h + s + seed) % 2);
        const auto occ = occupancy(m, pi);
        const auto brute = test::brute_state_occupancy(m, pi);
        for (std::size_t h = 0; h < 3; ++h) {
            double total = 0.0;
            for (std::size_t s = 0; s < 3; ++s) {
                CHECK(std::abs(occ.state(h, s) - brute[h * 3 + s]) <= 1e-12);
                CHECK(occ.d(h, s, 1 - pi(h, s)) == 0.0);
                total += occ.state(h, s);
            }
            CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
        }
        StateActionTable acc(3, 3, 2);
        std::vector<double> scratch;
        add_occupancy(m, pi, acc, scratch);
        add_occupancy(m, pi, acc, scratch);
        for (std::size_t i = 0; i < acc.data().size(); ++i)
            CHECK(acc.data()[i] == doctest::Approx(2.0 * occ.d.data()[i]));
    }
}

TEST_CASE("sampled episodes are deterministic and follow the policy") {
    const auto m = test::random_mdp(3, 2, 5, 3);
    Policy pi(5, 3, 1);
    Rng a(9), b(9);
    const auto t1 = sample_episode(m, pi, a);
    const auto t2 = sample_episode(m, pi, b);
    CHECK(t1 == t2);
    REQUIRE(t1.steps.size() == 5);
    CHECK(t1.steps[0].state == m.initial_state());
    for (std::size_t h = 0; h < 5; ++h) {
        CHECK(t1.steps[h].action == 1);
        CHECK(t1.steps[h].reward == m.reward(h, t1.steps[h].state, 1));
        if (h + 1 < 5) CHECK(t1.steps[h + 1].state == t1.steps[h].next_state);
    }
    Trajectory reused;
    Rng c(9);
    sample_episode_into(m, pi, c, reused);
    CHECK(reused == t1);
}

TEST_CASE("occupancy matches Monte Carlo rollouts within four standard errors") {
    const auto m = test::random_mdp(3, 2, 3, 77);
    Policy pi(3, 3);
    pi(0, 0) = 1;
    pi(1, 2) = 1;
    const auto occ = occupancy(m, pi);
    const int N = 200000;
    StateActionTable counts(3, 3, 2);
    Rng rng(1);
    Trajectory t;
    for (int i = 0; i < N; ++i) {
        sample_episode_into(m, pi, rng, t);
        for (std::size_t h = 0; h < 3; ++h) counts(h, t.steps[h].state, t.steps[h].action) += 1.0;
    }
    for (std::size_t i = 0; i < counts.data().size(); ++i) {
        const double d = occ.d.data()[i];
        const double f = counts.data()[i] / N;
        const double se = std::sqrt(d * (1.0 - d) / N);
        if (d == 0.0) CHECK(f == 0.0);
        else CHECK(std::abs(f - d) <= 4.0 * se);
    }
}

TEST_CASE("rng streams are reproducible and unbiased") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    CHECK(derive_seed(1, 0, "x") == derive_seed(1, 0, "x"));
    std::set<std::uint64_t> seeds{derive_seed(1, 0, "x"), derive_seed(1, 1, "x"),
                                  derive_seed(1, 0, "y"), derive_seed(2, 0, "x")};
    CHECK(seeds.size() == 4);

    Rng r(3);
    std::map<std::uint64_t, int> hist;
    const int n = 60000;
    for (int i = 0; i < n; ++i) ++hist[r.below(3)];
    for (auto [k, c] : hist) CHECK(std::abs(c - n / 3) < 4.0 * std::sqrt(n * (1.0 / 3) * (2.0 / 3)));

    const std::vector<double> w{0.0, 1.0, 3.0};
    std::vector<int> cat(3, 0);
    for (int i = 0; i < n; ++i) ++cat[r.categorical(w)];
    CHECK(cat[0] == 0);
    CHECK(std::abs(cat[2] / double(n) - 0.75) < 4.0 * std::sqrt(0.75 * 0.25 / n));
}

TEST_CASE("models round-trip through JSON") {
    const auto m = test::random_mdp(2, 3, 2, 8);
    CHECK(mdp_from_json(to_json(m)) == m);
    const MabInstance b({0.3, 0.6});
    CHECK(mab_from_json(to_json(b)) == b);
    auto j = to_json(m);
    j.erase("rewards");
    CHECK_THROWS_AS(mdp_from_json(j), SchemaMismatch);
    auto k = to_json(b);
    k["arm_count"] = 3;
    CHECK_THROWS_AS(mab_from_json(k), SchemaMismatch);
}
