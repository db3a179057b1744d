#include "tiered/core/serialization.hpp"

#include "tiered/error.hpp"

#include <string>

namespace tiered {

using nlohmann::json;

namespace {

const json& field(const json& j, const char* name) {
    if (!j.is_object() || !j.contains(name))
        throw SchemaMismatch(std::string("missing field '") + name + "'");
    return j.at(name);
}

std::size_t positive_size(const json& j, const char* name) {
    const json& v = field(j, name);
    if (!v.is_number_integer() || v.get<long long>() <= 0)
        throw SchemaMismatch(std::string("field '") + name + "' must be a positive integer");
    return v.get<std::size_t>();
}

const json& sized_array(const json& j, std::size_t n, const std::string& what) {
    if (!j.is_array() || j.size() != n)
        throw SchemaMismatch(what + " must be an array of length " + std::to_string(n));
    return j;
}

} // namespace

json to_json(const TabularMdp& mdp) {
    const std::size_t S = mdp.states(), A = mdp.actions(), H = mdp.horizon();
    json P = json::array();
    json r = json::array();
    for (std::size_t h = 0; h < H; ++h) {
        json Ph = json::array(), rh = json::array();
        for (std::size_t s = 0; s < S; ++s) {
            json Phs = json::array(), rhs = json::array();
            for (std::size_t a = 0; a < A; ++a) {
                const auto row = mdp.next_state_probs(h, s, a);
                Phs.push_back(json(std::vector<double>(row.begin(), row.end())));
                rhs.push_back(mdp.reward(h, s, a));
            }
            Ph.push_back(std::move(Phs));
            rh.push_back(std::move(rhs));
        }
        P.push_back(std::move(Ph));
        r.push_back(std::move(rh));
    }
    json j = {{"S", S},           {"A", A},           {"H", H}, {"initial_state", mdp.initial_state()},
              {"transitions", P}, {"rewards", r}};
    if (mdp.reward_cap() != 1.0) j["reward_cap"] = mdp.reward_cap();
    return j;
}

TabularMdp mdp_from_json(const json& j) {
    const std::size_t S = positive_size(j, "S");
    const std::size_t A = positive_size(j, "A");
    const std::size_t H = positive_size(j, "H");
    State s1 = 0;
    if (j.contains("initial_state")) s1 = j.at("initial_state").get<State>();
    const double cap = j.value("reward_cap", 1.0);

    std::vector<double> P;
    std::vector<double> r;
    P.reserve(H * S * A * S);
    r.reserve(H * S * A);
    const json& Pj = sized_array(field(j, "transitions"), H, "transitions");
    const json& rj = sized_array(field(j, "rewards"), H, "rewards");
    for (std::size_t h = 0; h < H; ++h) {
        const json& Ph = sized_array(Pj[h], S, "transitions[h]");
        const json& rh = sized_array(rj[h], S, "rewards[h]");
        for (std::size_t s = 0; s < S; ++s) {
            const json& Phs = sized_array(Ph[s], A, "transitions[h][s]");
            const json& rhs = sized_array(rh[s], A, "rewards[h][s]");
            for (std::size_t a = 0; a < A; ++a) {
                const json& row = sized_array(Phs[a], S, "transitions[h][s][a]");
                for (const auto& p : row) P.push_back(p.get<double>());
                r.push_back(rhs[a].get<double>());
            }
        }
    }
    return TabularMdp(S, A, H, std::move(P), std::move(r), s1, cap);
}

json to_json(const MabInstance& task) {
    return {{"arm_count", task.arm_count()}, {"means", task.means()}};
}

MabInstance mab_from_json(const json& j) {
    const json& means = field(j, "means");
    if (!means.is_array()) throw SchemaMismatch("'means' must be an array");
    auto values = means.get<std::vector<double>>();
    if (j.contains("arm_count") && j.at("arm_count").get<std::size_t>() != values.size())
        throw SchemaMismatch("'arm_count' disagrees with the length of 'means'");
    return MabInstance(std::move(values));
}

json to_json(const Policy& policy) {
    json out = json::array();
    for (std::size_t h = 0; h < policy.horizon(); ++h) {
        json layer = json::array();
        for (std::size_t s = 0; s < policy.states(); ++s) layer.push_back(policy(h, s));
        out.push_back(std::move(layer));
    }
    return out;
}

} // namespace tiered
