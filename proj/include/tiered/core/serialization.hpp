#pragma once

#include "tiered/core/models.hpp"

#include <json.hpp>

namespace tiered {

/// {S, A, H, initial_state, transitions: [h][s][a][s'], rewards: [h][s][a]}
/// plus "reward_cap" when it differs from 1.
nlohmann::json to_json(const TabularMdp& mdp);
/// Throws SchemaMismatch on missing or ragged fields, InvalidModel on
/// invalid probabilities.
TabularMdp mdp_from_json(const nlohmann::json& j);

/// {arm_count, means}
nlohmann::json to_json(const MabInstance& task);
MabInstance mab_from_json(const nlohmann::json& j);

nlohmann::json to_json(const Policy& policy);

} // namespace tiered
