#pragma once

#include "mvbcf/bart.hpp"
#include "mvbcf/causal.hpp"
#include "mvbcf/simbench.hpp"

#include <json.hpp>

namespace mvbcf {

using Json = nlohmann::json;

// JSON readers overlay the keys present onto `base`; unknown keys raise a
// Configuration error naming the key. Writers emit every field.
TreePriorConfig tree_prior_from_json(const Json& j, TreePriorConfig base = {});
MoveWeights move_weights_from_json(const Json& j, MoveWeights base = {});
CausalConfig causal_config_from_json(const Json& j, CausalConfig base = {}, const std::string& where = "");
BartConfig bart_config_from_json(const Json& j, BartConfig base = {}, const std::string& where = "");
SimSpec sim_spec_from_json(const Json& j, SimSpec base = {});
/// Top-level keys: the SimSpec fields plus "causal", "bart", "propensity", "methods".
void benchmark_from_json(const Json& j, SimSpec& spec, BenchmarkSettings& settings);

Json to_json(const TreePriorConfig& c);
Json to_json(const MoveWeights& w);
Json to_json(const CausalConfig& c);
Json to_json(const BartConfig& c);
Json to_json(const SimSpec& s);

Method parse_method(const std::string& text);

/// Parses a JSON document; syntax errors become Parse errors with the position.
Json parse_json(const std::string& text, const std::string& origin);
Json read_json_file(const std::string& path);

}  // namespace mvbcf
