#pragma once

// Internal: JSON encoding of network parameters shared by checkpoint files.

#include <nlohmann/json.hpp>
#include "seqoed/nnet.hpp"

namespace seqoed::nnet::detail {

using Json = nlohmann::json;

/// {"layer_sizes": [...], "weights": [[row-major], ...], "biases": [[...], ...]}
Json mlp_to_json(const Mlp& net);
/// Throws ArchMismatch on inconsistent sizes; json exceptions propagate.
Mlp mlp_from_json(const Json& j);

}  // namespace seqoed::nnet::detail
