#pragma once

#include <nlohmann/json.hpp>

namespace xlg {

// Insertion-ordered so written files keep a stable, readable key order.
using Json = nlohmann::ordered_json;

}  // namespace xlg
