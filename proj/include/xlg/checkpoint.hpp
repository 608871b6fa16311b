#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>

#include "xlg/json.hpp"
#include "xlg/model.hpp"

namespace xlg {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Layout: magic line, u64 header length, header JSON (config, metadata,
/// manifest of name/shape/group/dtype), then little-endian float32 arrays in
/// manifest order.
void save_checkpoint(const std::filesystem::path& path, const Seq2SeqModel<float>& model,
                     const Json& metadata = Json::object());

/// Throws when the manifest disagrees with the shapes implied by the config.
Seq2SeqModel<float> load_checkpoint(const std::filesystem::path& path, Json* metadata = nullptr);

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Content hash of the parameters in each group (names and raw values).
std::map<ParamGroup, std::string> group_hashes(const Seq2SeqModel<float>& model);

Json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const Json& j);

}  // namespace xlg
