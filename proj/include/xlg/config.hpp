#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "xlg/corpus.hpp"
#include "xlg/json.hpp"
#include "xlg/model.hpp"
#include "xlg/noising.hpp"
#include "xlg/training.hpp"

namespace xlg {

/// Bad configuration or usage; the CLI maps it to exit code 2.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct StageSchedule {
  int steps = 2000;
  int warmup = 200;
  double lr = 1e-4;
  int batch_size = 32;
  int checkpoint_every = 0;

  OptimizerConfig optimizer() const;
};

struct RunConfig {
  std::uint64_t seed = 1;
  SynthConfig data;  // data.seed is ignored; the root seed drives generation
  int task_train_size = 1000;
  int task_test_size = 200;
  int vocab_merges = 0;
  std::string vocab_base_unit = "symbol";
  ModelConfig model;  // vocab_size and num_languages come from the vocabulary
  NoiseConfig noise;
  StageSchedule stage1;
  double mlm_weight = 1.0;
  double xmlm_weight = 1.0;
  StageSchedule stage2;
  double xae_weight = 1.0;
  double dae_weight = 0.5;
  StageSchedule finetune{2000, 200, kFineTuneLearningRate, 32, 0};
  int beam_size = 3;
  int decode_max_len = 80;
  bool restrict_vocab = false;

  /// Checks every field against the owning module's invariants.
  void validate() const;
};

Json to_json(const RunConfig& cfg);

/// Overlays `j` on `base`. Unknown keys and type mismatches are rejected with
/// the dotted key name.
RunConfig apply_json(const RunConfig& base, const Json& j);

/// `a.b=c`; the value is parsed as JSON when possible, else taken as a string.
RunConfig apply_override(const RunConfig& base, const std::string& assignment);

RunConfig load_run_config(const std::filesystem::path& path);

/// Per-component seeds split from the root seed by name.
std::uint64_t component_seed(const RunConfig& cfg, std::string_view component);

TrainConfig stage_train_config(const RunConfig& cfg, const StageSchedule& schedule, std::string_view component);

}  // namespace xlg
