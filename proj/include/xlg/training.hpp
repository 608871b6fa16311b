#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "xlg/corpus.hpp"
#include "xlg/model.hpp"
#include "xlg/noising.hpp"

namespace xlg {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Optimizer and schedule

struct OptimizerConfig {
  double base_lr = 1e-4;
  int warmup_steps = 4000;
  int total_steps = 23000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

/// Linear warm-up to base_lr, then linear decay to 0 at total_steps.
double lr_at(int step, const OptimizerConfig& cfg);

template <typename T>
struct OptimizerState {
  OptimizerConfig config;
  int step = 0;
  std::vector<Matrix<T>> first_moment;
  std::vector<Matrix<T>> second_moment;

  OptimizerState(const OptimizerConfig& cfg, const Seq2SeqModel<T>& model);
};

/// Bias-corrected Adam with lr_at(step + 1). Only parameters flagged in
/// `trainable` are touched.
template <typename T>
void adam_step(Seq2SeqModel<T>& model, OptimizerState<T>& state, const std::vector<bool>& trainable);

// ---------------------------------------------------------------------------
// Objectives

enum class Objective : std::uint8_t { MLM, XMLM, DAE, XAE, Task };

std::string_view to_string(Objective o);

/// One teacher-forced translation-style example.
struct Seq2SeqExample {
  Sequence source;
  int src_lang = 0;
  Sequence target;  // without BOS/EOS
  int tgt_lang = 0;
};

/// Batch losses are per-example sums averaged over the batch, multiplied by
/// `weight`. Gradients (scaled the same way) are accumulated into the
/// trainable parameters' `grad` when `trainable` is non-null; the caller
/// zeroes gradients.
template <typename T>
double masked_lm_loss(Seq2SeqModel<T>& model, const std::vector<MaskedExample>& batch,
                      const std::vector<bool>* trainable, double weight = 1.0);

template <typename T>
double seq2seq_loss(Seq2SeqModel<T>& model, const std::vector<Seq2SeqExample>& batch,
                    const std::vector<bool>* trainable, double weight = 1.0);

/// -Σ_{i∈M_x} log p(x_i | x_{\M_x}).
template <typename T>
double loss_mlm(Seq2SeqModel<T>& model, const MaskedExample& ex, const std::vector<bool>* trainable);

/// -Σ_i log p(x_i | x̂, x_{<i}) including EOS.
template <typename T>
double loss_dae(Seq2SeqModel<T>& model, const NoisedExample& ex, const std::vector<bool>* trainable);

/// Masked prediction over x ⊕ [S] ⊕ y; both sides must carry masks.
template <typename T>
double loss_xmlm(Seq2SeqModel<T>& model, const MaskedExample& ex, const std::vector<bool>* trainable);

/// -log p(y|x) - log p(x|y).
template <typename T>
double loss_xae(Seq2SeqModel<T>& model, const Sequence& x, const Sequence& y, int x_lang, int y_lang,
                const std::vector<bool>* trainable);

/// Number of positions a loss scores (for the uniform-logit identity).
int scored_positions(const MaskedExample& ex);
int scored_positions(const Seq2SeqExample& ex);

// ---------------------------------------------------------------------------
// Stage plans and loops

enum class Stage : std::uint8_t { One, Two, FineTune };

struct StagePlan {
  Stage stage = Stage::One;
  std::vector<ParamGroup> trainable_groups;
  /// Objectives with weight 0 are left out of the alternation.
  std::map<Objective, double> objective_weights;

  static StagePlan stage_one();
  static StagePlan stage_two(double dae_weight = 0.5, double xae_weight = 1.0);
  void validate() const;
};

inline constexpr double kFineTuneLearningRate = 5e-6;

enum class FineTuneStrategy : std::uint8_t { All, Enc, Dec, ET };

std::string_view to_string(FineTuneStrategy s);
FineTuneStrategy parse_strategy(std::string_view s);
std::vector<ParamGroup> trainable_groups(FineTuneStrategy s);

struct TrainConfig {
  OptimizerConfig optimizer;
  NoiseConfig noise;
  int batch_size = 32;
  std::uint64_t seed = 1;
  int checkpoint_every = 0;  // 0 disables periodic callbacks
};

struct LossRecord {
  int step = 0;
  Objective objective = Objective::MLM;
  double loss = 0.0;  // weighted batch loss
  double lr = 0.0;
};

using LossTrace = std::vector<LossRecord>;
using CheckpointHook = std::function<void(int step)>;

struct PretrainData {
  std::vector<MonolingualCorpus> monolingual;  // D_m, one corpus per language
  ParallelCorpus parallel;                     // D_p
  LanguageSet languages;
};

/// Minimises MLM + XMLM over encoder-side groups; decoder untouched.
LossTrace pretrain_stage1(Seq2SeqModel<float>& model, const PretrainData& data, const StagePlan& plan,
                          const TrainConfig& cfg, const CheckpointHook& hook = {});

/// Minimises XAE + w·DAE with only the decoder layers trainable.
LossTrace pretrain_stage2(Seq2SeqModel<float>& model, const PretrainData& data, const StagePlan& plan,
                          const TrainConfig& cfg, const CheckpointHook& hook = {});

/// Supervised task training under one of the freezing strategies.
LossTrace finetune(Seq2SeqModel<float>& model, const TaskDataset& dataset, const LanguageSet& languages,
                   FineTuneStrategy strategy, const TrainConfig& cfg, const CheckpointHook& hook = {});

void write_loss_trace(const std::filesystem::path& path, const LossTrace& trace);

/// Mean loss over records [first, first + count), clipped to the trace.
double mean_loss(const LossTrace& trace, std::size_t first, std::size_t count);

}  // namespace xlg
