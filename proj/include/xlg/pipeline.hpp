#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "xlg/config.hpp"
#include "xlg/corpus.hpp"
#include "xlg/evaluation.hpp"
#include "xlg/generation.hpp"
#include "xlg/json.hpp"
#include "xlg/model.hpp"
#include "xlg/training.hpp"
#include "xlg/vocab.hpp"

namespace xlg {

/// Everything gen-data produces, in id space.
struct DataBundle {
  Vocab vocab;
  TwinLexicon lex;
  MonolingualCorpus mono_a, mono_b;
  ParallelCorpus parallel;
  TaskDataset task_train_a, task_test_a;
  TaskDataset task_train_b, task_test_b;

  const LanguageSet& languages() const { return vocab.languages(); }
  PretrainData pretrain_data() const;
  std::set<TokenId> lexicon_set(const std::string& lang) const;
};

DataBundle build_data(const RunConfig& cfg);
void save_data(const DataBundle& data, const std::filesystem::path& dir);
DataBundle load_data(const std::filesystem::path& dir);
std::vector<std::filesystem::path> data_files(const std::filesystem::path& dir);

Json to_json(const TwinLexicon& lex);
TwinLexicon twin_lexicon_from_json(const Json& j);

Seq2SeqModel<float> init_model(const RunConfig& cfg, const Vocab& vocab);

/// Stage plans after the run config's objective weights.
StagePlan stage_one_plan(const RunConfig& cfg);
StagePlan stage_two_plan(const RunConfig& cfg);

DecodeConfig decode_config(const RunConfig& cfg, int tgt_lang, const DataBundle* restrict_to = nullptr);

/// Beam-decodes every input with the given tags.
std::vector<Sequence> decode_all(Seq2SeqModel<float>& model, const std::vector<Sequence>& inputs, int src_lang,
                                 const DecodeConfig& dcfg);

/// Decodes a task set in its own language and scores against its targets.
MetricReport evaluate_task(Seq2SeqModel<float>& model, const TaskDataset& tasks, const DataBundle& data,
                           const RunConfig& cfg);

/// Translates the sentence half of language-A test inputs with the given
/// target tag and scores membership in that tag's lexicon plus BLEU against
/// the true translation (or the source itself when the tag is A).
MetricReport evaluate_translation(Seq2SeqModel<float>& model, const DataBundle& data, const RunConfig& cfg,
                                  const std::string& tgt_lang);

// ---------------------------------------------------------------------------
// Experiment matrices shared by the ablate command and the acceptance runs.

/// Objective variants for stage 2.
enum class Variant { Full, NoXae, NoDae };
std::string_view to_string(Variant v);
RunConfig with_variant(RunConfig cfg, Variant v);

struct Pretrained {
  Seq2SeqModel<float> stage1;
  std::map<Variant, Seq2SeqModel<float>> stage2;
};

/// Stage 1 once, then stage 2 for each requested variant from the same start.
Pretrained pretrain_variants(const DataBundle& data, const RunConfig& cfg, const std::vector<Variant>& variants);

Seq2SeqModel<float> finetuned(const Seq2SeqModel<float>& start, const TaskDataset& tasks, const DataBundle& data,
                              const RunConfig& cfg, FineTuneStrategy strategy, std::string_view component);

struct ObjectiveAblationRow {
  Variant variant;
  MetricReport flipped_tag;  // A input decoded with the B tag
  MetricReport zero_shot;    // ET on task A, evaluated on task B
};

std::vector<ObjectiveAblationRow> objective_ablation(const Pretrained& models, const DataBundle& data,
                                                     const RunConfig& cfg);

struct StrategyRow {
  std::string name;  // strategy, or "baseline" for the stage-1-only model under All
  MetricReport supervised;
  MetricReport zero_shot;
};

std::vector<StrategyRow> strategy_ablation(const Pretrained& models, const DataBundle& data, const RunConfig& cfg,
                                           const std::vector<FineTuneStrategy>& strategies);

struct FewShotRow {
  int n_b = 0;
  MetricReport via_a;   // task A then task B
  MetricReport b_only;  // task B only
};

std::vector<FewShotRow> few_shot(const Pretrained& models, const DataBundle& data, const RunConfig& cfg,
                                 const std::vector<int>& sizes);

Json to_json(const std::vector<ObjectiveAblationRow>& rows);
Json to_json(const std::vector<StrategyRow>& rows);
Json to_json(const std::vector<FewShotRow>& rows);

}  // namespace xlg
