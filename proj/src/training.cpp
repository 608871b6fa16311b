#include "xlg/training.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>

#include "xlg/rng.hpp"

namespace xlg {

// ---------------------------------------------------------------------------
// Optimizer

void OptimizerConfig::validate() const {
  const auto fail = [](const std::string& m) { throw TrainingError("invalid optimizer config: " + m); };
  if (!(base_lr >= 0.0)) fail("base_lr must be >= 0");
  if (warmup_steps < 0) fail("warmup_steps must be >= 0");
  if (total_steps < 1) fail("total_steps must be >= 1");
  if (warmup_steps >= total_steps) fail("warmup_steps must be < total_steps");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("betas must be in [0,1)");
  if (!(epsilon > 0.0)) fail("epsilon must be > 0");
}

double lr_at(int step, const OptimizerConfig& cfg) {
  if (step < 0 || step > cfg.total_steps) {
    throw TrainingError("lr_at: step " + std::to_string(step) + " outside [0, " + std::to_string(cfg.total_steps) + "]");
  }
  if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps) {
    return cfg.base_lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  return cfg.base_lr * static_cast<double>(cfg.total_steps - step) /
         static_cast<double>(cfg.total_steps - cfg.warmup_steps);
}

template <typename T>
OptimizerState<T>::OptimizerState(const OptimizerConfig& cfg, const Seq2SeqModel<T>& model) : config(cfg) {
  config.validate();
  for (const auto& p : model.params()) {
    first_moment.push_back(Matrix<T>::Zero(p.value.rows(), p.value.cols()));
    second_moment.push_back(Matrix<T>::Zero(p.value.rows(), p.value.cols()));
  }
}

template <typename T>
void adam_step(Seq2SeqModel<T>& model, OptimizerState<T>& state, const std::vector<bool>& trainable) {
  auto& params = model.params();
  if (trainable.size() != params.size() || state.first_moment.size() != params.size()) {
    throw TrainingError("adam_step: parameter/state size mismatch");
  }
  const auto& c = state.config;
  if (state.step >= c.total_steps) throw TrainingError("adam_step: schedule exhausted");
  ++state.step;
  const double lr = lr_at(state.step, c);
  const double bc1 = 1.0 - std::pow(c.beta1, state.step);
  const double bc2 = 1.0 - std::pow(c.beta2, state.step);
  const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
  const T step_size = static_cast<T>(lr / bc1);
  const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  const T eps = static_cast<T>(c.epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!trainable[i]) continue;
    auto& p = params[i];
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) {
      throw TrainingError("adam_step: gradient shape mismatch for " + p.name);
    }
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    m = b1 * m + (T(1) - b1) * p.grad;
    v = b2 * v + (T(1) - b2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= step_size * m.array() / ((v.array().sqrt() * inv_sqrt_bc2) + eps);
  }
}

// ---------------------------------------------------------------------------
// Losses

std::string_view to_string(Objective o) {
  switch (o) {
    case Objective::MLM: return "mlm";
    case Objective::XMLM: return "xmlm";
    case Objective::DAE: return "dae";
    case Objective::XAE: return "xae";
    case Objective::Task: return "task";
  }
  return "?";
}

namespace {

template <typename T>
std::vector<bool> frozen_mask(const Seq2SeqModel<T>& model) {
  return std::vector<bool>(model.params().size(), false);
}

}  // namespace

template <typename T>
double masked_lm_loss(Seq2SeqModel<T>& model, const std::vector<MaskedExample>& batch,
                      const std::vector<bool>* trainable, double weight) {
  if (batch.empty()) throw TrainingError("masked_lm_loss: empty batch");
  SeqBatch b;
  std::vector<int> rows;
  std::vector<int> targets;
  for (const auto& ex : batch) {
    if (ex.mask_positions.empty()) throw TrainingError("masked LM loss needs at least one masked position");
    if (ex.mask_positions.size() != ex.targets.size()) throw TrainingError("mask positions and targets differ in size");
    const int off = b.rows();
    b.add(ex.corrupted, ex.lang_tags);
    for (std::size_t i = 0; i < ex.mask_positions.size(); ++i) {
      const int p = ex.mask_positions[i];
      if (p < 0 || p >= static_cast<int>(ex.corrupted.size())) throw TrainingError("mask position out of range");
      rows.push_back(off + p);
      targets.push_back(ex.targets[i]);
    }
  }
  Tape<T> tape;
  ForwardPass<T> fp(model, tape, trainable ? *trainable : frozen_mask(model));
  const auto h = fp.encode(b);
  const auto logits = fp.project(h, std::move(rows));
  const auto loss = tape.cross_entropy(logits, std::move(targets), static_cast<T>(weight / static_cast<double>(batch.size())));
  if (trainable) tape.backward(loss);
  return static_cast<double>(tape.scalar(loss));
}

template <typename T>
double seq2seq_loss(Seq2SeqModel<T>& model, const std::vector<Seq2SeqExample>& batch,
                    const std::vector<bool>* trainable, double weight) {
  if (batch.empty()) throw TrainingError("seq2seq_loss: empty batch");
  SeqBatch src, tgt;
  std::vector<int> targets;
  for (const auto& ex : batch) {
    if (ex.source.empty()) throw TrainingError("seq2seq example with empty source");
    src.add(ex.source, ex.src_lang);
    Sequence in{special::kBos};
    in.insert(in.end(), ex.target.begin(), ex.target.end());
    tgt.add(in, ex.tgt_lang);
    targets.insert(targets.end(), ex.target.begin(), ex.target.end());
    targets.push_back(special::kEos);
  }
  std::vector<int> rows(static_cast<std::size_t>(tgt.rows()));
  std::iota(rows.begin(), rows.end(), 0);
  Tape<T> tape;
  ForwardPass<T> fp(model, tape, trainable ? *trainable : frozen_mask(model));
  const auto enc = fp.encode(src);
  const auto h = fp.decode(enc, src, tgt);
  const auto logits = fp.project(h, std::move(rows));
  const auto loss = tape.cross_entropy(logits, std::move(targets), static_cast<T>(weight / static_cast<double>(batch.size())));
  if (trainable) tape.backward(loss);
  return static_cast<double>(tape.scalar(loss));
}

template <typename T>
double loss_mlm(Seq2SeqModel<T>& model, const MaskedExample& ex, const std::vector<bool>* trainable) {
  return masked_lm_loss(model, {ex}, trainable);
}

template <typename T>
double loss_xmlm(Seq2SeqModel<T>& model, const MaskedExample& ex, const std::vector<bool>* trainable) {
  const auto sep = std::find(ex.corrupted.begin(), ex.corrupted.end(), special::kSep);
  if (sep == ex.corrupted.end()) throw TrainingError("XMLM example lacks the [S] separator");
  const int boundary = static_cast<int>(sep - ex.corrupted.begin());
  const bool has_x = std::any_of(ex.mask_positions.begin(), ex.mask_positions.end(), [&](int p) { return p < boundary; });
  const bool has_y = std::any_of(ex.mask_positions.begin(), ex.mask_positions.end(), [&](int p) { return p > boundary; });
  if (!has_x || !has_y) throw TrainingError("XMLM example needs masked positions on both sides");
  return masked_lm_loss(model, {ex}, trainable);
}

template <typename T>
double loss_dae(Seq2SeqModel<T>& model, const NoisedExample& ex, const std::vector<bool>* trainable) {
  if (ex.target.empty()) throw TrainingError("DAE example with empty target");
  return seq2seq_loss(model, {{ex.source, ex.src_lang, ex.target, ex.tgt_lang}}, trainable);
}

template <typename T>
double loss_xae(Seq2SeqModel<T>& model, const Sequence& x, const Sequence& y, int x_lang, int y_lang,
                const std::vector<bool>* trainable) {
  if (x.empty() || y.empty()) throw TrainingError("XAE pair with an empty side");
  // Two examples, one pair: weight 2 turns the batch mean back into a sum.
  return seq2seq_loss(model, {{x, x_lang, y, y_lang}, {y, y_lang, x, x_lang}}, trainable, 2.0);
}

int scored_positions(const MaskedExample& ex) { return static_cast<int>(ex.mask_positions.size()); }
int scored_positions(const Seq2SeqExample& ex) { return static_cast<int>(ex.target.size()) + 1; }

// ---------------------------------------------------------------------------
// Plans

StagePlan StagePlan::stage_one() {
  return {Stage::One,
          {ParamGroup::EncoderLayers, ParamGroup::WordEmbeddings, ParamGroup::TagAndPositionEmbeddings,
           ParamGroup::OutputHead},
          {{Objective::MLM, 1.0}, {Objective::XMLM, 1.0}}};
}

StagePlan StagePlan::stage_two(double dae_weight, double xae_weight) {
  return {Stage::Two, {ParamGroup::DecoderLayers}, {{Objective::XAE, xae_weight}, {Objective::DAE, dae_weight}}};
}

void StagePlan::validate() const {
  bool any = false;
  for (const auto& [obj, w] : objective_weights) {
    if (!(w >= 0.0)) throw TrainingError("objective weights must be >= 0");
    any = any || w > 0.0;
    const bool ok = stage == Stage::One   ? (obj == Objective::MLM || obj == Objective::XMLM)
                    : stage == Stage::Two ? (obj == Objective::DAE || obj == Objective::XAE)
                                          : obj == Objective::Task;
    if (!ok) throw TrainingError("objective '" + std::string(to_string(obj)) + "' does not belong to this stage");
  }
  if (!any) throw TrainingError("stage plan has no objective with positive weight");
  if (stage == Stage::Two) {
    for (ParamGroup g : trainable_groups) {
      if (g == ParamGroup::EncoderLayers || g == ParamGroup::WordEmbeddings ||
          g == ParamGroup::TagAndPositionEmbeddings) {
        throw TrainingError("stage two must keep the encoder and embeddings frozen");
      }
    }
  }
}

std::string_view to_string(FineTuneStrategy s) {
  switch (s) {
    case FineTuneStrategy::All: return "all";
    case FineTuneStrategy::Enc: return "enc";
    case FineTuneStrategy::Dec: return "dec";
    case FineTuneStrategy::ET: return "et";
  }
  return "?";
}

FineTuneStrategy parse_strategy(std::string_view s) {
  for (auto st : {FineTuneStrategy::All, FineTuneStrategy::Enc, FineTuneStrategy::Dec, FineTuneStrategy::ET}) {
    if (to_string(st) == s) return st;
  }
  throw TrainingError("unknown fine-tuning strategy '" + std::string(s) + "' (expected all, enc, dec or et)");
}

std::vector<ParamGroup> trainable_groups(FineTuneStrategy s) {
  switch (s) {
    case FineTuneStrategy::All: return {kAllGroups.begin(), kAllGroups.end()};
    case FineTuneStrategy::Enc:
      return {ParamGroup::EncoderLayers, ParamGroup::WordEmbeddings, ParamGroup::TagAndPositionEmbeddings};
    case FineTuneStrategy::Dec: return {ParamGroup::DecoderLayers, ParamGroup::OutputHead};
    case FineTuneStrategy::ET: return {ParamGroup::EncoderLayers};
  }
  return {};
}

// ---------------------------------------------------------------------------
// Loops

namespace {

/// Epoch-wise shuffled indices; reshuffles when exhausted.
class EpochSampler {
 public:
  EpochSampler(std::size_t n, std::uint64_t seed, std::string_view stream) : order_(n), rng_(seed, stream) {
    if (n == 0) throw TrainingError("cannot sample from an empty dataset");
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    pos_ = n;
  }

  std::size_t next() {
    if (pos_ == order_.size()) {
      rng_.shuffle(order_.begin(), order_.end());
      pos_ = 0;
    }
    return order_[pos_++];
  }

 private:
  std::vector<std::size_t> order_;
  Rng rng_;
  std::size_t pos_ = 0;
};

struct ObjectiveRunner {
  Objective objective;
  double weight;
  std::function<double(const std::vector<bool>*, double)> run;
};

LossTrace run_loop(Seq2SeqModel<float>& model, const std::vector<ParamGroup>& groups,
                   std::vector<ObjectiveRunner> objectives, const TrainConfig& cfg, const CheckpointHook& hook) {
  if (cfg.batch_size < 1) throw TrainingError("batch_size must be >= 1");
  std::erase_if(objectives, [](const ObjectiveRunner& o) { return o.weight == 0.0; });
  if (objectives.empty()) throw TrainingError("no active objectives");
  const auto mask = model.trainable_mask(groups);
  OptimizerState<float> state(cfg.optimizer, model);
  LossTrace trace;
  trace.reserve(static_cast<std::size_t>(cfg.optimizer.total_steps));
  for (int step = 0; step < cfg.optimizer.total_steps; ++step) {
    auto& obj = objectives[static_cast<std::size_t>(step) % objectives.size()];
    model.zero_grad();
    const double loss = obj.run(&mask, obj.weight);
    if (!std::isfinite(loss)) throw TrainingError("non-finite loss at step " + std::to_string(step + 1));
    adam_step(model, state, mask);
    trace.push_back({step + 1, obj.objective, loss, lr_at(step + 1, cfg.optimizer)});
    if (hook && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
        step + 1 != cfg.optimizer.total_steps) {
      hook(step + 1);
    }
  }
  if (hook) hook(cfg.optimizer.total_steps);
  return trace;
}

struct MonoIndex {
  std::vector<std::pair<std::size_t, std::size_t>> refs;  // (corpus, sentence)
  std::vector<int> lang_ids;
};

MonoIndex index_monolingual(const PretrainData& data) {
  MonoIndex idx;
  for (std::size_t c = 0; c < data.monolingual.size(); ++c) {
    idx.lang_ids.push_back(data.languages.id(data.monolingual[c].lang));
    for (std::size_t s = 0; s < data.monolingual[c].sentences.size(); ++s) idx.refs.emplace_back(c, s);
  }
  return idx;
}

}  // namespace

LossTrace pretrain_stage1(Seq2SeqModel<float>& model, const PretrainData& data, const StagePlan& plan,
                          const TrainConfig& cfg, const CheckpointHook& hook) {
  plan.validate();
  if (plan.stage != Stage::One) throw TrainingError("pretrain_stage1 needs a stage-one plan");
  cfg.noise.validate();
  const int vocab = model.config().vocab_size;
  const auto mono = index_monolingual(data);
  const int src_lang = data.languages.id(data.parallel.src_lang);
  const int tgt_lang = data.languages.id(data.parallel.tgt_lang);

  std::vector<ObjectiveRunner> objs;
  const auto weight = [&](Objective o) {
    const auto it = plan.objective_weights.find(o);
    return it == plan.objective_weights.end() ? 0.0 : it->second;
  };
  if (weight(Objective::MLM) > 0.0) {
    auto sampler = std::make_shared<EpochSampler>(mono.refs.size(), cfg.seed, "stage1/mlm-order");
    auto rng = std::make_shared<Rng>(cfg.seed, "stage1/mlm-noise");
    objs.push_back({Objective::MLM, weight(Objective::MLM), [&, sampler, rng](const std::vector<bool>* m, double w) {
                      std::vector<MaskedExample> batch;
                      for (int i = 0; i < cfg.batch_size; ++i) {
                        const auto [c, s] = mono.refs[sampler->next()];
                        batch.push_back(mask_mlm(data.monolingual[c].sentences[s], mono.lang_ids[c], cfg.noise, *rng, vocab));
                      }
                      return masked_lm_loss(model, batch, m, w);
                    }});
  }
  if (weight(Objective::XMLM) > 0.0) {
    auto sampler = std::make_shared<EpochSampler>(data.parallel.pairs.size(), cfg.seed, "stage1/xmlm-order");
    auto rng = std::make_shared<Rng>(cfg.seed, "stage1/xmlm-noise");
    objs.push_back({Objective::XMLM, weight(Objective::XMLM), [&, sampler, rng](const std::vector<bool>* m, double w) {
                      std::vector<MaskedExample> batch;
                      for (int i = 0; i < cfg.batch_size; ++i) {
                        const auto& [x, y] = data.parallel.pairs[sampler->next()];
                        // Either side may come first so both languages see both roles.
                        if (rng->uniform() < 0.5) {
                          batch.push_back(build_xmlm(x, y, src_lang, tgt_lang, cfg.noise, *rng, vocab));
                        } else {
                          batch.push_back(build_xmlm(y, x, tgt_lang, src_lang, cfg.noise, *rng, vocab));
                        }
                      }
                      return masked_lm_loss(model, batch, m, w);
                    }});
  }
  return run_loop(model, plan.trainable_groups, std::move(objs), cfg, hook);
}

LossTrace pretrain_stage2(Seq2SeqModel<float>& model, const PretrainData& data, const StagePlan& plan,
                          const TrainConfig& cfg, const CheckpointHook& hook) {
  plan.validate();
  if (plan.stage != Stage::Two) throw TrainingError("pretrain_stage2 needs a stage-two plan");
  cfg.noise.validate();
  const auto mono = index_monolingual(data);
  const int src_lang = data.languages.id(data.parallel.src_lang);
  const int tgt_lang = data.languages.id(data.parallel.tgt_lang);
  const auto weight = [&](Objective o) {
    const auto it = plan.objective_weights.find(o);
    return it == plan.objective_weights.end() ? 0.0 : it->second;
  };

  std::vector<ObjectiveRunner> objs;
  if (weight(Objective::XAE) > 0.0) {
    auto sampler = std::make_shared<EpochSampler>(data.parallel.pairs.size(), cfg.seed, "stage2/xae-order");
    objs.push_back({Objective::XAE, weight(Objective::XAE), [&, sampler](const std::vector<bool>* m, double w) {
                      std::vector<Seq2SeqExample> batch;
                      for (int i = 0; i < cfg.batch_size; ++i) {
                        const auto& [x, y] = data.parallel.pairs[sampler->next()];
                        batch.push_back({x, src_lang, y, tgt_lang});
                        batch.push_back({y, tgt_lang, x, src_lang});
                      }
                      // Loss is a per-pair sum: the mean over 2B directions times 2.
                      return seq2seq_loss(model, batch, m, 2.0 * w);
                    }});
  }
  if (weight(Objective::DAE) > 0.0) {
    auto sampler = std::make_shared<EpochSampler>(mono.refs.size(), cfg.seed, "stage2/dae-order");
    auto rng = std::make_shared<Rng>(cfg.seed, "stage2/dae-noise");
    objs.push_back({Objective::DAE, weight(Objective::DAE), [&, sampler, rng](const std::vector<bool>* m, double w) {
                      std::vector<Seq2SeqExample> batch;
                      for (int i = 0; i < cfg.batch_size; ++i) {
                        const auto [c, s] = mono.refs[sampler->next()];
                        auto ex = noise_dae(data.monolingual[c].sentences[s], mono.lang_ids[c], cfg.noise, *rng);
                        batch.push_back({std::move(ex.source), ex.src_lang, std::move(ex.target), ex.tgt_lang});
                      }
                      return seq2seq_loss(model, batch, m, w);
                    }});
  }
  return run_loop(model, plan.trainable_groups, std::move(objs), cfg, hook);
}

LossTrace finetune(Seq2SeqModel<float>& model, const TaskDataset& dataset, const LanguageSet& languages,
                   FineTuneStrategy strategy, const TrainConfig& cfg, const CheckpointHook& hook) {
  if (dataset.empty()) throw TrainingError("fine-tuning dataset is empty");
  std::vector<Seq2SeqExample> examples;
  examples.reserve(dataset.size());
  for (const auto& ex : dataset) {
    const int lang = languages.id(ex.lang);
    examples.push_back({ex.input, lang, ex.target, lang});
  }
  auto sampler = std::make_shared<EpochSampler>(examples.size(), cfg.seed, "finetune/order");
  std::vector<ObjectiveRunner> objs;
  objs.push_back({Objective::Task, 1.0, [&, sampler](const std::vector<bool>* m, double w) {
                    std::vector<Seq2SeqExample> batch;
                    for (int i = 0; i < cfg.batch_size; ++i) batch.push_back(examples[sampler->next()]);
                    return seq2seq_loss(model, batch, m, w);
                  }});
  return run_loop(model, trainable_groups(strategy), std::move(objs), cfg, hook);
}

void write_loss_trace(const std::filesystem::path& path, const LossTrace& trace) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw TrainingError("cannot open " + path.string() + " for writing");
  out << "step,objective,loss,lr\n";
  char buf[64];
  for (const auto& r : trace) {
    out << r.step << ',' << to_string(r.objective) << ',';
    auto res = std::to_chars(buf, buf + sizeof buf, r.loss);
    out.write(buf, res.ptr - buf);
    out << ',';
    res = std::to_chars(buf, buf + sizeof buf, r.lr);
    out.write(buf, res.ptr - buf);
    out << '\n';
  }
  if (!out) throw TrainingError("failed writing " + path.string());
}

double mean_loss(const LossTrace& trace, std::size_t first, std::size_t count) {
  const std::size_t end = std::min(trace.size(), first + count);
  if (first >= end) return 0.0;
  double s = 0.0;
  for (std::size_t i = first; i < end; ++i) s += trace[i].loss;
  return s / static_cast<double>(end - first);
}

template struct OptimizerState<float>;
template struct OptimizerState<double>;
template void adam_step(Seq2SeqModel<float>&, OptimizerState<float>&, const std::vector<bool>&);
template void adam_step(Seq2SeqModel<double>&, OptimizerState<double>&, const std::vector<bool>&);

#define XLG_INSTANTIATE_LOSSES(T)                                                                                  \
  template double masked_lm_loss(Seq2SeqModel<T>&, const std::vector<MaskedExample>&, const std::vector<bool>*,   \
                                 double);                                                                          \
  template double seq2seq_loss(Seq2SeqModel<T>&, const std::vector<Seq2SeqExample>&, const std::vector<bool>*,    \
                               double);                                                                            \
  template double loss_mlm(Seq2SeqModel<T>&, const MaskedExample&, const std::vector<bool>*);                      \
  template double loss_xmlm(Seq2SeqModel<T>&, const MaskedExample&, const std::vector<bool>*);                     \
  template double loss_dae(Seq2SeqModel<T>&, const NoisedExample&, const std::vector<bool>*);                      \
  template double loss_xae(Seq2SeqModel<T>&, const Sequence&, const Sequence&, int, int, const std::vector<bool>*);

XLG_INSTANTIATE_LOSSES(float)
XLG_INSTANTIATE_LOSSES(double)

}  // namespace xlg
