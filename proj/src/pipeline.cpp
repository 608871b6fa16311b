#include "xlg/pipeline.hpp"

#include <fstream>

namespace xlg {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Data

PretrainData DataBundle::pretrain_data() const { return {{mono_a, mono_b}, parallel, languages()}; }

std::set<TokenId> DataBundle::lexicon_set(const std::string& lang) const {
  const auto ids = lex.lexicon(lang);
  return {ids.begin(), ids.end()};
}

namespace {

std::pair<TaskDataset, TaskDataset> split_tasks(const MonolingualCorpus& pool, TokenId marker, const RunConfig& cfg,
                                                std::string_view stream) {
  auto all = make_task_dataset(pool, marker, cfg.task_train_size + cfg.task_test_size, component_seed(cfg, stream));
  TaskDataset test(all.begin() + cfg.task_train_size, all.end());
  all.resize(static_cast<std::size_t>(cfg.task_train_size));
  return {std::move(all), std::move(test)};
}

void write_text(const fs::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot open " + path.string() + " for writing");
  for (const auto& l : lines) out << l << '\n';
  if (!out) throw CorpusError("failed writing " + path.string());
}

}  // namespace

DataBundle build_data(const RunConfig& cfg) {
  cfg.validate();
  SynthConfig sc = cfg.data;
  sc.seed = component_seed(cfg, "data");
  const auto twins = generate_twin_languages(sc);
  // The lexicon is closed, so the id vocabulary is symbol-level with no merges.
  Vocab vocab = learn_vocab(twins.token_streams(), 0, BaseUnit::Symbol, LanguageSet({sc.lang_a, sc.lang_b}));
  auto lex = make_twin_lexicon(twins, vocab);
  DataBundle d{std::move(vocab), std::move(lex), {}, {}, {}, {}, {}, {}, {}};
  d.mono_a = encode_monolingual(twins.mono_a, d.lex.ids_a, sc.lang_a);
  d.mono_b = encode_monolingual(twins.mono_b, d.lex.ids_b, sc.lang_b);
  d.parallel = encode_parallel(twins, d.lex);
  std::tie(d.task_train_a, d.task_test_a) =
      split_tasks(encode_monolingual(twins.task_pool_a, d.lex.ids_a, sc.lang_a), d.lex.marker_a, cfg, "task-a");
  std::tie(d.task_train_b, d.task_test_b) =
      split_tasks(encode_monolingual(twins.task_pool_b, d.lex.ids_b, sc.lang_b), d.lex.marker_b, cfg, "task-b");
  return d;
}

std::vector<fs::path> data_files(const fs::path& dir) {
  return {dir / "vocab.txt",          dir / "lexicon.json",         dir / "mono_a.jsonl",
          dir / "mono_b.jsonl",       dir / "parallel.jsonl",       dir / "task_train_a.jsonl",
          dir / "task_test_a.jsonl",  dir / "task_train_b.jsonl",   dir / "task_test_b.jsonl",
          dir / "text_a.txt",         dir / "text_b.txt"};
}

void save_data(const DataBundle& d, const fs::path& dir) {
  fs::create_directories(dir);
  d.vocab.save(dir / "vocab.txt");
  {
    std::ofstream out(dir / "lexicon.json", std::ios::binary);
    out << to_json(d.lex).dump(1) << '\n';
    if (!out) throw CorpusError("failed writing " + (dir / "lexicon.json").string());
  }
  save_jsonl(dir / "mono_a.jsonl", d.mono_a);
  save_jsonl(dir / "mono_b.jsonl", d.mono_b);
  save_jsonl(dir / "parallel.jsonl", d.parallel);
  save_jsonl(dir / "task_train_a.jsonl", d.task_train_a);
  save_jsonl(dir / "task_test_a.jsonl", d.task_test_a);
  save_jsonl(dir / "task_train_b.jsonl", d.task_train_b);
  save_jsonl(dir / "task_test_b.jsonl", d.task_test_b);
  const auto render = [&](const MonolingualCorpus& c) {
    std::vector<std::string> lines;
    for (const auto& s : c.sentences) lines.push_back(d.vocab.decode(s));
    return lines;
  };
  write_text(dir / "text_a.txt", render(d.mono_a));
  write_text(dir / "text_b.txt", render(d.mono_b));
}

DataBundle load_data(const fs::path& dir) {
  DataBundle d;
  d.vocab = Vocab::load(dir / "vocab.txt");
  {
    std::ifstream in(dir / "lexicon.json");
    if (!in) throw CorpusError("cannot open " + (dir / "lexicon.json").string());
    const Json j = Json::parse(in, nullptr, false);
    if (j.is_discarded()) throw CorpusError((dir / "lexicon.json").string() + ": not valid JSON");
    d.lex = twin_lexicon_from_json(j);
  }
  d.mono_a = load_monolingual_jsonl(dir / "mono_a.jsonl");
  d.mono_b = load_monolingual_jsonl(dir / "mono_b.jsonl");
  d.parallel = load_parallel_jsonl(dir / "parallel.jsonl");
  d.task_train_a = load_task_jsonl(dir / "task_train_a.jsonl");
  d.task_test_a = load_task_jsonl(dir / "task_test_a.jsonl");
  d.task_train_b = load_task_jsonl(dir / "task_train_b.jsonl");
  d.task_test_b = load_task_jsonl(dir / "task_test_b.jsonl");
  const auto check_ids = [&](const Sequence& s, const std::string& what) {
    for (TokenId t : s) {
      if (t < 0 || t >= d.vocab.size()) throw CorpusError(what + " holds id " + std::to_string(t) + " outside the vocabulary");
    }
  };
  for (const auto* c : {&d.mono_a, &d.mono_b}) {
    for (const auto& s : c->sentences) check_ids(s, "monolingual corpus");
  }
  for (const auto& [x, y] : d.parallel.pairs) {
    check_ids(x, "parallel corpus");
    check_ids(y, "parallel corpus");
  }
  return d;
}

Json to_json(const TwinLexicon& lex) {
  return Json{{"lang_a", lex.lang_a},         {"lang_b", lex.lang_b},     {"ids_a", lex.ids_a},
              {"ids_b", lex.ids_b},           {"marker_a", lex.marker_a}, {"marker_b", lex.marker_b},
              {"reorder_window", lex.reorder_window}, {"sigma", lex.sigma}};
}

TwinLexicon twin_lexicon_from_json(const Json& j) {
  try {
    TwinLexicon lex;
    lex.lang_a = j.at("lang_a").get<std::string>();
    lex.lang_b = j.at("lang_b").get<std::string>();
    lex.ids_a = j.at("ids_a").get<Sequence>();
    lex.ids_b = j.at("ids_b").get<Sequence>();
    lex.marker_a = j.at("marker_a").get<TokenId>();
    lex.marker_b = j.at("marker_b").get<TokenId>();
    lex.reorder_window = j.at("reorder_window").get<int>();
    lex.sigma = j.at("sigma").get<std::vector<TokenId>>();
    return lex;
  } catch (const nlohmann::json::exception& e) {
    throw CorpusError(std::string("malformed lexicon file: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Models and decoding

Seq2SeqModel<float> init_model(const RunConfig& cfg, const Vocab& vocab) {
  ModelConfig mc = cfg.model;
  mc.vocab_size = vocab.size();
  mc.num_languages = static_cast<int>(vocab.languages().size());
  return Seq2SeqModel<float>(mc, component_seed(cfg, "model-init"));
}

StagePlan stage_one_plan(const RunConfig& cfg) {
  StagePlan p = StagePlan::stage_one();
  p.objective_weights = {{Objective::MLM, cfg.mlm_weight}, {Objective::XMLM, cfg.xmlm_weight}};
  return p;
}

StagePlan stage_two_plan(const RunConfig& cfg) { return StagePlan::stage_two(cfg.dae_weight, cfg.xae_weight); }

DecodeConfig decode_config(const RunConfig& cfg, int tgt_lang, const DataBundle* restrict_to) {
  DecodeConfig d;
  d.beam_size = cfg.beam_size;
  d.max_len = cfg.decode_max_len;
  d.tgt_lang = tgt_lang;
  if (cfg.restrict_vocab && restrict_to) {
    const std::string lang = restrict_to->languages().at(tgt_lang).name;
    d.allowed_vocab = restrict_vocab(lang == restrict_to->lex.lang_a ? restrict_to->mono_a : restrict_to->mono_b);
  }
  return d;
}

std::vector<Sequence> decode_all(Seq2SeqModel<float>& model, const std::vector<Sequence>& inputs, int src_lang,
                                 const DecodeConfig& dcfg) {
  std::vector<Sequence> out;
  out.reserve(inputs.size());
  for (const auto& in : inputs) out.push_back(beam_search(model, in, src_lang, dcfg).output);
  return out;
}

MetricReport evaluate_task(Seq2SeqModel<float>& model, const TaskDataset& tasks, const DataBundle& data,
                           const RunConfig& cfg) {
  if (tasks.empty()) throw TrainingError("evaluate_task: empty task set");
  const std::string& lang = tasks.front().lang;
  const int id = data.languages().id(lang);
  std::vector<Sequence> inputs, refs;
  for (const auto& t : tasks) {
    inputs.push_back(t.input);
    refs.push_back(t.target);
  }
  const auto hyps = decode_all(model, inputs, id, decode_config(cfg, id, &data));
  return evaluate(hyps, refs, data.lexicon_set(lang));
}

MetricReport evaluate_translation(Seq2SeqModel<float>& model, const DataBundle& data, const RunConfig& cfg,
                                  const std::string& tgt_lang) {
  std::vector<Sequence> inputs, refs;
  for (const auto& t : data.task_test_a) {
    Sequence s(t.input.begin(), std::find(t.input.begin(), t.input.end(), special::kSep));
    refs.push_back(tgt_lang == data.lex.lang_a ? s : data.lex.translate(s));
    inputs.push_back(std::move(s));
  }
  const int src = data.languages().id(data.lex.lang_a);
  const int tgt = data.languages().id(tgt_lang);
  const auto hyps = decode_all(model, inputs, src, decode_config(cfg, tgt, &data));
  return evaluate(hyps, refs, data.lexicon_set(tgt_lang));
}

// ---------------------------------------------------------------------------
// Experiments

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::NoXae: return "no_xae";
    case Variant::NoDae: return "no_dae";
  }
  return "?";
}

RunConfig with_variant(RunConfig cfg, Variant v) {
  if (v == Variant::NoXae) cfg.xae_weight = 0.0;
  if (v == Variant::NoDae) cfg.dae_weight = 0.0;
  return cfg;
}

Pretrained pretrain_variants(const DataBundle& data, const RunConfig& cfg, const std::vector<Variant>& variants) {
  const auto pd = data.pretrain_data();
  Pretrained out{init_model(cfg, data.vocab), {}};
  pretrain_stage1(out.stage1, pd, stage_one_plan(cfg), stage_train_config(cfg, cfg.stage1, "stage1"));
  for (Variant v : variants) {
    const RunConfig vc = with_variant(cfg, v);
    Seq2SeqModel<float> m = out.stage1;
    pretrain_stage2(m, pd, stage_two_plan(vc), stage_train_config(vc, vc.stage2, "stage2"));
    out.stage2.emplace(v, std::move(m));
  }
  return out;
}

Seq2SeqModel<float> finetuned(const Seq2SeqModel<float>& start, const TaskDataset& tasks, const DataBundle& data,
                              const RunConfig& cfg, FineTuneStrategy strategy, std::string_view component) {
  Seq2SeqModel<float> m = start;
  finetune(m, tasks, data.languages(), strategy, stage_train_config(cfg, cfg.finetune, component));
  return m;
}

std::vector<ObjectiveAblationRow> objective_ablation(const Pretrained& models, const DataBundle& data,
                                                     const RunConfig& cfg) {
  std::vector<ObjectiveAblationRow> rows;
  for (const auto& [variant, model] : models.stage2) {
    ObjectiveAblationRow row{variant, {}, {}};
    Seq2SeqModel<float> m = model;
    row.flipped_tag = evaluate_translation(m, data, cfg, data.lex.lang_b);
    auto tuned = finetuned(model, data.task_train_a, data, cfg, FineTuneStrategy::ET, "finetune-a");
    row.zero_shot = evaluate_task(tuned, data.task_test_b, data, cfg);
    rows.push_back(row);
  }
  return rows;
}

std::vector<StrategyRow> strategy_ablation(const Pretrained& models, const DataBundle& data, const RunConfig& cfg,
                                           const std::vector<FineTuneStrategy>& strategies) {
  const auto full = models.stage2.find(Variant::Full);
  if (full == models.stage2.end()) throw TrainingError("strategy ablation needs the full pre-trained model");
  std::vector<StrategyRow> rows;
  for (FineTuneStrategy s : strategies) {
    auto m = finetuned(full->second, data.task_train_a, data, cfg, s, "finetune-a");
    rows.push_back({std::string(to_string(s)), evaluate_task(m, data.task_test_a, data, cfg),
                    evaluate_task(m, data.task_test_b, data, cfg)});
  }
  // Decoder never pre-trained: stage 1 only, then everything tuned on A.
  auto base = finetuned(models.stage1, data.task_train_a, data, cfg, FineTuneStrategy::All, "finetune-a");
  rows.push_back({"baseline", evaluate_task(base, data.task_test_a, data, cfg),
                  evaluate_task(base, data.task_test_b, data, cfg)});
  return rows;
}

std::vector<FewShotRow> few_shot(const Pretrained& models, const DataBundle& data, const RunConfig& cfg,
                                 const std::vector<int>& sizes) {
  const auto full = models.stage2.find(Variant::Full);
  if (full == models.stage2.end()) throw TrainingError("few-shot runs need the full pre-trained model");
  const auto via = finetuned(full->second, data.task_train_a, data, cfg, FineTuneStrategy::All, "finetune-a");
  std::vector<FewShotRow> rows;
  for (int n : sizes) {
    if (n < 1 || static_cast<std::size_t>(n) > data.task_train_b.size()) {
      throw ConfigError("few-shot size " + std::to_string(n) + " outside [1, " +
                        std::to_string(data.task_train_b.size()) + "]");
    }
    const TaskDataset sub(data.task_train_b.begin(), data.task_train_b.begin() + n);
    auto a = finetuned(via, sub, data, cfg, FineTuneStrategy::All, "finetune-b");
    auto b = finetuned(full->second, sub, data, cfg, FineTuneStrategy::All, "finetune-b");
    rows.push_back({n, evaluate_task(a, data.task_test_b, data, cfg), evaluate_task(b, data.task_test_b, data, cfg)});
  }
  return rows;
}

Json to_json(const std::vector<ObjectiveAblationRow>& rows) {
  Json out = Json::array();
  for (const auto& r : rows) {
    out.push_back({{"variant", std::string(to_string(r.variant))},
                   {"flipped_tag", to_json(r.flipped_tag)},
                   {"zero_shot", to_json(r.zero_shot)}});
  }
  return out;
}

Json to_json(const std::vector<StrategyRow>& rows) {
  Json out = Json::array();
  for (const auto& r : rows) {
    out.push_back({{"strategy", r.name}, {"supervised", to_json(r.supervised)}, {"zero_shot", to_json(r.zero_shot)}});
  }
  return out;
}

Json to_json(const std::vector<FewShotRow>& rows) {
  Json out = Json::array();
  for (const auto& r : rows) {
    out.push_back({{"n_b", r.n_b},
                   {"via_a", to_json(r.via_a)},
                   {"b_only", to_json(r.b_only)},
                   {"rouge2_gap", r.via_a.rouge2 - r.b_only.rouge2}});
  }
  return out;
}

}  // namespace xlg
