#include "xlg/commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iostream>
#include <optional>

#include "xlg/checkpoint.hpp"
#include "xlg/config.hpp"
#include "xlg/pipeline.hpp"

namespace xlg {

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  bool force = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON run config");
  cmd->add_option("--set", c.overrides, "Override a config key, e.g. --set stage1.steps=500");
  cmd->add_option("--seed", c.seed, "Root seed (overrides the config)");
  cmd->add_flag("--force", c.force, "Overwrite existing outputs");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  for (const auto& o : c.overrides) cfg = apply_override(cfg, o);
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

void guard(const std::vector<fs::path>& outputs, bool force) {
  if (force) return;
  for (const auto& p : outputs) {
    if (fs::exists(p)) throw ConfigError("refusing to overwrite " + p.string() + " (pass --force)");
  }
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

void write_json(const fs::path& path, const Json& j) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Json checkpoint_metadata(const RunConfig& cfg, const LanguageSet& langs, std::string_view stage, int step) {
  return Json{{"stage", stage}, {"step", step}, {"languages", langs.names()}, {"config", to_json(cfg)}};
}

LanguageSet checkpoint_languages(const Json& meta, const fs::path& path) {
  if (!meta.contains("languages") || !meta["languages"].is_array()) {
    throw CheckpointError(path.string() + ": metadata lacks the language list");
  }
  return LanguageSet(meta["languages"].get<std::vector<std::string>>());
}

void check_compatible(const Seq2SeqModel<float>& model, const DataBundle& data, const fs::path& ckpt) {
  if (model.config().vocab_size != data.vocab.size()) {
    throw ConfigError(ckpt.string() + ": vocabulary size " + std::to_string(model.config().vocab_size) +
                      " does not match the data's " + std::to_string(data.vocab.size()));
  }
}

/// Prints before/after hashes of the frozen groups and fails if any moved.
void verify_frozen(const std::map<ParamGroup, std::string>& before, const Seq2SeqModel<float>& model,
                   const std::vector<ParamGroup>& trainable) {
  const auto after = group_hashes(model);
  for (const auto& [g, h] : before) {
    if (std::find(trainable.begin(), trainable.end(), g) != trainable.end()) continue;
    const bool same = after.at(g) == h;
    std::cout << "frozen " << to_string(g) << " " << h.substr(0, 16) << " -> " << after.at(g).substr(0, 16)
              << (same ? " identical" : " CHANGED") << '\n';
    if (!same) throw TrainingError("frozen group " + std::string(to_string(g)) + " changed during training");
  }
}

/// Runs one training stage and writes periodic and final checkpoints.
template <typename Train>
void train_and_save(Seq2SeqModel<float>& model, const RunConfig& cfg, const LanguageSet& langs, const fs::path& out_dir,
                    const std::string& prefix, const StageSchedule& schedule, bool force, Train&& train) {
  std::vector<fs::path> outputs{out_dir / (prefix + "-loss.csv")};
  const auto ckpt_path = [&](int step) { return out_dir / (prefix + "-step" + std::to_string(step) + ".ckpt"); };
  for (int s = schedule.checkpoint_every; schedule.checkpoint_every > 0 && s < schedule.steps; s += schedule.checkpoint_every) {
    outputs.push_back(ckpt_path(s));
  }
  outputs.push_back(ckpt_path(schedule.steps));
  guard(outputs, force);
  fs::create_directories(out_dir);
  const CheckpointHook hook = [&](int step) {
    save_checkpoint(ckpt_path(step), model, checkpoint_metadata(cfg, langs, prefix, step));
  };
  const LossTrace trace = train(hook);
  write_loss_trace(out_dir / (prefix + "-loss.csv"), trace);
  std::cout << prefix << ": " << trace.size() << " steps, first loss " << trace.front().loss << ", last loss "
            << trace.back().loss << '\n';
  std::cout << "checkpoint " << ckpt_path(schedule.steps).string() << " sha256 " << sha256_file(ckpt_path(schedule.steps))
            << '\n';
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = std::min(s.find(',', start), s.size());
    int v = 0;
    const auto* b = s.data() + start;
    const auto* e = s.data() + comma;
    const auto res = std::from_chars(b, e, v);
    if (res.ec != std::errc{} || res.ptr != e) throw ConfigError("expected a comma-separated integer list, got '" + s + "'");
    out.push_back(v);
    start = comma + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const Common& c, const fs::path& out) {
  const RunConfig cfg = resolve(c);
  auto files = data_files(out);
  files.push_back(out / "config.json");
  guard(files, c.force);
  const DataBundle data = build_data(cfg);
  save_data(data, out);
  write_json(out / "config.json", to_json(cfg));
  std::cout << "wrote " << data.mono_a.sentences.size() << "+" << data.mono_b.sentences.size() << " monolingual, "
            << data.parallel.pairs.size() << " parallel sentences and a " << data.vocab.size() << "-token vocabulary to "
            << out.string() << '\n';
  return kExitOk;
}

int cmd_learn_vocab(const Common& c, const std::vector<std::string>& inputs, const fs::path& out,
                    const std::string& languages) {
  const RunConfig cfg = resolve(c);
  guard({out}, c.force);
  std::vector<Vocab::TokenStream> corpora;
  for (const auto& in : inputs) {
    std::ifstream f(in);
    if (!f) throw std::runtime_error("cannot open " + in);
    Vocab::TokenStream lines;
    for (std::string line; std::getline(f, line);) {
      if (!line.empty()) lines.push_back(line);
    }
    corpora.push_back(std::move(lines));
  }
  std::vector<std::string> names;
  for (std::size_t start = 0; !languages.empty() && start <= languages.size();) {
    const auto comma = std::min(languages.find(',', start), languages.size());
    names.push_back(languages.substr(start, comma - start));
    start = comma + 1;
  }
  const Vocab v = learn_vocab(corpora, cfg.vocab_merges,
                              cfg.vocab_base_unit == "char" ? BaseUnit::Char : BaseUnit::Symbol, LanguageSet(names));
  ensure_parent(out);
  v.save(out);
  std::cout << "vocabulary of " << v.size() << " tokens (" << v.merges().size() << " merges) written to " << out.string()
            << '\n';
  return kExitOk;
}

int cmd_pretrain(const Common& c, int stage, const fs::path& data_dir, const fs::path& out, const std::string& init) {
  if (stage != 1 && stage != 2) throw ConfigError("--stage must be 1 or 2");
  if (stage == 2 && init.empty()) throw ConfigError("stage 2 requires --init <stage-1 checkpoint>");
  const RunConfig cfg = resolve(c);
  const DataBundle data = load_data(data_dir);
  const auto pd = data.pretrain_data();
  if (stage == 1) {
    Seq2SeqModel<float> model = init.empty() ? init_model(cfg, data.vocab) : load_checkpoint(init);
    check_compatible(model, data, init);
    const StagePlan plan = stage_one_plan(cfg);
    const auto before = group_hashes(model);
    train_and_save(model, cfg, data.languages(), out, "stage1", cfg.stage1, c.force, [&](const CheckpointHook& h) {
      return pretrain_stage1(model, pd, plan, stage_train_config(cfg, cfg.stage1, "stage1"), h);
    });
    verify_frozen(before, model, plan.trainable_groups);
  } else {
    Seq2SeqModel<float> model = load_checkpoint(init);
    check_compatible(model, data, init);
    const StagePlan plan = stage_two_plan(cfg);
    const auto before = group_hashes(model);
    train_and_save(model, cfg, data.languages(), out, "stage2", cfg.stage2, c.force, [&](const CheckpointHook& h) {
      return pretrain_stage2(model, pd, plan, stage_train_config(cfg, cfg.stage2, "stage2"), h);
    });
    verify_frozen(before, model, plan.trainable_groups);
  }
  return kExitOk;
}

int cmd_finetune(const Common& c, const std::string& strategy_name, const fs::path& data_dir, const fs::path& init,
                 const fs::path& out, std::string task_file, int limit) {
  FineTuneStrategy strategy;
  try {
    strategy = parse_strategy(strategy_name);
  } catch (const TrainingError& e) {
    throw ConfigError(e.what());
  }
  const RunConfig cfg = resolve(c);
  const DataBundle data = load_data(data_dir);
  TaskDataset tasks = task_file.empty() ? data.task_train_a : load_task_jsonl(task_file);
  if (limit > 0 && static_cast<std::size_t>(limit) < tasks.size()) tasks.resize(static_cast<std::size_t>(limit));
  Seq2SeqModel<float> model = load_checkpoint(init);
  check_compatible(model, data, init);
  const auto before = group_hashes(model);
  const std::string prefix = "finetune-" + std::string(to_string(strategy));
  train_and_save(model, cfg, data.languages(), out, prefix, cfg.finetune, c.force, [&](const CheckpointHook& h) {
    return finetune(model, tasks, data.languages(), strategy, stage_train_config(cfg, cfg.finetune, "finetune"), h);
  });
  verify_frozen(before, model, trainable_groups(strategy));
  return kExitOk;
}

int cmd_generate(const Common& c, const fs::path& ckpt, const fs::path& manifest, const fs::path& out,
                 const std::string& tgt_override, const std::string& restrict_dir) {
  const RunConfig cfg = resolve(c);
  guard({out}, c.force);
  Json meta;
  Seq2SeqModel<float> model = load_checkpoint(ckpt, &meta);
  const LanguageSet langs = checkpoint_languages(meta, ckpt);
  std::optional<DataBundle> data;
  if (!restrict_dir.empty()) data = load_data(restrict_dir);

  std::ifstream in(manifest);
  if (!in) throw std::runtime_error("cannot open " + manifest.string());
  std::vector<std::string> lines;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty()) continue;
    Json rec = Json::parse(line, nullptr, false);
    const bool ok = !rec.is_discarded() && rec.is_object() && rec.size() == 3 && rec.contains("input") &&
                    rec["input"].is_array() && rec.contains("src_lang") && rec["src_lang"].is_string() &&
                    rec.contains("tgt_lang") && rec["tgt_lang"].is_string();
    if (!ok) throw CorpusError(manifest.string() + ":" + std::to_string(line_no) + ": malformed manifest record");
    Sequence input;
    try {
      input = rec["input"].get<Sequence>();
    } catch (const nlohmann::json::exception&) {
      throw CorpusError(manifest.string() + ":" + std::to_string(line_no) + ": input must be a list of token ids");
    }
    const std::string tgt = tgt_override.empty() ? rec["tgt_lang"].get<std::string>() : tgt_override;
    if (!langs.contains(rec["src_lang"].get<std::string>()) || !langs.contains(tgt)) {
      throw CorpusError(manifest.string() + ":" + std::to_string(line_no) + ": unknown language tag");
    }
    for (TokenId t : input) {
      if (t < 0 || t >= model.config().vocab_size) {
        throw CorpusError(manifest.string() + ":" + std::to_string(line_no) + ": token id outside the vocabulary");
      }
    }
    const DecodeConfig dcfg = decode_config(cfg, langs.id(tgt), data ? &*data : nullptr);
    const auto res = beam_search(model, input, langs.id(rec["src_lang"].get<std::string>()), dcfg);
    lines.push_back(Json{{"output", res.output}, {"score", res.score}}.dump());
  }
  ensure_parent(out);
  std::ofstream o(out, std::ios::binary);
  for (const auto& l : lines) o << l << '\n';
  if (!o) throw std::runtime_error("failed writing " + out.string());
  std::cout << "decoded " << lines.size() << " inputs to " << out.string() << '\n';
  return kExitOk;
}

int cmd_evaluate(const Common& c, const fs::path& outputs, const fs::path& refs, const fs::path& out,
                 const std::string& data_dir, const std::string& lang) {
  const RunConfig cfg = resolve(c);
  guard({out}, c.force);
  std::vector<Sequence> hyps;
  {
    std::ifstream in(outputs);
    if (!in) throw std::runtime_error("cannot open " + outputs.string());
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
      ++line_no;
      if (line.empty()) continue;
      Json rec = Json::parse(line, nullptr, false);
      if (rec.is_discarded() || !rec.is_object() || !rec.contains("output") || !rec["output"].is_array()) {
        throw CorpusError(outputs.string() + ":" + std::to_string(line_no) + ": malformed output record");
      }
      hyps.push_back(rec["output"].get<Sequence>());
    }
  }
  std::vector<Sequence> references;
  for (const auto& t : load_task_jsonl(refs)) references.push_back(t.target);
  std::set<TokenId> lexicon;
  if (!lang.empty()) {
    if (data_dir.empty()) throw ConfigError("--lang needs --data to find the lexicon");
    lexicon = load_data(data_dir).lexicon_set(lang);
  }
  const MetricReport rep = evaluate(hyps, references, lexicon);
  Json report = to_json(rep);
  report["membership_lang"] = lang;
  report["settings"] = metric_settings();
  report["decode"] = {{"beam_size", cfg.beam_size}, {"max_len", cfg.decode_max_len}, {"restrict_vocab", cfg.restrict_vocab}};
  write_json(out, report);
  std::cout << report.dump() << '\n';
  return kExitOk;
}

int cmd_ablate(const Common& c, const std::string& which, const std::string& data_dir, const fs::path& out,
               const std::string& seeds_text, const std::string& sizes_text) {
  static const std::vector<std::string> kWhich{"no_xae", "no_dae", "objectives", "strategies", "fewshot"};
  if (std::find(kWhich.begin(), kWhich.end(), which) == kWhich.end()) {
    throw ConfigError("--which must be one of no_xae, no_dae, objectives, strategies, fewshot");
  }
  const RunConfig base = resolve(c);
  guard({out}, c.force);
  const std::vector<int> seeds = seeds_text.empty() ? std::vector<int>{static_cast<int>(base.seed)} : parse_int_list(seeds_text);
  const std::vector<int> sizes = parse_int_list(sizes_text);
  std::optional<DataBundle> shared;
  if (!data_dir.empty()) shared = load_data(data_dir);

  std::vector<Variant> variants{Variant::Full};
  if (which == "no_xae" || which == "objectives") variants.push_back(Variant::NoXae);
  if (which == "no_dae" || which == "objectives") variants.push_back(Variant::NoDae);

  Json runs = Json::array();
  for (int seed : seeds) {
    RunConfig cfg = base;
    cfg.seed = static_cast<std::uint64_t>(seed);
    const DataBundle data = shared ? *shared : build_data(cfg);
    const Pretrained models = pretrain_variants(data, cfg, variants);
    Json run{{"seed", seed}};
    if (which == "strategies") {
      run["rows"] = to_json(strategy_ablation(
          models, data, cfg,
          {FineTuneStrategy::All, FineTuneStrategy::Enc, FineTuneStrategy::Dec, FineTuneStrategy::ET}));
    } else if (which == "fewshot") {
      run["rows"] = to_json(few_shot(models, data, cfg, sizes));
    } else {
      run["rows"] = to_json(objective_ablation(models, data, cfg));
    }
    std::cout << "seed " << seed << ": " << run["rows"].dump() << '\n';
    runs.push_back(std::move(run));
  }
  write_json(out, Json{{"which", which},
                       {"seeds", seeds},
                       {"data", shared ? "shared" : "per-seed"},
                       {"config", to_json(base)},
                       {"metric_settings", metric_settings()},
                       {"runs", runs}});
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Cross-lingual seq2seq pre-training on synthetic twin languages", "xlg"};
  app.require_subcommand(1);
  Common common;

  std::string out, data_dir, init, strategy, task_file, manifest, outputs, refs, tgt_lang, restrict_dir, lang, which,
      seeds, languages;
  std::string sizes = "50,200,1000";
  std::vector<std::string> inputs;
  int stage = 0;
  int limit = 0;

  auto* gen = app.add_subcommand("gen-data", "Generate synthetic twin-language corpora and task data");
  gen->add_option("--out", out, "Output directory")->required();

  auto* voc = app.add_subcommand("learn-vocab", "Learn a BPE vocabulary from text files");
  voc->add_option("--input", inputs, "Text file, one sentence per line (repeatable)")->required();
  voc->add_option("--out", out, "Vocabulary file")->required();
  voc->add_option("--languages", languages, "Comma-separated language tags to record");

  auto* pre = app.add_subcommand("pretrain", "Run pre-training stage 1 or 2");
  pre->add_option("--stage", stage, "1 or 2")->required();
  pre->add_option("--data", data_dir, "Data directory from gen-data")->required();
  pre->add_option("--out", out, "Output directory for checkpoints and the loss trace")->required();
  pre->add_option("--init", init, "Starting checkpoint (required for stage 2)");

  auto* ft = app.add_subcommand("finetune", "Fine-tune on task data under a freezing strategy");
  ft->add_option("--strategy", strategy, "all, enc, dec or et")->required();
  ft->add_option("--data", data_dir, "Data directory from gen-data")->required();
  ft->add_option("--init", init, "Pre-trained checkpoint")->required();
  ft->add_option("--out", out, "Output directory")->required();
  ft->add_option("--task", task_file, "Task JSONL (default: language-A training split)");
  ft->add_option("--limit", limit, "Use only the first N task examples");

  auto* gen_cmd = app.add_subcommand("generate", "Beam-decode a JSONL manifest");
  gen_cmd->add_option("--checkpoint", init, "Model checkpoint")->required();
  gen_cmd->add_option("--manifest", manifest, "Input JSONL")->required();
  gen_cmd->add_option("--out", out, "Output JSONL")->required();
  gen_cmd->add_option("--tgt-lang", tgt_lang, "Force this target tag for every record");
  gen_cmd->add_option("--data", restrict_dir, "Data directory; used for vocabulary restriction");

  auto* ev = app.add_subcommand("evaluate", "Score decoded outputs against task references");
  ev->add_option("--outputs", outputs, "JSONL from generate")->required();
  ev->add_option("--refs", refs, "Task JSONL holding the targets")->required();
  ev->add_option("--out", out, "Report JSON")->required();
  ev->add_option("--data", data_dir, "Data directory (for language membership)");
  ev->add_option("--lang", lang, "Language whose lexicon membership is reported");

  auto* ab = app.add_subcommand("ablate", "Run an ablation matrix and write a side-by-side report");
  ab->add_option("--which", which, "no_xae, no_dae, objectives, strategies or fewshot")->required();
  ab->add_option("--out", out, "Report JSON")->required();
  ab->add_option("--data", data_dir, "Shared data directory (default: regenerate per seed)");
  ab->add_option("--seeds", seeds, "Comma-separated seeds (default: the root seed)");
  ab->add_option("--sizes", sizes, "Few-shot language-B sizes");

  for (auto* cmd : {gen, voc, pre, ft, gen_cmd, ev, ab}) add_common(cmd, common);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen) return cmd_gen_data(common, out);
    if (*voc) return cmd_learn_vocab(common, inputs, out, languages);
    if (*pre) return cmd_pretrain(common, stage, data_dir, out, init);
    if (*ft) return cmd_finetune(common, strategy, data_dir, init, out, task_file, limit);
    if (*gen_cmd) return cmd_generate(common, init, manifest, out, tgt_lang, restrict_dir);
    if (*ev) return cmd_evaluate(common, outputs, refs, out, data_dir, lang);
    if (*ab) return cmd_ablate(common, which, data_dir, out, seeds, sizes);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace xlg
