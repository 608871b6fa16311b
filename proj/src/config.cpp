#include "xlg/config.hpp"

#include <fstream>
#include <map>
#include <sstream>
#include <variant>

#include "xlg/generation.hpp"

namespace xlg {

OptimizerConfig StageSchedule::optimizer() const {
  OptimizerConfig o;
  o.base_lr = lr;
  o.warmup_steps = warmup;
  o.total_steps = steps;
  return o;
}

namespace {

using FieldRef = std::variant<std::uint64_t*, int*, double*, bool*, std::string*>;

// Every configurable field under its dotted key, in file order.
std::vector<std::pair<std::string, FieldRef>> fields(RunConfig& c) {
  std::vector<std::pair<std::string, FieldRef>> f = {
      {"seed", &c.seed},
      {"data.vocab_size_per_lang", &c.data.vocab_size_per_lang},
      {"data.min_len", &c.data.min_len},
      {"data.max_len", &c.data.max_len},
      {"data.mono_size", &c.data.mono_size},
      {"data.parallel_size", &c.data.parallel_size},
      {"data.task_pool_size", &c.data.task_pool_size},
      {"data.reorder_window", &c.data.reorder_window},
      {"data.bigram_bias", &c.data.bigram_bias},
      {"data.marker_rate", &c.data.marker_rate},
      {"data.lang_a", &c.data.lang_a},
      {"data.lang_b", &c.data.lang_b},
      {"task.train_size", &c.task_train_size},
      {"task.test_size", &c.task_test_size},
      {"vocab.merges", &c.vocab_merges},
      {"vocab.base_unit", &c.vocab_base_unit},
      {"model.enc_layers", &c.model.enc_layers},
      {"model.dec_layers", &c.model.dec_layers},
      {"model.d_model", &c.model.d_model},
      {"model.n_heads", &c.model.n_heads},
      {"model.d_ffn", &c.model.d_ffn},
      {"model.max_positions", &c.model.max_positions},
      {"noise.mask_rate", &c.noise.mask_rate},
      {"noise.p_mask_token", &c.noise.p_mask_token},
      {"noise.p_random", &c.noise.p_random},
      {"noise.p_keep", &c.noise.p_keep},
      {"noise.shuffle_window", &c.noise.shuffle_window},
      {"noise.p_drop", &c.noise.p_drop},
      {"noise.p_pad", &c.noise.p_pad},
  };
  const auto stage = [&](const std::string& name, StageSchedule& s) {
    f.emplace_back(name + ".steps", &s.steps);
    f.emplace_back(name + ".warmup", &s.warmup);
    f.emplace_back(name + ".lr", &s.lr);
    f.emplace_back(name + ".batch_size", &s.batch_size);
    f.emplace_back(name + ".checkpoint_every", &s.checkpoint_every);
  };
  stage("stage1", c.stage1);
  f.emplace_back("stage1.mlm_weight", &c.mlm_weight);
  f.emplace_back("stage1.xmlm_weight", &c.xmlm_weight);
  stage("stage2", c.stage2);
  f.emplace_back("stage2.xae_weight", &c.xae_weight);
  f.emplace_back("stage2.dae_weight", &c.dae_weight);
  stage("finetune", c.finetune);
  f.emplace_back("decode.beam_size", &c.beam_size);
  f.emplace_back("decode.max_len", &c.decode_max_len);
  f.emplace_back("decode.restrict_vocab", &c.restrict_vocab);
  return f;
}

void flatten(const Json& j, const std::string& prefix, std::vector<std::pair<std::string, Json>>& out) {
  if (j.is_object()) {
    for (const auto& [k, v] : j.items()) flatten(v, prefix.empty() ? k : prefix + "." + k, out);
  } else {
    out.emplace_back(prefix, j);
  }
}

void assign(const std::string& key, FieldRef ref, const Json& v) {
  const auto bad = [&](const char* want) {
    throw ConfigError("config key '" + key + "' expects " + want + ", got " + v.dump());
  };
  std::visit(
      [&](auto* p) {
        using F = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<F, std::uint64_t>) {
          if (v.is_number_unsigned()) *p = v.get<std::uint64_t>();
          else if (v.is_number_integer() && v.get<long long>() >= 0) *p = static_cast<std::uint64_t>(v.get<long long>());
          else bad("a non-negative integer");
        } else if constexpr (std::is_same_v<F, int>) {
          if (!v.is_number_integer()) bad("an integer");
          const auto x = v.get<long long>();
          if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) bad("a 32-bit integer");
          *p = static_cast<int>(x);
        } else if constexpr (std::is_same_v<F, double>) {
          if (!v.is_number()) bad("a number");
          *p = v.get<double>();
        } else if constexpr (std::is_same_v<F, bool>) {
          if (!v.is_boolean()) bad("a boolean");
          *p = v.get<bool>();
        } else {
          if (!v.is_string()) bad("a string");
          *p = v.get<std::string>();
        }
      },
      ref);
}

void set_path(Json& root, const std::string& key, Json value) {
  Json* node = &root;
  std::size_t start = 0;
  for (std::size_t dot; (dot = key.find('.', start)) != std::string::npos; start = dot + 1) {
    node = &(*node)[key.substr(start, dot - start)];
  }
  (*node)[key.substr(start)] = std::move(value);
}

}  // namespace

void RunConfig::validate() const {
  const auto wrap = [](const char* section, auto&& fn) {
    try {
      fn();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(std::string(section) + ": " + e.what());
    }
  };
  wrap("data", [&] { data.validate(); });
  if (data.lang_a == data.lang_b) throw ConfigError("data: lang_a and lang_b must differ");
  if (task_train_size < 1 || task_test_size < 1) throw ConfigError("task: train_size and test_size must be >= 1");
  if (task_train_size + task_test_size > data.task_pool_size) {
    throw ConfigError("task: train_size + test_size exceeds data.task_pool_size");
  }
  if (vocab_merges < 0) throw ConfigError("vocab: merges must be >= 0");
  if (vocab_base_unit != "symbol" && vocab_base_unit != "char") {
    throw ConfigError("vocab: base_unit must be 'symbol' or 'char'");
  }
  wrap("model", [&] {
    ModelConfig m = model;
    m.vocab_size = special::kCount + 1;  // placeholder; the real size comes from the vocabulary
    m.validate();
  });
  if (model.max_positions < 2 * data.max_len + 2) {
    throw ConfigError("model: max_positions must fit two concatenated sentences plus separators");
  }
  wrap("noise", [&] { noise.validate(); });
  for (const auto& [name, s] : {std::pair{"stage1", &stage1}, {"stage2", &stage2}, {"finetune", &finetune}}) {
    wrap(name, [&] { s->optimizer().validate(); });
    if (s->batch_size < 1) throw ConfigError(std::string(name) + ": batch_size must be >= 1");
    if (s->checkpoint_every < 0) throw ConfigError(std::string(name) + ": checkpoint_every must be >= 0");
  }
  wrap("stage1", [&] {
    StagePlan p = StagePlan::stage_one();
    p.objective_weights = {{Objective::MLM, mlm_weight}, {Objective::XMLM, xmlm_weight}};
    p.validate();
  });
  wrap("stage2", [&] { StagePlan::stage_two(dae_weight, xae_weight).validate(); });
  wrap("decode", [&] {
    DecodeConfig d;
    d.beam_size = beam_size;
    d.max_len = decode_max_len;
    d.validate();
  });
}

Json to_json(const RunConfig& cfg) {
  RunConfig copy = cfg;
  Json out = Json::object();
  for (const auto& [key, ref] : fields(copy)) {
    std::visit([&](auto* p) { set_path(out, key, Json(*p)); }, ref);
  }
  return out;
}

RunConfig apply_json(const RunConfig& base, const Json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig out = base;
  std::map<std::string, FieldRef> index;
  for (const auto& [key, ref] : fields(out)) index.emplace(key, ref);
  std::vector<std::pair<std::string, Json>> leaves;
  flatten(j, "", leaves);
  for (const auto& [key, value] : leaves) {
    const auto it = index.find(key);
    if (it == index.end()) throw ConfigError("unknown config key '" + key + "'");
    assign(key, it->second, value);
  }
  return out;
}

RunConfig apply_override(const RunConfig& base, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not of the form a.b=c");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  Json patch = Json::object();
  set_path(patch, key, std::move(value));
  return apply_json(base, patch);
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  Json j = Json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError(path.string() + ": not valid JSON");
  return apply_json(RunConfig{}, j);
}

std::uint64_t component_seed(const RunConfig& cfg, std::string_view component) {
  return stream_seed(cfg.seed, component);
}

TrainConfig stage_train_config(const RunConfig& cfg, const StageSchedule& schedule, std::string_view component) {
  TrainConfig t;
  t.optimizer = schedule.optimizer();
  t.noise = cfg.noise;
  t.batch_size = schedule.batch_size;
  t.seed = component_seed(cfg, component);
  t.checkpoint_every = schedule.checkpoint_every;
  return t;
}

}  // namespace xlg
