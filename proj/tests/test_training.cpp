#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "xlg/checkpoint.hpp"
#include "xlg/pipeline.hpp"

using namespace xlg;

namespace {

ModelConfig small_model(int vocab) {
  ModelConfig c;
  c.enc_layers = 1;
  c.dec_layers = 1;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ffn = 16;
  c.max_positions = 40;
  c.vocab_size = vocab;
  return c;
}

RunConfig tiny_run() {
  RunConfig cfg;
  cfg.seed = 3;
  cfg.data.vocab_size_per_lang = 12;
  cfg.data.mono_size = 60;
  cfg.data.parallel_size = 60;
  cfg.data.task_pool_size = 40;
  cfg.data.min_len = 3;
  cfg.data.max_len = 8;
  cfg.task_train_size = 30;
  cfg.task_test_size = 10;
  cfg.model.enc_layers = 1;
  cfg.model.dec_layers = 1;
  cfg.model.d_model = 8;
  cfg.model.n_heads = 2;
  cfg.model.d_ffn = 16;
  for (StageSchedule* s : {&cfg.stage1, &cfg.stage2, &cfg.finetune}) {
    s->steps = 6;
    s->warmup = 2;
    s->lr = 1e-2;
    s->batch_size = 4;
  }
  return cfg;
}

// Zero token table and output bias: every logit is 0.
template <typename T>
void make_uniform(Seq2SeqModel<T>& m) {
  m.params()[static_cast<std::size_t>(m.tok_emb())].value.setZero();
  m.params()[static_cast<std::size_t>(m.out_bias())].value.setZero();
}

}  // namespace

TEST_CASE("lr schedule: warm-up then linear decay") {
  OptimizerConfig c;
  c.base_lr = 2e-3;
  c.warmup_steps = 10;
  c.total_steps = 50;
  CHECK(lr_at(0, c) == 0.0);
  CHECK(lr_at(5, c) == doctest::Approx(1e-3));
  CHECK(lr_at(10, c) == doctest::Approx(2e-3));
  CHECK(lr_at(30, c) == doctest::Approx(1e-3));
  CHECK(lr_at(50, c) == 0.0);
  CHECK_THROWS_AS(lr_at(51, c), TrainingError);
  CHECK_THROWS_AS(lr_at(-1, c), TrainingError);
  c.warmup_steps = 0;
  CHECK(lr_at(0, c) == doctest::Approx(2e-3));
  c.warmup_steps = 50;
  CHECK_THROWS_AS(c.validate(), TrainingError);
}

TEST_CASE("property: lr schedule peaks at warm-up and is piecewise monotone") {
  OptimizerConfig c;
  c.base_lr = 1.0;
  c.warmup_steps = 7;
  c.total_steps = 31;
  for (int s = 1; s <= c.total_steps; ++s) {
    CHECK(lr_at(s, c) <= 1.0 + 1e-15);
    if (s <= c.warmup_steps) CHECK(lr_at(s, c) > lr_at(s - 1, c));
    else CHECK(lr_at(s, c) < lr_at(s - 1, c));
  }
}

TEST_CASE("adam matches a scalar reference and skips frozen parameters") {
  Seq2SeqModel<double> m(small_model(10), 1);
  OptimizerConfig oc;
  oc.base_lr = 0.1;
  oc.warmup_steps = 0;
  oc.total_steps = 4;
  OptimizerState<double> st(oc, m);
  auto trainable = m.trainable_mask({ParamGroup::OutputHead});
  const auto bias0 = m.params()[static_cast<std::size_t>(m.out_bias())].value;
  const auto tok0 = m.params()[static_cast<std::size_t>(m.tok_emb())].value;
  const std::vector<double> grads{0.5, -2.0, 0.25};

  // Reference Adam on element 3 of the output bias.
  double x = bias0(0, 3), mom = 0, vel = 0;
  for (int t = 1; t <= 3; ++t) {
    m.zero_grad();
    for (auto& p : m.params()) p.grad.setConstant(7.0);  // must be ignored where frozen
    m.params()[static_cast<std::size_t>(m.out_bias())].grad.setZero();
    m.params()[static_cast<std::size_t>(m.out_bias())].grad(0, 3) = grads[static_cast<std::size_t>(t - 1)];
    adam_step(m, st, trainable);
    const double g = grads[static_cast<std::size_t>(t - 1)];
    mom = 0.9 * mom + 0.1 * g;
    vel = 0.999 * vel + 0.001 * g * g;
    const double lr = 0.1 * (4.0 - t) / 4.0;
    x -= lr * (mom / (1 - std::pow(0.9, t))) / (std::sqrt(vel / (1 - std::pow(0.999, t))) + 1e-8);
  }
  const auto& bias = m.params()[static_cast<std::size_t>(m.out_bias())].value;
  CHECK(bias(0, 3) == doctest::Approx(x).epsilon(1e-12));
  CHECK(bias(0, 0) == bias0(0, 0));
  CHECK(m.params()[static_cast<std::size_t>(m.tok_emb())].value == tok0);
  adam_step(m, st, trainable);
  CHECK_THROWS_AS(adam_step(m, st, trainable), TrainingError);
}

TEST_CASE("uniform logits give scored positions times ln|V| for every loss") {
  const int vocab = 17;
  Seq2SeqModel<double> m(small_model(vocab), 4);
  make_uniform(m);
  const double lnv = std::log(static_cast<double>(vocab));
  Rng rng(5, "uniform");
  NoiseConfig nc;
  const Sequence x{7, 8, 9, 10, 11}, y{12, 13, 14};

  const auto mlm = mask_mlm(x, 0, nc, rng, vocab);
  CHECK(loss_mlm(m, mlm, nullptr) == doctest::Approx(scored_positions(mlm) * lnv).epsilon(1e-12));

  const auto xmlm = build_xmlm(x, y, 0, 1, nc, rng, vocab);
  CHECK(loss_xmlm(m, xmlm, nullptr) == doctest::Approx(scored_positions(xmlm) * lnv).epsilon(1e-12));

  const auto dae = noise_dae(x, 1, nc, rng);
  const Seq2SeqExample dae_ex{dae.source, 1, dae.target, 1};
  CHECK(loss_dae(m, dae, nullptr) == doctest::Approx(scored_positions(dae_ex) * lnv).epsilon(1e-12));

  const int xae_positions = scored_positions(Seq2SeqExample{x, 0, y, 1}) + scored_positions(Seq2SeqExample{y, 1, x, 0});
  CHECK(loss_xae(m, x, y, 0, 1, nullptr) == doctest::Approx(xae_positions * lnv).epsilon(1e-12));
}

TEST_CASE("batch losses are the weighted mean of per-example losses") {
  Seq2SeqModel<double> m(small_model(20), 6);
  const Seq2SeqExample a{{7, 8, 9}, 0, {10, 11}, 1}, b{{12, 13}, 1, {14, 15, 16, 17}, 0};
  const double la = seq2seq_loss(m, {a}, nullptr), lb = seq2seq_loss(m, {b}, nullptr);
  CHECK(seq2seq_loss(m, {a, b}, nullptr, 3.0) == doctest::Approx(1.5 * (la + lb)).epsilon(1e-12));
  Rng rng(1, "batch");
  NoiseConfig nc;
  const auto e1 = mask_mlm({7, 8, 9, 10}, 0, nc, rng, 20), e2 = mask_mlm({11, 12}, 1, nc, rng, 20);
  const double s = loss_mlm(m, e1, nullptr) + loss_mlm(m, e2, nullptr);
  CHECK(masked_lm_loss(m, {e1, e2}, nullptr) == doctest::Approx(s / 2).epsilon(1e-12));
  CHECK_THROWS_AS(seq2seq_loss(m, {}, nullptr), TrainingError);
}

TEST_CASE("gradients reach only the trainable groups") {
  Seq2SeqModel<double> m(small_model(20), 7);
  const auto trainable = m.trainable_mask({ParamGroup::DecoderLayers});
  m.zero_grad();
  seq2seq_loss(m, {Seq2SeqExample{{7, 8, 9}, 0, {10, 11}, 1}}, &trainable);
  double frozen_norm = 0.0, live_norm = 0.0;
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    (trainable[i] ? live_norm : frozen_norm) += m.params()[i].grad.norm();
  }
  CHECK(frozen_norm == 0.0);
  CHECK(live_norm > 0.0);
}

TEST_CASE("stage plans and strategies") {
  const auto one = StagePlan::stage_one();
  CHECK(std::find(one.trainable_groups.begin(), one.trainable_groups.end(), ParamGroup::DecoderLayers) ==
        one.trainable_groups.end());
  CHECK(one.objective_weights.count(Objective::MLM) == 1);
  CHECK(one.objective_weights.count(Objective::XMLM) == 1);
  const auto two = StagePlan::stage_two();
  CHECK(two.trainable_groups == std::vector<ParamGroup>{ParamGroup::DecoderLayers});
  CHECK(two.objective_weights.at(Objective::DAE) == 0.5);
  CHECK(two.objective_weights.at(Objective::XAE) == 1.0);
  CHECK_THROWS_AS(StagePlan::stage_two(0.0, 0.0).validate(), TrainingError);

  CHECK(trainable_groups(FineTuneStrategy::ET) == std::vector<ParamGroup>{ParamGroup::EncoderLayers});
  CHECK(trainable_groups(FineTuneStrategy::All).size() == kAllGroups.size());
  for (auto s : {FineTuneStrategy::All, FineTuneStrategy::Enc, FineTuneStrategy::Dec, FineTuneStrategy::ET}) {
    CHECK(parse_strategy(to_string(s)) == s);
  }
  CHECK_THROWS(parse_strategy("bogus"));
}

TEST_CASE("freeze contracts hold after real training steps") {
  const RunConfig cfg = tiny_run();
  const auto data = build_data(cfg);
  auto model = init_model(cfg, data.vocab);
  pretrain_stage1(model, data.pretrain_data(), stage_one_plan(cfg), stage_train_config(cfg, cfg.stage1, "stage1"));

  const auto before = group_hashes(model);
  pretrain_stage2(model, data.pretrain_data(), stage_two_plan(cfg), stage_train_config(cfg, cfg.stage2, "stage2"));
  const auto after2 = group_hashes(model);
  for (ParamGroup g : kAllGroups) {
    CAPTURE(to_string(g));
    CHECK((after2.at(g) == before.at(g)) == (g != ParamGroup::DecoderLayers));
  }

  finetune(model, data.task_train_a, data.languages(), FineTuneStrategy::ET,
           stage_train_config(cfg, cfg.finetune, "finetune"));
  const auto after_et = group_hashes(model);
  for (ParamGroup g : kAllGroups) {
    CAPTURE(to_string(g));
    CHECK((after_et.at(g) == after2.at(g)) == (g != ParamGroup::EncoderLayers));
  }
}

TEST_CASE("training is deterministic and the trace alternates objectives") {
  const RunConfig cfg = tiny_run();
  const auto data = build_data(cfg);
  auto a = init_model(cfg, data.vocab), b = init_model(cfg, data.vocab);
  const auto tc = stage_train_config(cfg, cfg.stage1, "stage1");
  const auto ta = pretrain_stage1(a, data.pretrain_data(), stage_one_plan(cfg), tc);
  const auto tb = pretrain_stage1(b, data.pretrain_data(), stage_one_plan(cfg), tc);
  CHECK(group_hashes(a) == group_hashes(b));
  REQUIRE(ta.size() == 6);
  for (std::size_t i = 0; i < ta.size(); ++i) {
    CHECK(ta[i].loss == tb[i].loss);
    CHECK(ta[i].step == static_cast<int>(i) + 1);
    CHECK(std::isfinite(ta[i].loss));
  }
  CHECK(ta[0].objective != ta[1].objective);
  CHECK(ta[0].objective == ta[2].objective);
}

TEST_CASE("weight-0 objectives are left out of the alternation") {
  RunConfig cfg = tiny_run();
  cfg.dae_weight = 0.0;
  const auto data = build_data(cfg);
  auto m = init_model(cfg, data.vocab);
  const auto trace =
      pretrain_stage2(m, data.pretrain_data(), stage_two_plan(cfg), stage_train_config(cfg, cfg.stage2, "stage2"));
  for (const auto& r : trace) CHECK(r.objective == Objective::XAE);
}

TEST_CASE("loss trace CSV and mean_loss") {
  const LossTrace t{{1, Objective::MLM, 2.0, 0.1}, {2, Objective::XMLM, 4.0, 0.2}, {3, Objective::MLM, 6.0, 0.3}};
  CHECK(mean_loss(t, 1, 10) == doctest::Approx(5.0));
  CHECK(mean_loss(t, 0, 2) == doctest::Approx(3.0));
  const auto path = std::filesystem::temp_directory_path() / "xlg_trace.csv";
  write_loss_trace(path, t);
  std::ifstream in(path);
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  CHECK(header == "step,objective,loss,lr");
  CHECK(first == "1,mlm,2,0.1");
  std::filesystem::remove(path);
}
