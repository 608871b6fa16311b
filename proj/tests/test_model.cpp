#include <doctest.h>

#include <functional>
#include <numeric>

#include "xlg/model.hpp"

using namespace xlg;

namespace {

using TapeD = Tape<double>;
using VarD = TapeD::Var;
using MatD = Matrix<double>;
using Build = std::function<VarD(TapeD&, const std::vector<VarD>&)>;

MatD random_matrix(Rng& rng, int r, int c, double scale = 1.0) {
  MatD m(r, c);
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
  }
  return m;
}

double run(std::vector<MatD>& inputs, std::vector<MatD>* grads, const Build& build) {
  TapeD tape;
  std::vector<VarD> vars;
  for (std::size_t i = 0; i < inputs.size(); ++i) vars.push_back(tape.param(inputs[i], grads ? &(*grads)[i] : nullptr));
  const VarD loss = build(tape, vars);
  if (grads) tape.backward(loss);
  return tape.scalar(loss);
}

// Largest normwise relative error between the tape gradient and central differences.
double gradient_error(std::vector<MatD> inputs, const Build& build, double h = 1e-6) {
  std::vector<MatD> grads;
  for (const auto& m : inputs) grads.push_back(MatD::Zero(m.rows(), m.cols()));
  run(inputs, &grads, build);
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    MatD numeric(inputs[k].rows(), inputs[k].cols());
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      const double saved = inputs[k].data()[i];
      inputs[k].data()[i] = saved + h;
      const double up = run(inputs, nullptr, build);
      inputs[k].data()[i] = saved - h;
      const double down = run(inputs, nullptr, build);
      inputs[k].data()[i] = saved;
      numeric.data()[i] = (up - down) / (2 * h);
    }
    const double denom = std::max(grads[k].norm() + numeric.norm(), 1e-12);
    worst = std::max(worst, (grads[k] - numeric).norm() / denom);
  }
  return worst;
}

std::vector<int> random_targets(Rng& rng, int n, int classes) {
  std::vector<int> t(static_cast<std::size_t>(n));
  for (int& x : t) x = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));
  return t;
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.enc_layers = 2;
  c.dec_layers = 2;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ffn = 12;
  c.max_positions = 16;
  c.vocab_size = 14;
  return c;
}

}  // namespace

TEST_CASE("tape op gradients match central differences") {
  Rng rng(21, "tape-ops");
  const auto targets = random_targets(rng, 4, 3);

  SUBCASE("linear") {
    const double e = gradient_error({random_matrix(rng, 4, 5), random_matrix(rng, 5, 3), random_matrix(rng, 1, 3)},
                                    [&](TapeD& t, const std::vector<VarD>& v) {
                                      return t.cross_entropy(t.linear(v[0], v[1], v[2]), targets);
                                    });
    CHECK(e < 1e-7);
  }
  SUBCASE("linear_transposed") {
    const double e = gradient_error({random_matrix(rng, 4, 5), random_matrix(rng, 3, 5), random_matrix(rng, 1, 3)},
                                    [&](TapeD& t, const std::vector<VarD>& v) {
                                      return t.cross_entropy(t.linear_transposed(v[0], v[1], v[2]), targets);
                                    });
    CHECK(e < 1e-7);
  }
  SUBCASE("layer_norm") {
    const double e = gradient_error(
        {random_matrix(rng, 4, 3), random_matrix(rng, 1, 3), random_matrix(rng, 1, 3)},
        [&](TapeD& t, const std::vector<VarD>& v) { return t.cross_entropy(t.layer_norm(v[0], v[1], v[2]), targets); });
    CHECK(e < 1e-6);
  }
  SUBCASE("gelu and add") {
    const double e = gradient_error({random_matrix(rng, 4, 3), random_matrix(rng, 4, 3)},
                                    [&](TapeD& t, const std::vector<VarD>& v) {
                                      return t.cross_entropy(t.gelu(t.add(v[0], v[1])), targets);
                                    });
    CHECK(e < 1e-7);
  }
  SUBCASE("gather_rows with repeats") {
    const double e = gradient_error({random_matrix(rng, 5, 3)}, [&](TapeD& t, const std::vector<VarD>& v) {
      return t.cross_entropy(t.gather_rows(v[0], {4, 1, 1, 0}), targets);
    });
    CHECK(e < 1e-7);
  }
  SUBCASE("attention: causal, cross and padded segments") {
    std::vector<AttentionSegment> segs(2);
    segs[0] = {0, 3, 0, 3, true, {}};
    segs[1] = {3, 5, 3, 7, false, {1, 0, 1, 1}};
    const auto t5 = random_targets(rng, 5, 4);
    const double e = gradient_error({random_matrix(rng, 5, 4), random_matrix(rng, 7, 4), random_matrix(rng, 7, 4)},
                                    [&](TapeD& t, const std::vector<VarD>& v) {
                                      return t.cross_entropy(t.attention(v[0], v[1], v[2], 2, segs), t5);
                                    });
    CHECK(e < 1e-7);
  }
  SUBCASE("scale and sum") {
    const double e = gradient_error({random_matrix(rng, 4, 3)}, [&](TapeD& t, const std::vector<VarD>& v) {
      const auto a = t.cross_entropy(v[0], targets, 0.5);
      return t.sum({a, t.scale(t.cross_entropy(v[0], targets), 3.0)});
    });
    CHECK(e < 1e-7);
  }
}

TEST_CASE("cross_entropy against a direct log-sum-exp") {
  Rng rng(3, "ce");
  const MatD z = random_matrix(rng, 3, 6, 4.0);
  const std::vector<int> tg{5, 0, 2};
  TapeD tape;
  const double got = tape.scalar(tape.cross_entropy(tape.input(z), tg, 0.25));
  double want = 0.0;
  for (int i = 0; i < 3; ++i) {
    double s = 0.0;
    for (int j = 0; j < 6; ++j) s += std::exp(z(i, j));
    want += std::log(s) - z(i, tg[static_cast<std::size_t>(i)]);
  }
  CHECK(got == doctest::Approx(0.25 * want).epsilon(1e-12));
  CHECK_THROWS_AS(tape.cross_entropy(tape.input(z), {1, 2}), ShapeError);
}

TEST_CASE("frozen leaves receive no gradient") {
  Rng rng(4, "frozen");
  MatD x = random_matrix(rng, 2, 3), w = random_matrix(rng, 3, 3), b = random_matrix(rng, 1, 3);
  MatD gw = MatD::Zero(3, 3);
  TapeD tape;
  const auto vx = tape.param(x, nullptr);
  const auto vw = tape.param(w, &gw);
  const auto vb = tape.param(b, nullptr);
  tape.backward(tape.cross_entropy(tape.linear(vx, vw, vb), {0, 1}));
  CHECK(gw.norm() > 0.0);
  CHECK_FALSE(tape.requires_grad(vx));
}

TEST_CASE("parameter groups: sizes match the closed form, partition is exhaustive") {
  for (const ModelConfig& c : {tiny_config(), ModelConfig{1, 3, 16, 4, 32, 20, 40, 3}}) {
    Seq2SeqModel<float> m(c, 5);
    const auto expected = expected_group_sizes(c);
    const auto parts = m.partition_params();
    std::vector<int> seen;
    std::size_t total = 0;
    for (ParamGroup g : kAllGroups) {
      std::size_t n = 0;
      for (int i : parts.at(g)) {
        n += static_cast<std::size_t>(m.params()[static_cast<std::size_t>(i)].value.size());
        CHECK(m.params()[static_cast<std::size_t>(i)].group == g);
        seen.push_back(i);
      }
      CHECK(n == expected.at(g));
      total += n;
    }
    std::sort(seen.begin(), seen.end());
    std::vector<int> all(m.params().size());
    std::iota(all.begin(), all.end(), 0);
    CHECK(seen == all);
    CHECK(total == m.parameter_count());
  }
}

TEST_CASE("group names round trip") {
  for (ParamGroup g : kAllGroups) CHECK(parse_param_group(to_string(g)) == g);
  CHECK_THROWS(parse_param_group("Nope"));
}

TEST_CASE("invalid model configs") {
  auto c = tiny_config();
  c.n_heads = 3;
  CHECK_THROWS(c.validate());
  c = tiny_config();
  c.vocab_size = special::kCount;
  CHECK_THROWS(c.validate());
}

TEST_CASE("initialisation is a pure function of the seed") {
  Seq2SeqModel<float> a(tiny_config(), 9), b(tiny_config(), 9), c(tiny_config(), 10);
  bool differs = false;
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    CHECK(a.params()[i].value == b.params()[i].value);
    differs = differs || a.params()[i].value != c.params()[i].value;
  }
  CHECK(differs);
}

TEST_CASE("decoder is causal") {
  Seq2SeqModel<double> m(tiny_config(), 2);
  const Sequence src{7, 8, 9, 10};
  const auto enc = m.encode(src, std::vector<int>(src.size(), 0));
  const Sequence t1{special::kBos, 7, 8, 9, 10};
  Sequence t2 = t1;
  t2[3] = 12;
  t2[4] = 13;
  const auto a = m.decode_forward(enc, {}, t1, 1);
  const auto b = m.decode_forward(enc, {}, t2, 1);
  CHECK((a.topRows(3) - b.topRows(3)).norm() < 1e-12);
  CHECK((a.bottomRows(2) - b.bottomRows(2)).norm() > 1e-6);
}

TEST_CASE("padded encoder keys do not influence valid positions") {
  Seq2SeqModel<double> m(tiny_config(), 3);
  const std::vector<char> valid{1, 1, 1, 0, 0};
  const std::vector<int> tags(5, 0);
  const auto a = m.encode({7, 8, 9, special::kPad, special::kPad}, tags, valid);
  const auto b = m.encode({7, 8, 9, 11, 12}, tags, valid);
  CHECK((a.topRows(3) - b.topRows(3)).norm() < 1e-12);
  // Cross-attention ignores masked memory rows as well.
  MatD noisy = a;
  noisy.bottomRows(2).setConstant(5.0);
  const Sequence tgt{special::kBos, 8, 7};
  CHECK((m.decode_forward(a, valid, tgt, 0) - m.decode_forward(noisy, valid, tgt, 0)).norm() < 1e-12);
}

TEST_CASE("the language tag changes the representation") {
  Seq2SeqModel<double> m(tiny_config(), 4);
  const Sequence s{7, 8, 9};
  CHECK((m.embed(s, {0, 0, 0}) - m.embed(s, {1, 1, 1})).norm() > 1e-6);
}

TEST_CASE("batched forward equals per-sequence forward") {
  Seq2SeqModel<double> m(tiny_config(), 6);
  const Sequence s1{7, 8, 9}, s2{10, 11, 12, 13, 7};
  const Sequence t1{special::kBos, 9}, t2{special::kBos, 13, 12, 11};
  TapeD tape;
  ForwardPass<double> fp(m, tape);
  SeqBatch src, tgt;
  src.add(s1, 0);
  src.add(s2, 1);
  tgt.add(t1, 1);
  tgt.add(t2, 0);
  const auto mem = fp.encode(src);
  const auto h = fp.decode(mem, src, tgt);
  std::vector<int> rows(static_cast<std::size_t>(tgt.rows()));
  std::iota(rows.begin(), rows.end(), 0);
  const MatD batched = tape.value(fp.project(h, rows));

  const auto e1 = m.encode(s1, {0, 0, 0});
  const auto e2 = m.encode(s2, std::vector<int>(5, 1));
  CHECK((tape.value(mem).topRows(3) - e1).norm() < 1e-12);
  CHECK((tape.value(mem).bottomRows(5) - e2).norm() < 1e-12);
  CHECK((batched.topRows(2) - m.decode_forward(e1, {}, t1, 1)).norm() < 1e-12);
  CHECK((batched.bottomRows(4) - m.decode_forward(e2, {}, t2, 0)).norm() < 1e-12);
}

TEST_CASE("output projection is tied to the token table") {
  Seq2SeqModel<double> m(tiny_config(), 7);
  Rng rng(1, "tied");
  const MatD h = random_matrix(rng, 2, 8);
  const MatD logits = m.mlm_head(h, {0, 1});
  const auto& e = m.params()[static_cast<std::size_t>(m.tok_emb())].value;
  const auto& bias = m.params()[static_cast<std::size_t>(m.out_bias())].value;
  MatD want = h * e.transpose();
  want.rowwise() += bias.row(0);
  CHECK((logits - want).norm() < 1e-12);
}

TEST_CASE("positions beyond the table and bad shapes are rejected") {
  auto c = tiny_config();
  c.max_positions = 4;
  Seq2SeqModel<float> m(c, 1);
  CHECK_THROWS_AS(m.encode({7, 8, 9, 10, 11}, std::vector<int>(5, 0)), ShapeError);
  CHECK_THROWS_AS(m.encode({7, 8}, {0}), ShapeError);
  CHECK_THROWS_AS(m.mlm_head(Matrix<float>::Zero(2, 3), {0}), ShapeError);
}

TEST_CASE("log_softmax rows normalise") {
  Rng rng(2, "lsm");
  const MatD z = random_matrix(rng, 4, 7, 10.0);
  const MatD l = log_softmax_rows(z);
  for (int i = 0; i < 4; ++i) CHECK(l.row(i).array().exp().sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("copy_parameters between precisions") {
  Seq2SeqModel<float> f(tiny_config(), 1);
  Seq2SeqModel<double> d(tiny_config(), 2);
  copy_parameters(d, f);
  for (std::size_t i = 0; i < f.params().size(); ++i) CHECK(d.params()[i].value.cast<float>() == f.params()[i].value);
  auto other = tiny_config();
  other.d_model = 16;
  Seq2SeqModel<double> wrong(other, 1);
  CHECK_THROWS_AS(copy_parameters(wrong, f), ShapeError);
}
