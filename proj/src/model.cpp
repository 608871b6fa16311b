#include "xlg/model.hpp"

#include <cmath>
#include <stdexcept>

namespace xlg {

namespace {

// Offsets inside one layer's contiguous parameter block.
namespace enc {
constexpr int kLn1 = 0, kAttn = 2, kLn2 = 10, kFfn = 12;
}
namespace dec {
constexpr int kLn1 = 0, kSelf = 2, kLn2 = 10, kCross = 12, kLn3 = 20, kFfn = 22;
}

}  // namespace

void ModelConfig::validate() const {
  const auto fail = [](const std::string& m) { throw std::invalid_argument("invalid model config: " + m); };
  if (enc_layers < 0 || dec_layers < 0) fail("layer counts must be >= 0");
  if (d_model < 1 || n_heads < 1 || d_ffn < 1) fail("d_model, n_heads and d_ffn must be positive");
  if (d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (max_positions < 1) fail("max_positions must be positive");
  if (vocab_size <= special::kCount) fail("vocab_size must exceed the special-token count");
  if (num_languages < 1) fail("num_languages must be positive");
}

std::string_view to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::WordEmbeddings: return "WordEmbeddings";
    case ParamGroup::EncoderLayers: return "EncoderLayers";
    case ParamGroup::DecoderLayers: return "DecoderLayers";
    case ParamGroup::OutputHead: return "OutputHead";
    case ParamGroup::TagAndPositionEmbeddings: return "TagAndPositionEmbeddings";
  }
  return "?";
}

ParamGroup parse_param_group(std::string_view s) {
  for (ParamGroup g : kAllGroups) {
    if (to_string(g) == s) return g;
  }
  throw std::invalid_argument("unknown parameter group '" + std::string(s) + "'");
}

std::map<ParamGroup, std::size_t> expected_group_sizes(const ModelConfig& c) {
  const std::size_t d = static_cast<std::size_t>(c.d_model);
  const std::size_t f = static_cast<std::size_t>(c.d_ffn);
  const std::size_t attn = 4 * (d * d + d);
  const std::size_t ffn = d * f + f + f * d + d;
  const std::size_t enc_layer = 2 * (2 * d) + attn + ffn;
  const std::size_t dec_layer = 3 * (2 * d) + 2 * attn + ffn;
  return {
      {ParamGroup::WordEmbeddings, static_cast<std::size_t>(c.vocab_size) * d},
      {ParamGroup::TagAndPositionEmbeddings, static_cast<std::size_t>(c.max_positions + c.num_languages) * d},
      {ParamGroup::EncoderLayers, static_cast<std::size_t>(c.enc_layers) * enc_layer + 2 * d},
      {ParamGroup::DecoderLayers, static_cast<std::size_t>(c.dec_layers) * dec_layer + 2 * d},
      {ParamGroup::OutputHead, static_cast<std::size_t>(c.vocab_size)},
  };
}

void SeqBatch::add(const Sequence& seq, const std::vector<int>& seq_tags, const std::vector<char>& valid) {
  if (seq.empty()) throw ShapeError("SeqBatch: empty sequence");
  if (seq_tags.size() != seq.size()) throw ShapeError("SeqBatch: ids and lang_tags differ in length");
  if (!valid.empty() && valid.size() != seq.size()) throw ShapeError("SeqBatch: pad mask differs in length");
  ids.insert(ids.end(), seq.begin(), seq.end());
  tags.insert(tags.end(), seq_tags.begin(), seq_tags.end());
  for (std::size_t i = 0; i < seq.size(); ++i) positions.push_back(static_cast<int>(i));
  offsets.push_back(offsets.back() + static_cast<int>(seq.size()));
  key_valid.push_back(valid);
}

// ---------------------------------------------------------------------------
// Seq2SeqModel

template <typename T>
int Seq2SeqModel<T>::add_param(std::string name, ParamGroup group, Matrix<T> value) {
  Parameter<T> p{std::move(name), group, std::move(value), {}};
  p.grad = Matrix<T>::Zero(p.value.rows(), p.value.cols());
  params_.push_back(std::move(p));
  return static_cast<int>(params_.size()) - 1;
}

template <typename T>
int Seq2SeqModel<T>::add_linear(const std::string& name, ParamGroup group, int in, int out, Rng& rng) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(in));
  Matrix<T> w(in, out);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<T>(rng.normal() * scale);
  const int idx = add_param(name + ".w", group, std::move(w));
  add_param(name + ".b", group, Matrix<T>::Zero(1, out));
  return idx;
}

template <typename T>
int Seq2SeqModel<T>::add_norm(const std::string& name, ParamGroup group, int dim) {
  const int idx = add_param(name + ".g", group, Matrix<T>::Ones(1, dim));
  add_param(name + ".b", group, Matrix<T>::Zero(1, dim));
  return idx;
}

template <typename T>
Seq2SeqModel<T>::Seq2SeqModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed, "model-init");
  const int d = cfg_.d_model;
  const double emb_std = 1.0 / std::sqrt(static_cast<double>(d));
  const auto table = [&](int rows) {
    Matrix<T> m(rows, d);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.normal() * emb_std);
    return m;
  };
  tok_emb_ = add_param("tok_emb", ParamGroup::WordEmbeddings, table(cfg_.vocab_size));
  pos_emb_ = add_param("pos_emb", ParamGroup::TagAndPositionEmbeddings, table(cfg_.max_positions));
  lang_emb_ = add_param("lang_emb", ParamGroup::TagAndPositionEmbeddings, table(cfg_.num_languages));

  const auto attention = [&](const std::string& n, ParamGroup g) {
    for (const char* part : {"q", "k", "v", "o"}) add_linear(n + "." + part, g, d, d, rng);
  };
  for (int l = 0; l < cfg_.enc_layers; ++l) {
    const std::string n = "enc." + std::to_string(l);
    const auto g = ParamGroup::EncoderLayers;
    enc_layer_base_.push_back(add_norm(n + ".ln1", g, d));
    attention(n + ".attn", g);
    add_norm(n + ".ln2", g, d);
    add_linear(n + ".ffn1", g, d, cfg_.d_ffn, rng);
    add_linear(n + ".ffn2", g, cfg_.d_ffn, d, rng);
  }
  enc_final_norm_ = add_norm("enc.final_ln", ParamGroup::EncoderLayers, d);
  for (int l = 0; l < cfg_.dec_layers; ++l) {
    const std::string n = "dec." + std::to_string(l);
    const auto g = ParamGroup::DecoderLayers;
    dec_layer_base_.push_back(add_norm(n + ".ln1", g, d));
    attention(n + ".self", g);
    add_norm(n + ".ln2", g, d);
    attention(n + ".cross", g);
    add_norm(n + ".ln3", g, d);
    add_linear(n + ".ffn1", g, d, cfg_.d_ffn, rng);
    add_linear(n + ".ffn2", g, cfg_.d_ffn, d, rng);
  }
  dec_final_norm_ = add_norm("dec.final_ln", ParamGroup::DecoderLayers, d);
  out_bias_ = add_param("out_bias", ParamGroup::OutputHead, Matrix<T>::Zero(1, cfg_.vocab_size));
}

template <typename T>
std::size_t Seq2SeqModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

template <typename T>
int Seq2SeqModel<T>::find_param(std::string_view name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

template <typename T>
std::map<ParamGroup, std::vector<int>> Seq2SeqModel<T>::partition_params() const {
  std::map<ParamGroup, std::vector<int>> out;
  for (ParamGroup g : kAllGroups) out[g];
  for (std::size_t i = 0; i < params_.size(); ++i) out[params_[i].group].push_back(static_cast<int>(i));
  return out;
}

template <typename T>
std::vector<bool> Seq2SeqModel<T>::trainable_mask(const std::vector<ParamGroup>& groups) const {
  std::vector<bool> mask(params_.size(), false);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    for (ParamGroup g : groups) mask[i] = mask[i] || params_[i].group == g;
  }
  return mask;
}

template <typename T>
void Seq2SeqModel<T>::zero_grad() {
  for (auto& p : params_) p.grad.setZero();
}

template <typename T>
Matrix<T> Seq2SeqModel<T>::embed(const Sequence& ids, const std::vector<int>& lang_tags) {
  Tape<T> tape;
  ForwardPass<T> fp(*this, tape, std::vector<bool>(params_.size(), false));
  SeqBatch b;
  b.add(ids, lang_tags);
  return tape.value(fp.embed(b));
}

template <typename T>
Matrix<T> Seq2SeqModel<T>::encode(const Sequence& ids, const std::vector<int>& lang_tags,
                                  const std::vector<char>& pad_mask) {
  Tape<T> tape;
  ForwardPass<T> fp(*this, tape, std::vector<bool>(params_.size(), false));
  SeqBatch b;
  b.add(ids, lang_tags, pad_mask);
  return tape.value(fp.encode(b));
}

template <typename T>
Matrix<T> Seq2SeqModel<T>::decode_forward(const Matrix<T>& encoder_states, const std::vector<char>& src_pad_mask,
                                          const Sequence& target_ids, int tgt_lang) {
  if (encoder_states.cols() != cfg_.d_model || encoder_states.rows() == 0) {
    throw ShapeError("decode_forward: encoder states must be (n, d_model)");
  }
  Tape<T> tape;
  ForwardPass<T> fp(*this, tape, std::vector<bool>(params_.size(), false));
  SeqBatch src;
  src.add(Sequence(static_cast<std::size_t>(encoder_states.rows()), special::kPad), 0);
  src.key_valid[0] = src_pad_mask;
  if (!src_pad_mask.empty() && static_cast<Eigen::Index>(src_pad_mask.size()) != encoder_states.rows()) {
    throw ShapeError("decode_forward: pad mask length mismatch");
  }
  SeqBatch tgt;
  tgt.add(target_ids, tgt_lang);
  const auto mem = tape.input(encoder_states);
  const auto h = fp.decode(mem, src, tgt);
  std::vector<int> rows(target_ids.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<int>(i);
  return tape.value(fp.project(h, rows));
}

template <typename T>
Matrix<T> Seq2SeqModel<T>::mlm_head(const Matrix<T>& encoder_states, const std::vector<int>& positions) {
  if (encoder_states.cols() != cfg_.d_model) throw ShapeError("mlm_head: encoder states must have d_model columns");
  Tape<T> tape;
  ForwardPass<T> fp(*this, tape, std::vector<bool>(params_.size(), false));
  return tape.value(fp.project(tape.input(encoder_states), positions));
}

// ---------------------------------------------------------------------------
// ForwardPass

template <typename T>
ForwardPass<T>::ForwardPass(Seq2SeqModel<T>& model, Tape<T>& tape, std::optional<std::vector<bool>> trainable)
    : model_(model), tape_(tape), trainable_(std::move(trainable)), bound_(model.params().size(), -1) {
  if (trainable_ && trainable_->size() != model.params().size()) {
    throw ShapeError("ForwardPass: trainable mask size mismatch");
  }
}

template <typename T>
typename ForwardPass<T>::Var ForwardPass<T>::param(int index) {
  auto& slot = bound_[static_cast<std::size_t>(index)];
  if (slot < 0) {
    auto& p = model_.params_[static_cast<std::size_t>(index)];
    const bool train = !trainable_ || (*trainable_)[static_cast<std::size_t>(index)];
    slot = tape_.param(p.value, train ? &p.grad : nullptr).id;
  }
  return Var{slot};
}

template <typename T>
typename ForwardPass<T>::Var ForwardPass<T>::embed(const SeqBatch& b) {
  const auto& c = model_.cfg_;
  for (std::size_t i = 0; i < b.ids.size(); ++i) {
    if (b.ids[i] < 0 || b.ids[i] >= c.vocab_size) throw ShapeError("embed: token id out of range");
    if (b.tags[i] < 0 || b.tags[i] >= c.num_languages) throw ShapeError("embed: language tag out of range");
    if (b.positions[i] >= c.max_positions) {
      throw ShapeError("embed: sequence longer than max_positions (" + std::to_string(c.max_positions) + ")");
    }
  }
  auto x = tape_.gather_rows(param(model_.tok_emb_), b.ids);
  x = tape_.add(x, tape_.gather_rows(param(model_.pos_emb_), b.positions));
  return tape_.add(x, tape_.gather_rows(param(model_.lang_emb_), b.tags));
}

template <typename T>
typename ForwardPass<T>::Var ForwardPass<T>::self_attention(Var x, int base, const SeqBatch& b, bool causal) {
  auto q = tape_.linear(x, param(base), param(base + 1));
  auto k = tape_.linear(x, param(base + 2), param(base + 3));
  auto v = tape_.linear(x, param(base + 4), param(base + 5));
  std::vector<AttentionSegment> segs;
  segs.reserve(static_cast<std::size_t>(b.num_sequences()));
  for (int i = 0; i < b.num_sequences(); ++i) {
    const auto o = b.offsets[static_cast<std::size_t>(i)];
    const auto e = b.offsets[static_cast<std::size_t>(i) + 1];
    segs.push_back({o, e, o, e, causal, b.key_valid[static_cast<std::size_t>(i)]});
  }
  auto a = tape_.attention(q, k, v, model_.cfg_.n_heads, std::move(segs));
  return tape_.linear(a, param(base + 6), param(base + 7));
}

template <typename T>
typename ForwardPass<T>::Var ForwardPass<T>::cross_attention(Var x, Var memory, int base, const SeqBatch& queries,
                                                             const SeqBatch& keys,
                                                             const std::vector<int>& source_index) {
  auto q = tape_.linear(x, param(base), param(base + 1));
  auto k = tape_.linear(memory, param(base + 2), param(base + 3));
  auto v = tape_.linear(memory, param(base + 4), param(base + 5));
  std::vector<AttentionSegment> segs;
  for (int i = 0; i < queries.num_sequences(); ++i) {
    const auto src = static_cast<std::size_t>(source_index.empty() ? i : source_index[static_cast<std::size_t>(i)]);
    if (src + 1 >= keys.offsets.size()) throw ShapeError("cross_attention: source index out of range");
    segs.push_back({queries.offsets[static_cast<std::size_t>(i)], queries.offsets[static_cast<std::size_t>(i) + 1],
                    keys.offsets[src], keys.offsets[src + 1], false, keys.key_valid[src]});
  }
  auto a = tape_.attention(q, k, v, model_.cfg_.n_heads, std::move(segs));
  return tape_.linear(a, param(base + 6), param(base + 7));
}

template <typename T>
typename ForwardPass<T>::Var ForwardPass<T>::feed_forward(Var x, int base) {
  auto h = tape_.gelu(tape_.linear(x, param(base), param(base + 1)));
  return tape_.linear(h, param(base + 2), param(base + 3));
}

template <typename T>
typename ForwardPass<T>::Var ForwardPass<T>::encode(const SeqBatch& b) {
  auto x = embed(b);
  for (int base : model_.enc_layer_base_) {
    auto h = tape_.layer_norm(x, param(base + enc::kLn1), param(base + enc::kLn1 + 1));
    x = tape_.add(x, self_attention(h, base + enc::kAttn, b, false));
    h = tape_.layer_norm(x, param(base + enc::kLn2), param(base + enc::kLn2 + 1));
    x = tape_.add(x, feed_forward(h, base + enc::kFfn));
  }
  const int fn = model_.enc_final_norm_;
  return tape_.layer_norm(x, param(fn), param(fn + 1));
}

template <typename T>
typename ForwardPass<T>::Var ForwardPass<T>::decode(Var memory, const SeqBatch& source, const SeqBatch& target,
                                                    const std::vector<int>& source_index) {
  if (tape_.value(memory).rows() != source.rows() || tape_.value(memory).cols() != model_.cfg_.d_model) {
    throw ShapeError("decode: encoder states do not match the source batch");
  }
  if (source_index.empty() && source.num_sequences() != target.num_sequences()) {
    throw ShapeError("decode: source and target batch sizes differ");
  }
  auto x = embed(target);
  for (int base : model_.dec_layer_base_) {
    auto h = tape_.layer_norm(x, param(base + dec::kLn1), param(base + dec::kLn1 + 1));
    x = tape_.add(x, self_attention(h, base + dec::kSelf, target, true));
    h = tape_.layer_norm(x, param(base + dec::kLn2), param(base + dec::kLn2 + 1));
    x = tape_.add(x, cross_attention(h, memory, base + dec::kCross, target, source, source_index));
    h = tape_.layer_norm(x, param(base + dec::kLn3), param(base + dec::kLn3 + 1));
    x = tape_.add(x, feed_forward(h, base + dec::kFfn));
  }
  const int fn = model_.dec_final_norm_;
  return tape_.layer_norm(x, param(fn), param(fn + 1));
}

template <typename T>
typename ForwardPass<T>::Var ForwardPass<T>::project(Var hidden, std::vector<int> rows) {
  for (int r : rows) {
    if (r < 0 || r >= tape_.value(hidden).rows()) throw ShapeError("project: position out of range");
  }
  auto h = tape_.select_rows(hidden, std::move(rows));
  return tape_.linear_transposed(h, param(model_.tok_emb_), param(model_.out_bias_));
}

// ---------------------------------------------------------------------------

template <typename To, typename From>
void copy_parameters(Seq2SeqModel<To>& dst, const Seq2SeqModel<From>& src) {
  if (!(dst.config() == src.config())) throw ShapeError("copy_parameters: config mismatch");
  for (std::size_t i = 0; i < dst.params().size(); ++i) {
    dst.params()[i].value = src.params()[i].value.template cast<To>();
  }
}

template <typename T>
Matrix<T> log_softmax_rows(const Matrix<T>& z) {
  Matrix<T> out(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const T mx = z.row(i).maxCoeff();
    const T lse = mx + std::log((z.row(i).array() - mx).exp().sum());
    out.row(i) = (z.row(i).array() - lse).matrix();
  }
  return out;
}

template class Seq2SeqModel<float>;
template class Seq2SeqModel<double>;
template class ForwardPass<float>;
template class ForwardPass<double>;
template void copy_parameters(Seq2SeqModel<float>&, const Seq2SeqModel<double>&);
template void copy_parameters(Seq2SeqModel<double>&, const Seq2SeqModel<float>&);
template void copy_parameters(Seq2SeqModel<float>&, const Seq2SeqModel<float>&);
template void copy_parameters(Seq2SeqModel<double>&, const Seq2SeqModel<double>&);
template Matrix<float> log_softmax_rows(const Matrix<float>&);
template Matrix<double> log_softmax_rows(const Matrix<double>&);

}  // namespace xlg
