#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "xlg/autodiff.hpp"
#include "xlg/rng.hpp"
#include "xlg/vocab.hpp"

namespace xlg {

struct ModelConfig {
  int enc_layers = 2;
  int dec_layers = 2;
  int d_model = 64;
  int n_heads = 4;
  int d_ffn = 256;
  int max_positions = 64;
  int vocab_size = 0;
  int num_languages = 2;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class ParamGroup : std::uint8_t {
  WordEmbeddings,
  EncoderLayers,
  DecoderLayers,
  OutputHead,
  TagAndPositionEmbeddings,
};

inline constexpr std::array<ParamGroup, 5> kAllGroups = {
    ParamGroup::WordEmbeddings, ParamGroup::EncoderLayers, ParamGroup::DecoderLayers, ParamGroup::OutputHead,
    ParamGroup::TagAndPositionEmbeddings};

std::string_view to_string(ParamGroup g);
ParamGroup parse_param_group(std::string_view s);

/// Closed-form parameter count per group.
std::map<ParamGroup, std::size_t> expected_group_sizes(const ModelConfig& cfg);

template <typename T>
struct Parameter {
  std::string name;
  ParamGroup group;
  Matrix<T> value;
  Matrix<T> grad;
};

/// Sequences stacked along rows. `key_valid` (optional, per sequence) marks
/// non-pad positions; pad positions are never attended to.
struct SeqBatch {
  std::vector<int> ids;
  std::vector<int> tags;
  std::vector<int> positions;
  std::vector<int> offsets{0};
  std::vector<std::vector<char>> key_valid;

  void add(const Sequence& seq, const std::vector<int>& seq_tags, const std::vector<char>& valid = {});
  void add(const Sequence& seq, int tag) { add(seq, std::vector<int>(seq.size(), tag)); }
  int num_sequences() const { return static_cast<int>(offsets.size()) - 1; }
  int rows() const { return offsets.back(); }
  int length(int i) const { return offsets[static_cast<std::size_t>(i) + 1] - offsets[static_cast<std::size_t>(i)]; }
};

template <typename T>
class Seq2SeqModel;

/// Binds model parameters onto one tape. Parameters whose group is not
/// trainable are bound without gradient storage.
template <typename T>
class ForwardPass {
 public:
  using Var = typename Tape<T>::Var;

  ForwardPass(Seq2SeqModel<T>& model, Tape<T>& tape, std::optional<std::vector<bool>> trainable_params = std::nullopt);

  Tape<T>& tape() { return tape_; }
  Var param(int index);

  Var embed(const SeqBatch& batch);
  Var encode(const SeqBatch& batch);
  /// Decoder hidden states (after the final norm) for teacher-forced targets.
  /// Target sequence i attends to source sequence `source_index[i]` (identity if empty).
  Var decode(Var encoder_states, const SeqBatch& source, const SeqBatch& target,
             const std::vector<int>& source_index = {});
  /// Logits through the tied output projection for selected rows.
  Var project(Var hidden, std::vector<int> rows);

 private:
  Var self_attention(Var x, int layer_base, const SeqBatch& batch, bool causal);
  Var cross_attention(Var x, Var memory, int layer_base, const SeqBatch& queries, const SeqBatch& keys,
                      const std::vector<int>& source_index);
  Var feed_forward(Var x, int layer_base);

  Seq2SeqModel<T>& model_;
  Tape<T>& tape_;
  std::optional<std::vector<bool>> trainable_;
  std::vector<int> bound_;
};

/// Transformer encoder-decoder with shared token, position and language-tag
/// embeddings. The output projection is the transposed token table.
template <typename T>
class Seq2SeqModel {
 public:
  Seq2SeqModel(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  std::vector<Parameter<T>>& params() { return params_; }
  const std::vector<Parameter<T>>& params() const { return params_; }
  std::size_t parameter_count() const;
  int find_param(std::string_view name) const;

  /// Group -> parameter indices; disjoint and exhaustive.
  std::map<ParamGroup, std::vector<int>> partition_params() const;
  std::vector<bool> trainable_mask(const std::vector<ParamGroup>& groups) const;

  void zero_grad();

  // Single-sequence conveniences used by tests and decoding.
  Matrix<T> embed(const Sequence& ids, const std::vector<int>& lang_tags);
  Matrix<T> encode(const Sequence& ids, const std::vector<int>& lang_tags, const std::vector<char>& pad_mask = {});
  /// `target_ids` begins with BOS; returns one logit row per target position.
  Matrix<T> decode_forward(const Matrix<T>& encoder_states, const std::vector<char>& src_pad_mask,
                           const Sequence& target_ids, int tgt_lang);
  Matrix<T> mlm_head(const Matrix<T>& encoder_states, const std::vector<int>& positions);

  // Parameter layout.
  int tok_emb() const { return tok_emb_; }
  int pos_emb() const { return pos_emb_; }
  int lang_emb() const { return lang_emb_; }
  int out_bias() const { return out_bias_; }

 private:
  friend class ForwardPass<T>;

  int add_param(std::string name, ParamGroup group, Matrix<T> value);
  int add_linear(const std::string& name, ParamGroup group, int in, int out, Rng& rng);
  int add_norm(const std::string& name, ParamGroup group, int dim);

  ModelConfig cfg_;
  std::vector<Parameter<T>> params_;
  int tok_emb_ = -1, pos_emb_ = -1, lang_emb_ = -1, out_bias_ = -1;
  // Each layer's parameters are contiguous starting at these indices.
  std::vector<int> enc_layer_base_, dec_layer_base_;
  int enc_final_norm_ = -1, dec_final_norm_ = -1;
};

/// Copies parameters between precisions with matching configs.
template <typename To, typename From>
void copy_parameters(Seq2SeqModel<To>& dst, const Seq2SeqModel<From>& src);

/// Row-wise log-softmax.
template <typename T>
Matrix<T> log_softmax_rows(const Matrix<T>& logits);

extern template class Seq2SeqModel<float>;
extern template class Seq2SeqModel<double>;
extern template class ForwardPass<float>;
extern template class ForwardPass<double>;

}  // namespace xlg
