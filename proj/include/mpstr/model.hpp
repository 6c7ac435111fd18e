#pragma once

// Visual encoder with a learnable [len] token, the two length heads, and the
// masked-and-permuted decoder. Everything is templated on the scalar type so
// the same code trains in float and is gradient-checked in double.

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "mpstr/autograd.hpp"
#include "mpstr/image.hpp"
#include "mpstr/layers.hpp"
#include "mpstr/model_config.hpp"
#include "mpstr/schedule.hpp"
#include "mpstr/text_codec.hpp"

namespace mpstr {

// Flattened patches in row-major patch order, each patch laid out
// (row, col, channel). Pixels map to [-1, 1]. Throws ShapeError on a
// geometry mismatch.
template <typename T>
Matrix<T> patchify(const Image& image, const EncoderConfig& cfg);

struct EncoderVars {
  Var length_token;  // z_0, 1 x D
  Var visual;        // z_v, N x D
};

template <typename T>
class VitEncoder {
 public:
  VitEncoder() = default;
  VitEncoder(ParamStore<T>& store, const EncoderConfig& cfg, double init_std, Rng& rng);

  // patches: N x patch_dim
  EncoderVars forward(Graph<T>& g, Var patches) const;

  Parameter<T>& length_token() const { return *len_token_; }
  Parameter<T>& position_embedding() const { return *pos_; }

 private:
  struct Block {
    LayerNorm<T> ln1, ln2;
    MultiHeadAttention<T> attn;
    Mlp<T> mlp;
  };
  EncoderConfig cfg_{};
  Linear<T> patch_proj_;
  Parameter<T>* len_token_ = nullptr;
  Parameter<T>* pos_ = nullptr;
  std::vector<Block> blocks_;
  LayerNorm<T> norm_;
};

// LN -> FC -> GELU -> FC over z_0; 1 x T logits, class c means length c+1.
template <typename T>
class WordLengthHead {
 public:
  WordLengthHead() = default;
  WordLengthHead(ParamStore<T>& store, int dim, int hidden, int max_len, double init_std, Rng& rng);
  Var forward(Graph<T>& g, Var length_token) const;

 private:
  LayerNorm<T> ln_;
  Linear<T> fc1_, fc2_;
};

// Slot queries cross-attend to z_v; each of the T slots gets a two-way
// (empty, has-character) classification.
template <typename T>
class CharLengthHead {
 public:
  CharLengthHead() = default;
  CharLengthHead(ParamStore<T>& store, int dim, int heads, int max_len, double init_std, Rng& rng);
  Var forward(Graph<T>& g, Var visual) const;

 private:
  Parameter<T>* queries_ = nullptr;
  LayerNorm<T> ln_q_, ln_out_;
  MultiHeadAttention<T> attn_;
  Linear<T> fc_;
};

// Argmax with lowest-index tie-break, mapped to length argmax + 1.
template <typename T>
int length_from_word_logits(std::span<const T> logits);
// Count of slots whose "has-character" logit wins, clamped to [1, T].
template <typename T>
int length_from_slot_logits(const Matrix<T>& slot_logits);

// Embedding ids for the doubled context: T+2 word-side ids followed by T+2
// mask-side ids.
struct ContextTokens {
  std::vector<int> ids;
  int max_len = 0;
};

// Word side: [B], the known tokens, [P] for undetermined positions up to
// `length`, [E] at length+1, [P] beyond. Mask side: [M] everywhere.
// Throws LengthError if tokens exceed length or length exceeds max_len.
ContextTokens build_context(std::span<const int> tokens, int length, int max_len, const SpecialTokens& sp);

template <typename T>
class MpDecoder {
 public:
  MpDecoder() = default;
  MpDecoder(ParamStore<T>& store, const ModelConfig& cfg, int vocab_rows, int classes, Rng& rng);

  // Decodes `blocks` schedules at once. Query slots 1..slots are used in
  // every block; `mask` holds blocks*slots rows over the 2(T+2) context
  // keys. Returns blocks*slots x classes logits. When `first_attention` is
  // non-null it receives the first cross-attention output of layer 0, whose
  // probabilities are available through Graph::attention_probs.
  Var forward(Graph<T>& g, Var visual, const ContextTokens& ctx, const BlockMask& mask, int blocks, int slots,
              Var* first_attention = nullptr) const;

  Parameter<T>& token_embedding() const { return *tok_; }
  Parameter<T>& position_table() const { return *pos_; }

 private:
  struct Layer {
    LayerNorm<T> ln_q, ln_c, ln_v, ln_m;
    MultiHeadAttention<T> context_attn, visual_attn;
    Mlp<T> mlp;
  };
  Var norm(Graph<T>& g, const LayerNorm<T>& ln, Var x) const { return pre_norm_ ? ln(g, x) : x; }

  int max_len_ = 0;
  bool pre_norm_ = true;
  Parameter<T>* tok_ = nullptr;
  Parameter<T>* pos_ = nullptr;  // (T+2) x D; query slot i uses row i
  std::vector<Layer> layers_;
  LayerNorm<T> ln_out_;
  Linear<T> head_;
};

// Encoder outputs detached from any graph.
template <typename T>
struct VisualEncoding {
  Matrix<T> length_token;  // 1 x D
  Matrix<T> visual;        // N x D
};

template <typename T>
class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ModelConfig& config() const { return cfg_; }
  const TextCodec& codec() const { return codec_; }
  int max_len() const { return cfg_.max_len; }
  int classes() const { return codec_.output_classes(); }
  ParamStore<T>& params() { return *store_; }
  const ParamStore<T>& params() const { return *store_; }

  const VitEncoder<T>& encoder() const { return encoder_; }
  const WordLengthHead<T>& word_length_head() const { return word_head_; }
  const CharLengthHead<T>& char_length_head() const { return char_head_; }
  bool has_char_length_head() const { return cfg_.length_source == LengthSource::kChar; }
  const MpDecoder<T>& decoder() const { return decoder_; }

  // Forward-only helpers.
  VisualEncoding<T> encode(const Image& image) const;
  Matrix<T> word_length_logits(const VisualEncoding<T>& enc) const;
  Matrix<T> char_length_logits(const VisualEncoding<T>& enc) const;
  // Length the decoder should use for this image under the configured source.
  int predict_length(const VisualEncoding<T>& enc) const;
  // Applies the model's mask-token mode: mask side blocked when mask tokens are off.
  BlockMask decoder_mask(AttentionSchedule schedule, const PadMask& pad) const;
  // (T+1) x classes logits for one schedule.
  Matrix<T> decode(const VisualEncoding<T>& enc, const ContextTokens& ctx, const AttentionSchedule& schedule,
                   const PadMask& pad) const;
  // Same, also returning first cross-attention weights [head][query][key].
  Matrix<T> decode_with_attention(const VisualEncoding<T>& enc, const ContextTokens& ctx,
                                  const AttentionSchedule& schedule, const PadMask& pad,
                                  std::vector<T>& attention) const;

  template <typename U>
  Model<U> cast() const;
  void copy_values_from(const ParamStore<T>& other);

 private:
  ModelConfig cfg_;
  TextCodec codec_;
  std::unique_ptr<ParamStore<T>> store_;
  VitEncoder<T> encoder_;
  WordLengthHead<T> word_head_;
  CharLengthHead<T> char_head_;
  MpDecoder<T> decoder_;
};

template <typename T>
template <typename U>
Model<U> Model<T>::cast() const {
  Model<U> out(cfg_, 0);
  const auto& src = store_->all();
  const auto& dst = out.params().all();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value.template cast<U>();
  return out;
}

}  // namespace mpstr
