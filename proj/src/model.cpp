#include "mpstr/model.hpp"

#include <numeric>

#include "mpstr/errors.hpp"

namespace mpstr {

template <typename T>
Matrix<T> patchify(const Image& image, const EncoderConfig& cfg) {
  if (image.width != cfg.image_width || image.height != cfg.image_height || image.channels != cfg.channels) {
    throw ShapeError("image is " + std::to_string(image.width) + "x" + std::to_string(image.height) + "x" +
                     std::to_string(image.channels) + ", model expects " + std::to_string(cfg.image_width) + "x" +
                     std::to_string(cfg.image_height) + "x" + std::to_string(cfg.channels));
  }
  const int ph = cfg.patch_height, pw = cfg.patch_width, ch = cfg.channels;
  Matrix<T> out(cfg.num_patches(), cfg.patch_dim());
  int row = 0;
  for (int gy = 0; gy < cfg.grid_rows(); ++gy) {
    for (int gx = 0; gx < cfg.grid_cols(); ++gx, ++row) {
      int col = 0;
      for (int y = 0; y < ph; ++y)
        for (int x = 0; x < pw; ++x)
          for (int c = 0; c < ch; ++c, ++col) {
            const T v = static_cast<T>(image.at(gx * pw + x, gy * ph + y, c)) / T(255);
            out(row, col) = (v - T(0.5)) / T(0.5);
          }
    }
  }
  return out;
}

template <typename T>
VitEncoder<T>::VitEncoder(ParamStore<T>& store, const EncoderConfig& cfg, double init_std, Rng& rng) : cfg_(cfg) {
  const int d = cfg.dim;
  patch_proj_ = Linear<T>::make(store, "enc.patch", cfg.patch_dim(), d, init_std, rng);
  len_token_ = &store.add("enc.len_token", 1, d);
  fill_normal(len_token_->value, init_std, rng);
  pos_ = &store.add("enc.pos", cfg.num_patches() + 1, d);
  fill_normal(pos_->value, init_std, rng);
  for (int l = 0; l < cfg.depth; ++l) {
    const std::string p = "enc.blocks." + std::to_string(l);
    Block b;
    b.ln1 = LayerNorm<T>::make(store, p + ".ln1", d);
    b.attn = MultiHeadAttention<T>::make(store, p + ".attn", d, cfg.heads, init_std, rng);
    b.ln2 = LayerNorm<T>::make(store, p + ".ln2", d);
    b.mlp = Mlp<T>::make(store, p + ".mlp", d, d * cfg.mlp_ratio, init_std, rng);
    blocks_.push_back(b);
  }
  norm_ = LayerNorm<T>::make(store, "enc.norm", d);
}

template <typename T>
EncoderVars VitEncoder<T>::forward(Graph<T>& g, Var patches) const {
  if (g.rows(patches) != cfg_.num_patches() || g.cols(patches) != cfg_.patch_dim()) {
    throw ShapeError("encoder input has wrong patch geometry");
  }
  Var x = g.concat_rows({g.param(*len_token_), patch_proj_(g, patches)});
  x = g.add(x, g.param(*pos_));
  for (const Block& b : blocks_) {
    Var n1 = b.ln1(g, x);
    x = g.add(x, b.attn(g, n1, n1));
    x = g.add(x, b.mlp(g, b.ln2(g, x)));
  }
  Var z = norm_(g, x);
  return EncoderVars{g.slice_rows(z, 0, 1), g.slice_rows(z, 1, cfg_.num_patches())};
}

template <typename T>
WordLengthHead<T>::WordLengthHead(ParamStore<T>& store, int dim, int hidden, int max_len, double init_std,
                                  Rng& rng) {
  ln_ = LayerNorm<T>::make(store, "len.ln", dim);
  fc1_ = Linear<T>::make(store, "len.fc1", dim, hidden, init_std, rng);
  fc2_ = Linear<T>::make(store, "len.fc2", hidden, max_len, init_std, rng);
}

template <typename T>
Var WordLengthHead<T>::forward(Graph<T>& g, Var length_token) const {
  return fc2_(g, g.gelu(fc1_(g, ln_(g, length_token))));
}

template <typename T>
CharLengthHead<T>::CharLengthHead(ParamStore<T>& store, int dim, int heads, int max_len, double init_std, Rng& rng) {
  queries_ = &store.add("charlen.queries", max_len, dim);
  fill_normal(queries_->value, init_std, rng);
  ln_q_ = LayerNorm<T>::make(store, "charlen.ln_q", dim);
  attn_ = MultiHeadAttention<T>::make(store, "charlen.attn", dim, heads, init_std, rng);
  ln_out_ = LayerNorm<T>::make(store, "charlen.ln_out", dim);
  fc_ = Linear<T>::make(store, "charlen.fc", dim, 2, init_std, rng);
}

template <typename T>
Var CharLengthHead<T>::forward(Graph<T>& g, Var visual) const {
  Var q = g.param(*queries_);
  Var h = g.add(q, attn_(g, ln_q_(g, q), visual));
  return fc_(g, ln_out_(g, h));
}

template <typename T>
int length_from_word_logits(std::span<const T> logits) {
  if (logits.empty()) throw ShapeError("empty length logits");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return static_cast<int>(best) + 1;
}

template <typename T>
int length_from_slot_logits(const Matrix<T>& slot_logits) {
  if (slot_logits.cols() != 2 || slot_logits.rows() < 1) throw ShapeError("slot logits must be T x 2");
  int count = 0;
  for (int r = 0; r < slot_logits.rows(); ++r)
    if (slot_logits(r, 1) > slot_logits(r, 0)) ++count;
  return std::clamp(count, 1, slot_logits.rows());
}

ContextTokens build_context(std::span<const int> tokens, int length, int max_len, const SpecialTokens& sp) {
  if (length < 1 || length > max_len) {
    throw LengthError("context length " + std::to_string(length) + " outside [1, " + std::to_string(max_len) + "]");
  }
  if (static_cast<int>(tokens.size()) > length) {
    throw LengthError(std::to_string(tokens.size()) + " tokens do not fit a length-" + std::to_string(length) +
                      " context");
  }
  ContextTokens ctx;
  ctx.max_len = max_len;
  ctx.ids.assign(static_cast<std::size_t>(2 * (max_len + 2)), sp.pad);
  ctx.ids[0] = sp.bos;
  std::copy(tokens.begin(), tokens.end(), ctx.ids.begin() + 1);
  ctx.ids[static_cast<std::size_t>(length) + 1] = sp.eos;
  std::fill(ctx.ids.begin() + (max_len + 2), ctx.ids.end(), sp.mask);
  return ctx;
}

template <typename T>
MpDecoder<T>::MpDecoder(ParamStore<T>& store, const ModelConfig& cfg, int vocab_rows, int classes, Rng& rng)
    : max_len_(cfg.max_len), pre_norm_(cfg.decoder.pre_norm) {
  const int d = cfg.dim();
  const double s = cfg.init_std;
  tok_ = &store.add("dec.tok", vocab_rows, d);
  fill_normal(tok_->value, s, rng);
  pos_ = &store.add("dec.pos", cfg.max_len + 2, d);
  fill_normal(pos_->value, s, rng);
  for (int l = 0; l < cfg.decoder.depth; ++l) {
    const std::string p = "dec.layers." + std::to_string(l);
    Layer layer;
    layer.ln_q = LayerNorm<T>::make(store, p + ".ln_q", d);
    layer.ln_c = LayerNorm<T>::make(store, p + ".ln_c", d);
    layer.context_attn = MultiHeadAttention<T>::make(store, p + ".context_attn", d, cfg.decoder.heads, s, rng);
    layer.ln_v = LayerNorm<T>::make(store, p + ".ln_v", d);
    layer.visual_attn = MultiHeadAttention<T>::make(store, p + ".visual_attn", d, cfg.decoder.heads, s, rng);
    layer.ln_m = LayerNorm<T>::make(store, p + ".ln_m", d);
    layer.mlp = Mlp<T>::make(store, p + ".mlp", d, d * cfg.decoder.mlp_ratio, s, rng);
    layers_.push_back(layer);
  }
  ln_out_ = LayerNorm<T>::make(store, "dec.ln_out", d);
  head_ = Linear<T>::make(store, "dec.head", d, classes, s, rng);
}

template <typename T>
Var MpDecoder<T>::forward(Graph<T>& g, Var visual, const ContextTokens& ctx, const BlockMask& mask, int blocks,
                          int slots, Var* first_attention) const {
  const int width = max_len_ + 2;
  if (ctx.max_len != max_len_ || static_cast<int>(ctx.ids.size()) != 2 * width) {
    throw ShapeError("context does not match decoder max length");
  }
  if (slots < 1 || slots > max_len_ + 1 || blocks < 1) throw ShapeError("invalid decoder query geometry");
  if (mask.rows != blocks * slots || mask.cols != 2 * width) {
    throw ShapeError("decoder mask is " + std::to_string(mask.rows) + "x" + std::to_string(mask.cols) +
                     ", expected " + std::to_string(blocks * slots) + "x" + std::to_string(2 * width));
  }
  std::vector<int> positions(static_cast<std::size_t>(2 * width));
  for (int i = 0; i < 2 * width; ++i) positions[i] = i % width;
  Var pos = g.param(*pos_);
  Var context = g.add(g.gather_rows(g.param(*tok_), ctx.ids), g.gather_rows(pos, positions));
  Var queries = g.slice_rows(pos, 1, slots);

  Var h;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    Var cn = norm(g, layer.ln_c, context);
    const auto& ca = layer.context_attn;
    Var q, residual;
    if (l == 0) {
      // Queries are identical across blocks; project once, then tile.
      q = g.tile_rows(ca.q(g, norm(g, layer.ln_q, queries)), blocks);
      residual = g.tile_rows(queries, blocks);
    } else {
      q = ca.q(g, norm(g, layer.ln_q, h));
      residual = h;
    }
    Var attn = g.attention(q, ca.k(g, cn), ca.v(g, cn), ca.heads, &mask);
    if (l == 0 && first_attention != nullptr) *first_attention = attn;
    Var hc = g.add(residual, ca.o(g, attn));
    Var hi = g.add(hc, layer.visual_attn(g, norm(g, layer.ln_v, hc), visual));
    h = g.add(hi, layer.mlp(g, norm(g, layer.ln_m, hi)));
  }
  return head_(g, norm(g, ln_out_, h));
}

template <typename T>
Model<T>::Model(ModelConfig cfg, std::uint64_t seed)
    : cfg_(std::move(cfg)),
      codec_(Charset(cfg_.charset), cfg_.max_len),
      store_(std::make_unique<ParamStore<T>>()) {
  cfg_.validate();
  Rng rng(seed);
  const double s = cfg_.init_std;
  encoder_ = VitEncoder<T>(*store_, cfg_.encoder, s, rng);
  word_head_ = WordLengthHead<T>(*store_, cfg_.dim(), cfg_.length_hidden_width(), cfg_.max_len, s, rng);
  if (has_char_length_head()) {
    char_head_ = CharLengthHead<T>(*store_, cfg_.dim(), cfg_.decoder.heads, cfg_.max_len, s, rng);
  }
  decoder_ = MpDecoder<T>(*store_, cfg_, codec_.specials().embedding_rows(), codec_.output_classes(), rng);
}

template <typename T>
VisualEncoding<T> Model<T>::encode(const Image& image) const {
  Graph<T> g(false);
  EncoderVars out = encoder_.forward(g, g.input(patchify<T>(image, cfg_.encoder)));
  return VisualEncoding<T>{g.value(out.length_token), g.value(out.visual)};
}

template <typename T>
Matrix<T> Model<T>::word_length_logits(const VisualEncoding<T>& enc) const {
  Graph<T> g(false);
  return g.value(word_head_.forward(g, g.input(enc.length_token)));
}

template <typename T>
Matrix<T> Model<T>::char_length_logits(const VisualEncoding<T>& enc) const {
  if (!has_char_length_head()) throw ConfigError("model has no character-level length head");
  Graph<T> g(false);
  return g.value(char_head_.forward(g, g.input(enc.visual)));
}

template <typename T>
int Model<T>::predict_length(const VisualEncoding<T>& enc) const {
  switch (cfg_.length_source) {
    case LengthSource::kWord: {
      Matrix<T> logits = word_length_logits(enc);
      return length_from_word_logits<T>(logits.row(0));
    }
    case LengthSource::kChar: return length_from_slot_logits(char_length_logits(enc));
    case LengthSource::kNone: return cfg_.max_len;
  }
  return cfg_.max_len;
}

template <typename T>
BlockMask Model<T>::decoder_mask(AttentionSchedule schedule, const PadMask& pad) const {
  if (!cfg_.mask_tokens) schedule.block_mask_side();
  return combine(schedule, pad);
}

template <typename T>
Matrix<T> Model<T>::decode(const VisualEncoding<T>& enc, const ContextTokens& ctx, const AttentionSchedule& schedule,
                           const PadMask& pad) const {
  Graph<T> g(false);
  Var logits =
      decoder_.forward(g, g.input(enc.visual), ctx, decoder_mask(schedule, pad), 1, cfg_.max_len + 1, nullptr);
  return g.value(logits);
}

template <typename T>
Matrix<T> Model<T>::decode_with_attention(const VisualEncoding<T>& enc, const ContextTokens& ctx,
                                          const AttentionSchedule& schedule, const PadMask& pad,
                                          std::vector<T>& attention) const {
  Graph<T> g(false);
  Var attn;
  Var logits =
      decoder_.forward(g, g.input(enc.visual), ctx, decoder_mask(schedule, pad), 1, cfg_.max_len + 1, &attn);
  attention = g.attention_probs(attn);
  return g.value(logits);
}

template <typename T>
void Model<T>::copy_values_from(const ParamStore<T>& other) {
  const auto& src = other.all();
  const auto& dst = store_->all();
  if (src.size() != dst.size()) throw ShapeError("parameter sets differ in size");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i]->name != dst[i]->name || !src[i]->value.same_shape(dst[i]->value)) {
      throw ShapeError("parameter mismatch at " + dst[i]->name);
    }
    dst[i]->value = src[i]->value;
  }
}

template Matrix<float> patchify<float>(const Image&, const EncoderConfig&);
template Matrix<double> patchify<double>(const Image&, const EncoderConfig&);
template int length_from_word_logits<float>(std::span<const float>);
template int length_from_word_logits<double>(std::span<const double>);
template int length_from_slot_logits<float>(const Matrix<float>&);
template int length_from_slot_logits<double>(const Matrix<double>&);
template class VitEncoder<float>;
template class VitEncoder<double>;
template class WordLengthHead<float>;
template class WordLengthHead<double>;
template class CharLengthHead<float>;
template class CharLengthHead<double>;
template class MpDecoder<float>;
template class MpDecoder<double>;
template class Model<float>;
template class Model<double>;

}  // namespace mpstr
