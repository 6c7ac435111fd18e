#include "mpstr/inference.hpp"

#include <cmath>

#include "mpstr/errors.hpp"

namespace mpstr {

std::string to_string(DecodeMode m) { return m == DecodeMode::kAr ? "ar" : "nar"; }

DecodeMode decode_mode_from_string(const std::string& s) {
  if (s == "ar" || s == "AR") return DecodeMode::kAr;
  if (s == "nar" || s == "NAR") return DecodeMode::kNar;
  throw ConfigError("unknown decode mode '" + s + "' (expected ar or nar)");
}

DecodePolicy DecodePolicy::defaults(DecodeMode mode) {
  return DecodePolicy{mode, mode == DecodeMode::kAr ? 1 : 2};
}

double Recognition::mean_confidence() const {
  if (per_char_scores.empty()) return 0.0;
  double s = 0;
  for (double v : per_char_scores) s += v;
  return s / static_cast<double>(per_char_scores.size());
}

namespace {

struct Choice {
  int cls;
  double prob;
};

Choice pick(std::span<const float> row) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(row.size()); ++i)
    if (row[i] > row[best]) best = i;
  double sum = 0;
  for (float v : row) sum += std::exp(static_cast<double>(v) - row[best]);
  return {best, 1.0 / sum};
}

// Reads slots 0..last of `logits` into a recognition, stopping at the first EOS.
Recognition read_slots(const Model<float>& model, const Matrix<float>& logits, int last, int length_used,
                       DecodeMode mode) {
  const int eos = model.codec().specials().eos;
  Recognition r;
  r.length_used = length_used;
  r.mode = mode;
  bool ended = false;
  for (int s = 0; s <= last && s < model.max_len() + 1; ++s) {
    const Choice c = pick(logits.row(s));
    r.per_char_scores.push_back(c.prob);
    if (c.cls == eos) {
      ended = true;
      break;
    }
    if (static_cast<int>(r.text.size()) == model.max_len()) {
      r.per_char_scores.pop_back();
      break;
    }
    r.text += model.codec().charset().at(c.cls);
  }
  if (!ended) r.per_char_scores.push_back(0.0);
  return r;
}

Recognition refine(Recognition r, const Model<float>& model, const VisualEncoding<float>& enc, int iters) {
  for (int i = 0; i < iters; ++i) r = cloze_refine(r, model, enc);
  return r;
}

}  // namespace

Recognition recognize_nar(const Model<float>& model, const VisualEncoding<float>& enc, int refine_iters) {
  const int max_len = model.max_len();
  const int len = model.predict_length(enc);
  const ContextTokens ctx = build_context({}, len, max_len, model.codec().specials());
  const Matrix<float> logits = model.decode(enc, ctx, build_nar_mask(len, max_len), build_pad_mask(len, max_len));
  return refine(read_slots(model, logits, len, len, DecodeMode::kNar), model, enc, refine_iters);
}

Recognition recognize_ar(const Model<float>& model, const VisualEncoding<float>& enc, int refine_iters) {
  const int max_len = model.max_len();
  const int len = model.predict_length(enc);
  const int eos = model.codec().specials().eos;
  const AttentionSchedule schedule = build_ar_infer_mask(len, max_len);
  const PadMask pad = build_pad_mask(len, max_len);
  Recognition r;
  r.length_used = len;
  r.mode = DecodeMode::kAr;
  std::vector<int> tokens;
  bool ended = false;
  for (int slot = 0; slot <= len; ++slot) {
    const ContextTokens ctx = build_context(tokens, len, max_len, model.codec().specials());
    const Matrix<float> logits = model.decode(enc, ctx, schedule, pad);
    const Choice c = pick(logits.row(slot));
    r.per_char_scores.push_back(c.prob);
    if (c.cls == eos) {
      ended = true;
      break;
    }
    if (slot == len) {
      // Slot L+1 produced a character: keep it (EOS is trusted over L) unless
      // the text is already at the maximum length.
      if (len < max_len) r.text += model.codec().charset().at(c.cls);
      else r.per_char_scores.pop_back();
      break;
    }
    tokens.push_back(c.cls);
    r.text += model.codec().charset().at(c.cls);
  }
  if (!ended) r.per_char_scores.push_back(0.0);
  return refine(std::move(r), model, enc, refine_iters);
}

Recognition cloze_refine(const Recognition& prev, const Model<float>& model, const VisualEncoding<float>& enc) {
  if (prev.text.empty()) return prev;
  const int max_len = model.max_len();
  const int len = static_cast<int>(prev.text.size());
  const LabelSequence ids = model.codec().encode(prev.text);
  const ContextTokens ctx = build_context(ids.ids, len, max_len, model.codec().specials());
  const Matrix<float> logits = model.decode(enc, ctx, build_cloze_mask(len, max_len), build_pad_mask(len, max_len));
  return read_slots(model, logits, len, len, prev.mode);
}

Recognition recognize(const Model<float>& model, const Image& image, const DecodePolicy& policy) {
  if (policy.refine_iters < 0) throw ConfigError("refine_iters must be >= 0");
  const VisualEncoding<float> enc = model.encode(image);
  return policy.mode == DecodeMode::kAr ? recognize_ar(model, enc, policy.refine_iters)
                                        : recognize_nar(model, enc, policy.refine_iters);
}

}  // namespace mpstr
