#pragma once

#include <string>
#include <vector>

#include "mpstr/model.hpp"

namespace mpstr {

enum class DecodeMode { kAr, kNar };

std::string to_string(DecodeMode m);
// "ar" / "nar"; throws ConfigError otherwise.
DecodeMode decode_mode_from_string(const std::string& s);

struct DecodePolicy {
  DecodeMode mode = DecodeMode::kNar;
  int refine_iters = 2;

  // AR -> 1 refinement, NAR -> 2.
  static DecodePolicy defaults(DecodeMode mode);
};

struct Recognition {
  std::string text;
  int length_used = 0;
  // Softmax probability of each chosen character, then of the EOS slot
  // (0 when decoding stopped at T without predicting EOS).
  std::vector<double> per_char_scores;
  DecodeMode mode = DecodeMode::kNar;

  double mean_confidence() const;
};

// All tokens at once from [B] and L+1 mask tokens, then refine_iters cloze passes.
Recognition recognize_nar(const Model<float>& model, const VisualEncoding<float>& enc, int refine_iters);
// One token per pass, left to right, until EOS or slot L+1; then refinement.
Recognition recognize_ar(const Model<float>& model, const VisualEncoding<float>& enc, int refine_iters);
// Re-predicts every slot from the previous text with the cloze schedule.
// Empty previous text is returned unchanged.
Recognition cloze_refine(const Recognition& prev, const Model<float>& model, const VisualEncoding<float>& enc);

Recognition recognize(const Model<float>& model, const Image& image, const DecodePolicy& policy);

}  // namespace mpstr
