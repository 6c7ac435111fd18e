#pragma once

#include <string>

#include <json.hpp>

namespace mpstr {

struct EncoderConfig {
  int image_height = 32;
  int image_width = 128;
  int channels = 1;
  int patch_height = 4;
  int patch_width = 8;
  int depth = 12;
  int heads = 6;
  int dim = 384;
  int mlp_ratio = 4;

  int grid_rows() const { return image_height / patch_height; }
  int grid_cols() const { return image_width / patch_width; }
  int num_patches() const { return grid_rows() * grid_cols(); }
  int patch_dim() const { return patch_height * patch_width * channels; }
};

struct DecoderConfig {
  int heads = 12;
  int mlp_ratio = 4;
  int depth = 1;
  // Layer norm in front of each decoder stage; off gives the bare residual form.
  bool pre_norm = true;
};

// Where the decoder's length L comes from at inference time.
enum class LengthSource {
  kWord,  // [len] token head
  kChar,  // per-slot "has a character" classifier
  kNone,  // no length: L = max_len, length head untrained
};

std::string to_string(LengthSource s);
LengthSource length_source_from_string(const std::string& s);

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  int max_len = 25;
  std::string charset = "0123456789abcdefghijklmnopqrstuvwxyz";
  // Hidden width of the word-length head; 0 means the model width.
  int length_hidden = 0;
  LengthSource length_source = LengthSource::kWord;
  // False for the mask-token-free variants (plain AR baseline, PLM only):
  // the mask half of the context is blocked everywhere.
  bool mask_tokens = true;
  double init_std = 0.02;

  int dim() const { return encoder.dim; }
  int length_hidden_width() const { return length_hidden > 0 ? length_hidden : encoder.dim; }

  // Throws ConfigError on inconsistent geometry.
  void validate() const;

  // 128x32 input, 8x4 patches, 12 layers, 6 heads, width 384, T = 25.
  static ModelConfig paper();
  // Desk-scale model used by the toy corpus.
  static ModelConfig toy();
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);
void to_json(nlohmann::json& j, const DecoderConfig& c);
void from_json(const nlohmann::json& j, DecoderConfig& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace mpstr
