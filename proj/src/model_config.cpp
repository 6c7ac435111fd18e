#include "mpstr/model_config.hpp"

#include "mpstr/errors.hpp"

namespace mpstr {

std::string to_string(LengthSource s) {
  switch (s) {
    case LengthSource::kWord: return "word";
    case LengthSource::kChar: return "char";
    case LengthSource::kNone: return "none";
  }
  return "word";
}

LengthSource length_source_from_string(const std::string& s) {
  if (s == "word") return LengthSource::kWord;
  if (s == "char") return LengthSource::kChar;
  if (s == "none") return LengthSource::kNone;
  throw ConfigError("unknown length source '" + s + "' (expected word, char or none)");
}

void ModelConfig::validate() const {
  const auto& e = encoder;
  if (e.image_height <= 0 || e.image_width <= 0 || e.channels <= 0) throw ConfigError("image dims must be positive");
  if (e.patch_height <= 0 || e.patch_width <= 0) throw ConfigError("patch dims must be positive");
  if (e.image_height % e.patch_height != 0 || e.image_width % e.patch_width != 0) {
    throw ConfigError("image " + std::to_string(e.image_width) + "x" + std::to_string(e.image_height) +
                      " is not divisible into " + std::to_string(e.patch_width) + "x" +
                      std::to_string(e.patch_height) + " patches");
  }
  if (e.dim <= 0 || e.heads <= 0 || e.dim % e.heads != 0) throw ConfigError("encoder dim must be divisible by heads");
  if (decoder.heads <= 0 || e.dim % decoder.heads != 0) throw ConfigError("decoder dim must be divisible by heads");
  if (e.depth < 0 || decoder.depth < 1) throw ConfigError("invalid layer depth");
  if (e.mlp_ratio < 1 || decoder.mlp_ratio < 1) throw ConfigError("mlp_ratio must be >= 1");
  if (max_len < 1) throw ConfigError("max_len must be >= 1");
  if (charset.empty()) throw ConfigError("charset must not be empty");
}

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.encoder = EncoderConfig{32, 128, 3, 4, 8, 12, 6, 384, 4};
  c.decoder = DecoderConfig{12, 4, 1, true};
  c.max_len = 25;
  return c;
}

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.encoder = EncoderConfig{16, 64, 1, 4, 8, 2, 4, 64, 4};
  c.decoder = DecoderConfig{4, 2, 1, true};
  c.max_len = 8;
  return c;
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = {{"image_height", c.image_height}, {"image_width", c.image_width}, {"channels", c.channels},
       {"patch_height", c.patch_height}, {"patch_width", c.patch_width}, {"depth", c.depth},
       {"heads", c.heads},               {"dim", c.dim},                 {"mlp_ratio", c.mlp_ratio}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
  EncoderConfig d = c;
  c.image_height = j.value("image_height", d.image_height);
  c.image_width = j.value("image_width", d.image_width);
  c.channels = j.value("channels", d.channels);
  c.patch_height = j.value("patch_height", d.patch_height);
  c.patch_width = j.value("patch_width", d.patch_width);
  c.depth = j.value("depth", d.depth);
  c.heads = j.value("heads", d.heads);
  c.dim = j.value("dim", d.dim);
  c.mlp_ratio = j.value("mlp_ratio", d.mlp_ratio);
}

void to_json(nlohmann::json& j, const DecoderConfig& c) {
  j = {{"heads", c.heads}, {"mlp_ratio", c.mlp_ratio}, {"depth", c.depth}, {"pre_norm", c.pre_norm}};
}

void from_json(const nlohmann::json& j, DecoderConfig& c) {
  DecoderConfig d = c;
  c.heads = j.value("heads", d.heads);
  c.mlp_ratio = j.value("mlp_ratio", d.mlp_ratio);
  c.depth = j.value("depth", d.depth);
  c.pre_norm = j.value("pre_norm", d.pre_norm);
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"encoder", c.encoder},
       {"decoder", c.decoder},
       {"max_len", c.max_len},
       {"charset", c.charset},
       {"length_hidden", c.length_hidden},
       {"length_source", to_string(c.length_source)},
       {"mask_tokens", c.mask_tokens},
       {"init_std", c.init_std}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  if (j.contains("encoder")) j.at("encoder").get_to(c.encoder);
  if (j.contains("decoder")) j.at("decoder").get_to(c.decoder);
  c.max_len = j.value("max_len", c.max_len);
  c.charset = j.value("charset", c.charset);
  c.length_hidden = j.value("length_hidden", c.length_hidden);
  c.length_source = length_source_from_string(j.value("length_source", to_string(c.length_source)));
  c.mask_tokens = j.value("mask_tokens", c.mask_tokens);
  c.init_std = j.value("init_std", c.init_std);
}

}  // namespace mpstr
