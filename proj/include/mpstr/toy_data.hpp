#pragma once

// Synthetic word images drawn from a built-in dot-matrix glyph atlas.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mpstr/image.hpp"
#include "mpstr/text_codec.hpp"

namespace mpstr {

// 5 x 7 bitmaps, one per character of the default 36-character set.
class GlyphAtlas {
 public:
  static constexpr int kWidth = 5;
  static constexpr int kHeight = 7;
  using Bitmap = std::array<std::uint8_t, kWidth * kHeight>;

  static const GlyphAtlas& builtin();
  // Throws ConfigError for characters without a glyph.
  const Bitmap& glyph(char c) const;
  bool has(char c) const;

 private:
  GlyphAtlas();
  std::array<Bitmap, 256> bitmaps_{};
  std::array<bool, 256> present_{};
};

struct AugmentParams {
  double blur_prob = 0.0;
  double blur_sigma_min = 0.4;
  double blur_sigma_max = 0.9;
  double noise_prob = 0.0;
  double noise_scale = 8.0;  // photon count per unit intensity is 255 / scale
  double rotate_prob = 0.0;
  double max_rotation_deg = 15.0;

  bool any() const { return blur_prob > 0 || noise_prob > 0 || rotate_prob > 0; }
};

struct RenderParams {
  int width = 64;
  int height = 16;
  int margin = 2;
  int advance = 6;  // glyph width plus one column of spacing
  // generation only: up to this many extra px of left margin per sample,
  // capped by the space the word leaves free
  int jitter = 0;
};

// Glyphs left to right from the margin, vertically centred, white on black.
// Throws LengthError when the word does not fit the canvas.
Image render_word(const std::string& word, const RenderParams& params);

// Each enabled effect is gated by its own seeded coin flip.
Image augment(const Image& image, std::uint64_t seed, const AugmentParams& params);

struct GenConfig {
  int count = 2000;
  int min_len = 1;
  int max_len = 8;
  std::uint64_t seed = 7;
  std::string split = "train";
  std::string charset = "0123456789abcdefghijklmnopqrstuvwxyz";
  RenderParams render;
  AugmentParams augment;
};

void to_json(nlohmann::json& j, const GenConfig& c);
void from_json(const nlohmann::json& j, GenConfig& c);

struct ManifestRow {
  std::string filename;  // relative to the dataset directory
  std::string label;
};

struct DatasetManifest {
  std::string split;
  std::vector<ManifestRow> rows;
};

// Word for sample `index`: uniform length in [min_len, max_len], uniform
// characters. Pure function of (config, index).
std::string sample_word(const GenConfig& cfg, std::uint64_t index);

// Writes images/, manifest.tsv, charset.txt and gen-config.json under
// out_dir. Throws IoError / ConfigError.
DatasetManifest generate_dataset(const GenConfig& cfg, const std::filesystem::path& out_dir);

struct Sample {
  std::string filename;
  std::string label;
  Image image;
};

struct Dataset {
  std::filesystem::path root;
  Charset charset = Charset::default36();
  std::vector<Sample> samples;  // manifest order
};

// Reads manifest.tsv (and charset.txt when present). Throws IoError.
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace mpstr
