#include "mpstr/toy_data.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "mpstr/errors.hpp"
#include "mpstr/rng.hpp"

namespace mpstr {

namespace {

// Classic 5x7 dot-matrix rows, most significant of 5 bits on the left.
// Letters use their capital forms.
struct GlyphRows {
  char c;
  const char* rows[7];
};

constexpr GlyphRows kGlyphs[] = {
    {'0', {"01110", "10001", "10011", "10101", "11001", "10001", "01110"}},
    {'1', {"00100", "01100", "00100", "00100", "00100", "00100", "01110"}},
    {'2', {"01110", "10001", "00001", "00010", "00100", "01000", "11111"}},
    {'3', {"11111", "00010", "00100", "00010", "00001", "10001", "01110"}},
    {'4', {"00010", "00110", "01010", "10010", "11111", "00010", "00010"}},
    {'5', {"11111", "10000", "11110", "00001", "00001", "10001", "01110"}},
    {'6', {"00110", "01000", "10000", "11110", "10001", "10001", "01110"}},
    {'7', {"11111", "00001", "00010", "00100", "01000", "01000", "01000"}},
    {'8', {"01110", "10001", "10001", "01110", "10001", "10001", "01110"}},
    {'9', {"01110", "10001", "10001", "01111", "00001", "00010", "01100"}},
    {'a', {"01110", "10001", "10001", "10001", "11111", "10001", "10001"}},
    {'b', {"11110", "10001", "10001", "11110", "10001", "10001", "11110"}},
    {'c', {"01110", "10001", "10000", "10000", "10000", "10001", "01110"}},
    {'d', {"11100", "10010", "10001", "10001", "10001", "10010", "11100"}},
    {'e', {"11111", "10000", "10000", "11110", "10000", "10000", "11111"}},
    {'f', {"11111", "10000", "10000", "11110", "10000", "10000", "10000"}},
    {'g', {"01110", "10001", "10000", "10111", "10001", "10001", "01111"}},
    {'h', {"10001", "10001", "10001", "11111", "10001", "10001", "10001"}},
    {'i', {"01110", "00100", "00100", "00100", "00100", "00100", "01110"}},
    {'j', {"00111", "00010", "00010", "00010", "00010", "10010", "01100"}},
    {'k', {"10001", "10010", "10100", "11000", "10100", "10010", "10001"}},
    {'l', {"10000", "10000", "10000", "10000", "10000", "10000", "11111"}},
    {'m', {"10001", "11011", "10101", "10101", "10001", "10001", "10001"}},
    {'n', {"10001", "10001", "11001", "10101", "10011", "10001", "10001"}},
    {'o', {"01110", "10001", "10001", "10001", "10001", "10001", "01110"}},
    {'p', {"11110", "10001", "10001", "11110", "10000", "10000", "10000"}},
    {'q', {"01110", "10001", "10001", "10001", "10101", "10010", "01101"}},
    {'r', {"11110", "10001", "10001", "11110", "10100", "10010", "10001"}},
    {'s', {"01111", "10000", "10000", "01110", "00001", "00001", "11110"}},
    {'t', {"11111", "00100", "00100", "00100", "00100", "00100", "00100"}},
    {'u', {"10001", "10001", "10001", "10001", "10001", "10001", "01110"}},
    {'v', {"10001", "10001", "10001", "10001", "10001", "01010", "00100"}},
    {'w', {"10001", "10001", "10001", "10101", "10101", "10101", "01010"}},
    {'x', {"10001", "10001", "01010", "00100", "01010", "10001", "10001"}},
    {'y', {"10001", "10001", "10001", "01010", "00100", "00100", "00100"}},
    {'z', {"11111", "00001", "00010", "00100", "01000", "10000", "11111"}},
};

std::uint8_t to_pixel(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0))); }

std::vector<double> to_double(const Image& img) { return {img.pixels.begin(), img.pixels.end()}; }

void rotate(std::vector<double>& px, int w, int h, double degrees) {
  const double a = degrees * std::numbers::pi / 180.0;
  const double ca = std::cos(a), sa = std::sin(a);
  const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
  std::vector<double> out(px.size(), 0.0);
  auto sample = [&](int x, int y) { return x < 0 || y < 0 || x >= w || y >= h ? 0.0 : px[y * w + x]; };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      // inverse map the destination pixel into the source
      const double dx = x - cx, dy = y - cy;
      const double sx = ca * dx + sa * dy + cx;
      const double sy = -sa * dx + ca * dy + cy;
      const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0, fy = sy - y0;
      out[y * w + x] = (1 - fy) * ((1 - fx) * sample(x0, y0) + fx * sample(x0 + 1, y0)) +
                       fy * ((1 - fx) * sample(x0, y0 + 1) + fx * sample(x0 + 1, y0 + 1));
    }
  px.swap(out);
}

void gaussian_blur(std::vector<double>& px, int w, int h, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) sum += k[i + radius] = std::exp(-(i * i) / (2 * sigma * sigma));
  for (double& v : k) v /= sum;
  std::vector<double> tmp(px.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * px[y * w + std::clamp(x + i, 0, w - 1)];
      tmp[y * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp[std::clamp(y + i, 0, h - 1) * w + x];
      px[y * w + x] = acc;
    }
}

// Knuth's multiplication method; lambda stays small (<= 255 / scale).
int poisson(Rng& rng, double lambda) {
  const double limit = std::exp(-lambda);
  int k = 0;
  double p = uniform01(rng);
  while (p > limit) {
    ++k;
    p *= uniform01(rng);
  }
  return k;
}

void validate(const GenConfig& cfg) {
  if (cfg.count < 1) throw ConfigError("sample count must be >= 1");
  if (cfg.min_len < 1 || cfg.max_len < cfg.min_len) throw ConfigError("word lengths must satisfy 1 <= min <= max");
  if (cfg.charset.empty()) throw ConfigError("charset must not be empty");
  if (cfg.render.jitter < 0) throw ConfigError("render.jitter must be >= 0");
  for (char c : cfg.charset)
    if (!GlyphAtlas::builtin().has(c)) throw ConfigError(std::string("no glyph for character '") + c + "'");
  const RenderParams& r = cfg.render;
  if (r.margin + (cfg.max_len - 1) * r.advance + GlyphAtlas::kWidth > r.width || r.height < GlyphAtlas::kHeight) {
    throw ConfigError("a " + std::to_string(cfg.max_len) + "-character word does not fit a " +
                      std::to_string(r.width) + "x" + std::to_string(r.height) + " canvas");
  }
}

}  // namespace

GlyphAtlas::GlyphAtlas() {
  for (const GlyphRows& g : kGlyphs) {
    Bitmap& b = bitmaps_[static_cast<unsigned char>(g.c)];
    for (int y = 0; y < kHeight; ++y)
      for (int x = 0; x < kWidth; ++x) b[y * kWidth + x] = g.rows[y][x] == '1' ? 1 : 0;
    present_[static_cast<unsigned char>(g.c)] = true;
  }
}

const GlyphAtlas& GlyphAtlas::builtin() {
  static const GlyphAtlas atlas;
  return atlas;
}

bool GlyphAtlas::has(char c) const { return present_[static_cast<unsigned char>(c)]; }

const GlyphAtlas::Bitmap& GlyphAtlas::glyph(char c) const {
  if (!has(c)) throw ConfigError(std::string("no glyph for character '") + c + "'");
  return bitmaps_[static_cast<unsigned char>(c)];
}

Image render_word(const std::string& word, const RenderParams& params) {
  const int n = static_cast<int>(word.size());
  if (n > 0 && params.margin + (n - 1) * params.advance + GlyphAtlas::kWidth > params.width) {
    throw LengthError("word '" + word + "' does not fit a " + std::to_string(params.width) + " px canvas");
  }
  if (params.height < GlyphAtlas::kHeight) throw LengthError("canvas shorter than a glyph");
  Image img(params.width, params.height, 1, 0);
  const int y0 = (params.height - GlyphAtlas::kHeight) / 2;
  const GlyphAtlas& atlas = GlyphAtlas::builtin();
  for (int i = 0; i < n; ++i) {
    const auto& g = atlas.glyph(word[static_cast<std::size_t>(i)]);
    const int x0 = params.margin + i * params.advance;
    for (int y = 0; y < GlyphAtlas::kHeight; ++y)
      for (int x = 0; x < GlyphAtlas::kWidth; ++x)
        if (g[y * GlyphAtlas::kWidth + x]) img.at(x0 + x, y0 + y) = 255;
  }
  return img;
}

Image augment(const Image& image, std::uint64_t seed, const AugmentParams& params) {
  if (!params.any()) return image;
  if (image.channels != 1) throw ShapeError("augmentation expects a grayscale image");
  Rng rng(seed);
  const bool do_rotate = uniform01(rng) < params.rotate_prob;
  const double angle = (2 * uniform01(rng) - 1) * params.max_rotation_deg;
  const bool do_blur = uniform01(rng) < params.blur_prob;
  const double sigma = params.blur_sigma_min + uniform01(rng) * (params.blur_sigma_max - params.blur_sigma_min);
  const bool do_noise = uniform01(rng) < params.noise_prob;

  std::vector<double> px = to_double(image);
  if (do_rotate) rotate(px, image.width, image.height, angle);
  if (do_blur && sigma > 0) gaussian_blur(px, image.width, image.height, sigma);
  if (do_noise && params.noise_scale > 0) {
    for (double& v : px) v = params.noise_scale * poisson(rng, std::clamp(v, 0.0, 255.0) / params.noise_scale);
  }
  Image out = image;
  for (std::size_t i = 0; i < px.size(); ++i) out.pixels[i] = to_pixel(px[i]);
  return out;
}

void to_json(nlohmann::json& j, const GenConfig& c) {
  j = {{"count", c.count},
       {"min_len", c.min_len},
       {"max_len", c.max_len},
       {"seed", c.seed},
       {"split", c.split},
       {"charset", c.charset},
       {"render", {{"width", c.render.width}, {"height", c.render.height}, {"margin", c.render.margin},
                   {"advance", c.render.advance}, {"jitter", c.render.jitter}}},
       {"augment", {{"blur_prob", c.augment.blur_prob}, {"blur_sigma_min", c.augment.blur_sigma_min},
                    {"blur_sigma_max", c.augment.blur_sigma_max}, {"noise_prob", c.augment.noise_prob},
                    {"noise_scale", c.augment.noise_scale}, {"rotate_prob", c.augment.rotate_prob},
                    {"max_rotation_deg", c.augment.max_rotation_deg}}}};
}

void from_json(const nlohmann::json& j, GenConfig& c) {
  const GenConfig d = c;
  c.count = j.value("count", d.count);
  c.min_len = j.value("min_len", d.min_len);
  c.max_len = j.value("max_len", d.max_len);
  c.seed = j.value("seed", d.seed);
  c.split = j.value("split", d.split);
  c.charset = j.value("charset", d.charset);
  if (j.contains("render")) {
    const auto& r = j.at("render");
    c.render.width = r.value("width", d.render.width);
    c.render.height = r.value("height", d.render.height);
    c.render.margin = r.value("margin", d.render.margin);
    c.render.advance = r.value("advance", d.render.advance);
    c.render.jitter = r.value("jitter", d.render.jitter);
  }
  if (j.contains("augment")) {
    const auto& a = j.at("augment");
    c.augment.blur_prob = a.value("blur_prob", d.augment.blur_prob);
    c.augment.blur_sigma_min = a.value("blur_sigma_min", d.augment.blur_sigma_min);
    c.augment.blur_sigma_max = a.value("blur_sigma_max", d.augment.blur_sigma_max);
    c.augment.noise_prob = a.value("noise_prob", d.augment.noise_prob);
    c.augment.noise_scale = a.value("noise_scale", d.augment.noise_scale);
    c.augment.rotate_prob = a.value("rotate_prob", d.augment.rotate_prob);
    c.augment.max_rotation_deg = a.value("max_rotation_deg", d.augment.max_rotation_deg);
  }
}

std::string sample_word(const GenConfig& cfg, std::uint64_t index) {
  Rng rng(derive_seed(cfg.seed, index));
  const auto span = static_cast<std::uint64_t>(cfg.max_len - cfg.min_len + 1);
  const int len = cfg.min_len + static_cast<int>(uniform_index(rng, span));
  std::string word;
  for (int i = 0; i < len; ++i) word += cfg.charset[uniform_index(rng, cfg.charset.size())];
  return word;
}

DatasetManifest generate_dataset(const GenConfig& cfg, const std::filesystem::path& out_dir) {
  validate(cfg);
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  if (ec) throw IoError("cannot create dataset directory " + out_dir.string() + ": " + ec.message());

  DatasetManifest manifest;
  manifest.split = cfg.split;
  char name[32];
  for (int i = 0; i < cfg.count; ++i) {
    const std::string word = sample_word(cfg, static_cast<std::uint64_t>(i));
    RenderParams rp = cfg.render;
    if (rp.jitter > 0 && !word.empty()) {
      const int n = static_cast<int>(word.size());
      const int slack = rp.width - (rp.margin + (n - 1) * rp.advance + GlyphAtlas::kWidth);
      Rng jr(derive_seed(derive_seed(cfg.seed, static_cast<std::uint64_t>(i)), 2));
      rp.margin += static_cast<int>(uniform_index(jr, static_cast<std::uint64_t>(std::min(rp.jitter, slack)) + 1));
    }
    Image img = render_word(word, rp);
    img = augment(img, derive_seed(derive_seed(cfg.seed, static_cast<std::uint64_t>(i)), 1), cfg.augment);
    std::snprintf(name, sizeof name, "images/%06d.pgm", i);
    write_pgm(out_dir / name, img);
    manifest.rows.push_back({name, word});
  }

  std::ofstream tsv(out_dir / "manifest.tsv", std::ios::binary | std::ios::trunc);
  if (!tsv) throw IoError("cannot write " + (out_dir / "manifest.tsv").string());
  for (const ManifestRow& r : manifest.rows) tsv << r.filename << '\t' << r.label << '\n';
  Charset(cfg.charset).save(out_dir / "charset.txt");
  std::ofstream gen(out_dir / "gen-config.json", std::ios::binary | std::ios::trunc);
  if (!gen) throw IoError("cannot write " + (out_dir / "gen-config.json").string());
  gen << nlohmann::json(cfg).dump(2) << '\n';
  return manifest;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset data;
  data.root = dir;
  const auto manifest_path = dir / "manifest.tsv";
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest " + manifest_path.string());
  if (std::filesystem::exists(dir / "charset.txt")) data.charset = Charset::load(dir / "charset.txt");
  std::set<std::string> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw IoError(manifest_path.string() + ":" + std::to_string(line_no) + ": expected filename<TAB>label");
    }
    Sample s;
    s.filename = line.substr(0, tab);
    s.label = line.substr(tab + 1);
    if (!seen.insert(s.filename).second) {
      throw IoError(manifest_path.string() + ":" + std::to_string(line_no) + ": duplicate filename " + s.filename);
    }
    s.image = read_pgm(dir / s.filename);
    data.samples.push_back(std::move(s));
  }
  return data;
}

}  // namespace mpstr
