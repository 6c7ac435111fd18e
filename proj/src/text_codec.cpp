#include "mpstr/text_codec.hpp"

#include <cctype>
#include <fstream>

#include "mpstr/errors.hpp"

namespace mpstr {

Charset Charset::default36() { return Charset("0123456789abcdefghijklmnopqrstuvwxyz"); }

Charset::Charset(std::string characters) : chars_(std::move(characters)) {
  lookup_.fill(-1);
  if (chars_.empty()) throw ConfigError("charset is empty");
  for (std::size_t i = 0; i < chars_.size(); ++i) {
    auto& slot = lookup_[static_cast<unsigned char>(chars_[i])];
    if (slot >= 0) throw ConfigError(std::string("duplicate charset character '") + chars_[i] + "'");
    slot = static_cast<int>(i);
  }
}

void Charset::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write charset file " + path.string());
  out << chars_ << '\n';
}

Charset Charset::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read charset file " + path.string());
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return Charset(line);
}

TextCodec::TextCodec(Charset charset, int max_len)
    : charset_(std::move(charset)), specials_(SpecialTokens::after(charset_)), max_len_(max_len) {
  if (max_len < 1) throw ConfigError("max_len must be >= 1");
}

std::string TextCodec::normalize(std::string_view raw) const {
  std::string out;
  out.reserve(raw.size());
  for (char c : raw) {
    const char lower = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (charset_.contains(lower)) out.push_back(lower);
  }
  return out;
}

LabelSequence TextCodec::encode(std::string_view text) const {
  if (text.empty()) throw LengthError("cannot encode empty text");
  if (static_cast<int>(text.size()) > max_len_) {
    throw LengthError("text '" + std::string(text) + "' exceeds max length " + std::to_string(max_len_));
  }
  LabelSequence seq;
  seq.ids.reserve(text.size());
  for (char c : text) {
    const int id = charset_.index_of(c);
    if (id < 0) throw LengthError(std::string("character '") + c + "' is not in the charset");
    seq.ids.push_back(id);
  }
  return seq;
}

std::string TextCodec::decode(std::span<const int> class_ids) const {
  std::string out;
  for (int id : class_ids) {
    if (id == specials_.eos) break;
    if (id >= 0 && id < charset_.size()) out.push_back(charset_.at(id));
  }
  return out;
}

}  // namespace mpstr
