#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mpstr {

// Ordered character inventory. Character ids are indices into this list.
class Charset {
 public:
  // '0'..'9' then 'a'..'z'.
  static Charset default36();
  explicit Charset(std::string characters);

  int size() const { return static_cast<int>(chars_.size()); }
  const std::string& characters() const { return chars_; }
  bool contains(char c) const { return index_of(c) >= 0; }
  // -1 when absent.
  int index_of(char c) const { return lookup_[static_cast<unsigned char>(c)]; }
  char at(int id) const { return chars_.at(static_cast<std::size_t>(id)); }

  // Single line, characters in order, trailing LF.
  void save(const std::filesystem::path& path) const;
  static Charset load(const std::filesystem::path& path);

  friend bool operator==(const Charset& a, const Charset& b) { return a.chars_ == b.chars_; }

 private:
  std::string chars_;
  std::array<int, 256> lookup_{};
};

// Embedding-table ids of the special tokens. Characters occupy
// [0, charset.size()); the specials follow. The output head predicts
// characters plus [E], so [E] is placed first and its id doubles as the
// end-of-sequence class index.
struct SpecialTokens {
  int eos = 0;
  int bos = 0;
  int pad = 0;
  int mask = 0;

  static SpecialTokens after(const Charset& cs) {
    const int n = cs.size();
    return SpecialTokens{n, n + 1, n + 2, n + 3};
  }
  int embedding_rows() const { return mask + 1; }
  int output_classes() const { return eos + 1; }
};

struct LabelSequence {
  std::vector<int> ids;
  int length() const { return static_cast<int>(ids.size()); }
};

class TextCodec {
 public:
  TextCodec(Charset charset, int max_len);

  const Charset& charset() const { return charset_; }
  const SpecialTokens& specials() const { return specials_; }
  int max_len() const { return max_len_; }
  int output_classes() const { return specials_.output_classes(); }

  // Lowercases and drops characters outside the charset.
  std::string normalize(std::string_view raw) const;
  // Throws LengthError for empty or over-length text, or text with
  // characters outside the charset.
  LabelSequence encode(std::string_view text) const;
  // Characters up to (not including) the first end-of-sequence class.
  std::string decode(std::span<const int> class_ids) const;

 private:
  Charset charset_;
  SpecialTokens specials_;
  int max_len_;
};

}  // namespace mpstr
