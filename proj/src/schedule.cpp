#include "mpstr/schedule.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "mpstr/errors.hpp"

namespace mpstr {

namespace {

void check_length(int length, int max_len) {
  if (max_len < 1) throw LengthError("max length must be >= 1");
  if (length < 1) throw LengthError("length " + std::to_string(length) + " is below 1");
  if (length > max_len) {
    throw LengthError("length " + std::to_string(length) + " exceeds max length " + std::to_string(max_len));
  }
}

}  // namespace

Permutation identity_permutation(int length) {
  Permutation p;
  p.order.resize(static_cast<std::size_t>(length));
  std::iota(p.order.begin(), p.order.end(), 1);
  return p;
}

Permutation reversed(const Permutation& p) {
  Permutation r = p;
  std::reverse(r.order.begin(), r.order.end());
  return r;
}

Permutation restrict_to(const Permutation& p, int length) {
  Permutation r;
  for (int pos : p.order)
    if (pos <= length) r.order.push_back(pos);
  return r;
}

bool is_permutation_of_1_to_n(const Permutation& p) {
  std::vector<int> sorted = p.order;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i)
    if (sorted[i] != static_cast<int>(i) + 1) return false;
  return true;
}

std::vector<Permutation> sample_permutations(int k, int length, Rng& rng) {
  if (k < 1) throw ConfigError("permutation count must be >= 1");
  if (length < 1) throw LengthError("permutation length must be >= 1");
  std::vector<Permutation> out;
  out.reserve(static_cast<std::size_t>(k));
  out.push_back(identity_permutation(length));
  while (static_cast<int>(out.size()) < k) {
    Permutation p = identity_permutation(length);
    for (int i = length - 1; i > 0; --i) {
      const auto j = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(i) + 1));
      std::swap(p.order[i], p.order[j]);
    }
    out.push_back(p);
    if (static_cast<int>(out.size()) < k) out.push_back(reversed(p));
  }
  return out;
}

AttentionSchedule::AttentionSchedule(int length, int max_len)
    : length_(length),
      max_len_(max_len),
      word_(static_cast<std::size_t>(max_len + 1) * (max_len + 2), 1),
      mask_(static_cast<std::size_t>(max_len + 1) * (max_len + 2), 1) {}

void AttentionSchedule::block_mask_side() { std::fill(mask_.begin(), mask_.end(), 1); }

std::string AttentionSchedule::to_text(int row_limit, int col_limit) const {
  const int nr = row_limit < 0 ? rows() : std::min(row_limit, rows());
  const int nc = col_limit < 0 ? cols() : std::min(col_limit, cols());
  std::ostringstream os;
  for (int r = 0; r < nr; ++r) {
    for (int c = 0; c < nc; ++c) os << (c ? " " : "") << int(word_blocked(r, c));
    for (int c = 0; c < nc; ++c) os << ' ' << int(mask_blocked(r, c));
    os << '\n';
  }
  return os.str();
}

AttentionSchedule build_train_mask(const Permutation& perm, int length, int max_len) {
  return build_train_mask(perm, length, length, max_len);
}

AttentionSchedule build_train_mask(const Permutation& perm, int length, int mask_len, int max_len) {
  check_length(length, max_len);
  check_length(mask_len, max_len);
  if (perm.length() != length || !is_permutation_of_1_to_n(perm)) {
    throw LengthError("permutation is not a permutation of 1.." + std::to_string(length));
  }
  AttentionSchedule s(length, max_len);
  // decoded[pos] once position pos has been emitted earlier in the order
  std::vector<bool> decoded(static_cast<std::size_t>(max_len + 2), false);
  auto fill_row = [&](int row) {
    s.set_word(row, 0, false);
    for (int pos = 1; pos <= length; ++pos)
      if (decoded[pos]) s.set_word(row, pos, false);
    for (int pos = 1; pos <= mask_len + 1; ++pos)
      if (!decoded[pos]) s.set_mask(row, pos, false);
  };
  for (int pos : perm.order) {
    fill_row(pos - 1);
    decoded[pos] = true;
  }
  fill_row(length);
  return s;
}

AttentionSchedule build_ar_infer_mask(int length, int max_len) {
  check_length(length, max_len);
  return build_train_mask(identity_permutation(length), length, max_len);
}

AttentionSchedule build_nar_mask(int length, int max_len) {
  check_length(length, max_len);
  AttentionSchedule s(length, max_len);
  for (int row = 0; row <= length; ++row) {
    s.set_word(row, 0, false);
    for (int pos = 1; pos <= length + 1; ++pos) s.set_mask(row, pos, false);
  }
  return s;
}

AttentionSchedule build_cloze_mask(int length, int max_len) {
  check_length(length, max_len);
  AttentionSchedule s(length, max_len);
  for (int row = 0; row <= length; ++row) {
    const int pos = row + 1;
    for (int col = 0; col <= length + 1; ++col)
      if (col != pos) s.set_word(row, col, false);
    s.set_mask(row, pos, false);
  }
  return s;
}

PadMask build_pad_mask(int length, int max_len) {
  check_length(length, max_len);
  PadMask p;
  p.word_pad.assign(static_cast<std::size_t>(max_len + 2), 0);
  std::fill_n(p.word_pad.begin(), length + 2, 1);
  p.mask_pad = p.word_pad;
  return p;
}

BlockMask combine(const AttentionSchedule& schedule, const PadMask& pad) {
  const int nc = schedule.cols();
  if (static_cast<int>(pad.word_pad.size()) != nc || static_cast<int>(pad.mask_pad.size()) != nc) {
    throw ShapeError("pad mask width does not match schedule");
  }
  BlockMask m(schedule.rows(), 2 * nc);
  for (int r = 0; r < schedule.rows(); ++r) {
    for (int c = 0; c < nc; ++c) {
      m.set(r, c, schedule.word_blocked(r, c) || pad.word_pad[c] == 0);
      m.set(r, nc + c, schedule.mask_blocked(r, c) || pad.mask_pad[c] == 0);
    }
  }
  return m;
}

BlockMask stack(const std::vector<BlockMask>& parts) {
  if (parts.empty()) throw ShapeError("stack: no masks");
  const int cols = parts.front().cols;
  int rows = 0;
  for (const auto& p : parts) {
    if (p.cols != cols) throw ShapeError("stack: column mismatch");
    rows += p.rows;
  }
  BlockMask out(rows, cols);
  auto it = out.blocked.begin();
  for (const auto& p : parts) it = std::copy(p.blocked.begin(), p.blocked.end(), it);
  return out;
}

}  // namespace mpstr
