#pragma once

// Permutation sampling and every attention/padding mask the decoder sees.
//
// Layout: a schedule has one row per decoder query slot (row r is the query
// for position r+1, row L is the end-of-sequence slot) and T+2 columns per
// context half. Word-side column 0 is [B], 1..L the characters, L+1 is [E];
// mask-side column j is the [M] token sharing position j. Entries use
// 1 = blocked, 0 = attendable throughout.

#include <cstdint>
#include <string>
#include <vector>

#include "mpstr/autograd.hpp"
#include "mpstr/rng.hpp"

namespace mpstr {

// A decode order over character positions 1..L. The end-of-sequence slot is
// never part of the order; it is always decoded last.
struct Permutation {
  std::vector<int> order;
  int length() const { return static_cast<int>(order.size()); }
  friend bool operator==(const Permutation&, const Permutation&) = default;
};

Permutation identity_permutation(int length);
Permutation reversed(const Permutation& p);
// Keeps positions <= length, preserving relative order.
Permutation restrict_to(const Permutation& p, int length);
bool is_permutation_of_1_to_n(const Permutation& p);

// Identity first, then (random, reverse-of-random) pairs until k are drawn.
std::vector<Permutation> sample_permutations(int k, int length, Rng& rng);

class AttentionSchedule {
 public:
  AttentionSchedule(int length, int max_len);

  int length() const { return length_; }
  int max_len() const { return max_len_; }
  int rows() const { return max_len_ + 1; }
  int cols() const { return max_len_ + 2; }
  // Query rows that carry a real decode step: the L characters plus [E].
  int valid_rows() const { return length_ + 1; }

  bool word_blocked(int row, int col) const { return word_[index(row, col)] != 0; }
  bool mask_blocked(int row, int col) const { return mask_[index(row, col)] != 0; }
  void set_word(int row, int col, bool blocked) { word_[index(row, col)] = blocked ? 1 : 0; }
  void set_mask(int row, int col, bool blocked) { mask_[index(row, col)] = blocked ? 1 : 0; }

  // Blocks every mask-side entry (models trained without mask tokens).
  void block_mask_side();

  // One line per query row: word half then mask half, space separated.
  // `row_limit`/`col_limit` of -1 print the full (T+1) x 2(T+2) grid.
  std::string to_text(int row_limit = -1, int col_limit = -1) const;

  friend bool operator==(const AttentionSchedule&, const AttentionSchedule&) = default;

 private:
  std::size_t index(int row, int col) const { return static_cast<std::size_t>(row) * cols() + col; }

  int length_;
  int max_len_;
  std::vector<std::uint8_t> word_;
  std::vector<std::uint8_t> mask_;
};

// 1 = valid, 0 = padded. Both halves are identical.
struct PadMask {
  std::vector<std::uint8_t> word_pad;
  std::vector<std::uint8_t> mask_pad;
  friend bool operator==(const PadMask&, const PadMask&) = default;
};

// Training schedule for decode order `perm` over a word of `length`
// characters. Throws LengthError when length > max_len.
AttentionSchedule build_train_mask(const Permutation& perm, int length, int max_len);
// Same, with the mask side sized for `mask_len` characters (length
// perturbation): each step sees the mask tokens 1..mask_len+1 whose positions
// are not yet decoded.
AttentionSchedule build_train_mask(const Permutation& perm, int length, int mask_len, int max_len);
AttentionSchedule build_ar_infer_mask(int length, int max_len);
AttentionSchedule build_nar_mask(int length, int max_len);
AttentionSchedule build_cloze_mask(int length, int max_len);
PadMask build_pad_mask(int length, int max_len);

// Full (T+1) x 2(T+2) blocking pattern fed to the first cross-attention:
// blocked where the schedule blocks or the key is padded.
BlockMask combine(const AttentionSchedule& schedule, const PadMask& pad);

// Stacks several combined masks vertically (one block of T+1 rows each).
BlockMask stack(const std::vector<BlockMask>& parts);

}  // namespace mpstr
