#pragma once

// Independent set-based description of every schedule, written directly
// from the decode-order semantics rather than from matrix fills. Used to
// cross-check the schedule builders.

#include <set>
#include <string>
#include <vector>

#include "mpstr/schedule.hpp"

namespace mpstr::oracle {

// Attendable positions for one query: word-side keys (0 = [B], 1..L
// characters, L+1 = [E]) and mask-side keys ([M]_j).
struct RowSets {
  std::set<int> word;
  std::set<int> mask;
};

// One entry per query: positions 1..L in order, then the EOS query.
std::vector<RowSets> train_rows(const Permutation& perm, int length, int mask_len);
std::vector<RowSets> ar_rows(int length);
std::vector<RowSets> nar_rows(int length);
std::vector<RowSets> cloze_rows(int length);

// Empty when `built` encodes exactly `rows` (and blocks everything else),
// otherwise a description of the first mismatch.
std::string compare(const AttentionSchedule& built, const std::vector<RowSets>& rows);

struct SweepResult {
  long long schedules = 0;
  std::vector<std::string> failures;  // first few mismatches
};

// Exhaustive over all L! orders for L <= exhaustive_max, `random_count`
// random orders for the larger lengths up to max_len; every schedule kind
// (train with and without perturbed mask counts, AR, NAR, cloze).
SweepResult sweep(int exhaustive_max, int max_len, int random_count, std::uint64_t seed);

// Partition, self-exclusion, [M]_0 blocked, train(identity) == AR, and
// rows/columns beyond the valid region fully blocked. Empty when all hold.
// `mask_len` is the (perturbed) mask count a training schedule was built
// with; -1 means the word length. Positions past min(L, mask_len) + 1 are
// only required to be open on at most one side.
std::string structural_violations(const AttentionSchedule& s, const std::string& kind, int mask_len = -1);

}  // namespace mpstr::oracle
