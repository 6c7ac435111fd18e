#include "mpstr/check/mask_oracle.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

namespace mpstr::oracle {

namespace {

std::set<int> range(int lo, int hi) {
  std::set<int> s;
  for (int i = lo; i <= hi; ++i) s.insert(i);
  return s;
}

std::set<int> minus(std::set<int> a, const std::set<int>& b) {
  for (int x : b) a.erase(x);
  return a;
}

}  // namespace

std::vector<RowSets> train_rows(const Permutation& perm, int length, int mask_len) {
  // step_of[p] = index in the decode order at which position p is produced
  std::vector<int> step_of(static_cast<std::size_t>(length) + 1, -1);
  for (int t = 0; t < perm.length(); ++t) step_of[perm.order[t]] = t;
  auto before = [&](int step) {
    std::set<int> s;
    for (int t = 0; t < step; ++t) s.insert(perm.order[t]);
    return s;
  };
  std::vector<RowSets> rows;
  for (int p = 1; p <= length + 1; ++p) {
    const std::set<int> done = p <= length ? before(step_of[p]) : before(length);
    RowSets r;
    r.word = done;
    r.word.insert(0);
    r.mask = minus(range(1, mask_len + 1), done);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<RowSets> ar_rows(int length) {
  std::vector<RowSets> rows;
  for (int p = 1; p <= length + 1; ++p) rows.push_back({range(0, p - 1), range(p, length + 1)});
  return rows;
}

std::vector<RowSets> nar_rows(int length) {
  return std::vector<RowSets>(static_cast<std::size_t>(length) + 1, RowSets{{0}, range(1, length + 1)});
}

std::vector<RowSets> cloze_rows(int length) {
  std::vector<RowSets> rows;
  for (int p = 1; p <= length + 1; ++p) rows.push_back({minus(range(0, length + 1), {p}), {p}});
  return rows;
}

std::string compare(const AttentionSchedule& built, const std::vector<RowSets>& rows) {
  for (int r = 0; r < built.rows(); ++r) {
    for (int c = 0; c < built.cols(); ++c) {
      const bool valid = r < static_cast<int>(rows.size());
      const bool word_open = valid && rows[r].word.contains(c);
      const bool mask_open = valid && rows[r].mask.contains(c);
      if (built.word_blocked(r, c) == word_open || built.mask_blocked(r, c) == mask_open) {
        std::ostringstream os;
        os << "row " << r << " col " << c << ": built word=" << built.word_blocked(r, c)
           << " mask=" << built.mask_blocked(r, c) << ", oracle word=" << !word_open << " mask=" << !mask_open;
        return os.str();
      }
    }
  }
  return {};
}

SweepResult sweep(int exhaustive_max, int max_len, int random_count, std::uint64_t seed) {
  SweepResult res;
  Rng rng(seed);
  auto record = [&](const std::string& what, const std::string& diff) {
    ++res.schedules;
    if (!diff.empty() && res.failures.size() < 10) res.failures.push_back(what + ": " + diff);
  };
  auto perm_text = [](const Permutation& p) {
    std::string s;
    for (int x : p.order) s += (s.empty() ? "" : ",") + std::to_string(x);
    return s;
  };
  for (int len = 1; len <= max_len; ++len) {
    const std::string tag = " L=" + std::to_string(len);
    record("ar" + tag, compare(build_ar_infer_mask(len, max_len), ar_rows(len)));
    record("nar" + tag, compare(build_nar_mask(len, max_len), nar_rows(len)));
    record("cloze" + tag, compare(build_cloze_mask(len, max_len), cloze_rows(len)));

    std::vector<Permutation> perms;
    if (len <= exhaustive_max) {
      Permutation p = identity_permutation(len);
      do perms.push_back(p);
      while (std::next_permutation(p.order.begin(), p.order.end()));
    } else {
      for (int i = 0; i < random_count; ++i) {
        Permutation p = identity_permutation(len);
        for (int j = len - 1; j > 0; --j) std::swap(p.order[j], p.order[uniform_index(rng, j + 1)]);
        perms.push_back(std::move(p));
      }
    }
    for (const Permutation& p : perms) {
      const std::string what = "train [" + perm_text(p) + "]" + tag;
      record(what, compare(build_train_mask(p, len, max_len), train_rows(p, len, len)));
      for (int ml : {len - 1, len + 1}) {
        if (ml < 1 || ml > max_len) continue;
        record(what + " mask_len=" + std::to_string(ml),
               compare(build_train_mask(p, len, ml, max_len), train_rows(p, len, ml)));
      }
    }
  }
  return res;
}

std::string structural_violations(const AttentionSchedule& s, const std::string& kind, int mask_len) {
  const int len = s.length();
  if (mask_len < 0) mask_len = len;
  const int word_end = len + 1, mask_end = std::max(len, mask_len) + 1, both = std::min(len, mask_len) + 1;
  std::ostringstream os;
  for (int r = 0; r < s.rows(); ++r) {
    for (int c = 0; c < s.cols(); ++c) {
      const bool word_open = !s.word_blocked(r, c) && (r > len || c > word_end);
      const bool mask_open = !s.mask_blocked(r, c) && (r > len || c > mask_end);
      if (word_open || mask_open) {
        os << kind << ": row " << r << " col " << c << " outside the valid region is attendable\n";
        return os.str();
      }
    }
    if (!s.mask_blocked(r, 0)) os << kind << ": [M]_0 attendable at row " << r << '\n';
    if (r > len) continue;
    // query r is position r+1 (r == len is the EOS query, whose own key is [E])
    if (!s.word_blocked(r, r + 1)) os << kind << ": row " << r << " sees its own word token\n";
    for (int c = 0; c <= std::max(word_end, mask_end); ++c) {
      const int open = !s.word_blocked(r, c) + !s.mask_blocked(r, c);
      if (c <= both ? open != 1 : open > 1) {
        os << kind << ": row " << r << " position " << c << " is attendable on " << open << " sides\n";
        break;
      }
    }
  }
  return os.str();
}

}  // namespace mpstr::oracle
