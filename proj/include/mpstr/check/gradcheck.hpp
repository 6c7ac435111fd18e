#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mpstr/model.hpp"

namespace mpstr {

struct GradCheckOptions {
  double eps = 1e-4;
  double denom_floor = 1e-6;
  int full_tensor_limit = 256;  // tensors up to this size are checked entry by entry
  int samples_per_tensor = 256;
  std::uint64_t seed = 11;
};

struct TensorCheck {
  std::string name;
  int checked = 0;
  double max_rel_error = 0;
  int worst_index = -1;
  double analytic = 0, numeric = 0;  // at the worst entry
};

struct GradCheckReport {
  std::vector<TensorCheck> tensors;
  double max_rel_error = 0;
  std::string worst_tensor;
  double directional_rel_error = 0;
  long long entries_checked = 0;
  double loss = 0;
};

// |a - n| / max(|a| + |n|, floor)
double relative_error(double analytic, double numeric, double floor);

// Checks d(total loss)/d(theta) of the full training objective for one
// sample against central differences, over every parameter tensor.
GradCheckReport gradient_check(Model<double>& model, const Image& image, const LabelSequence& label,
                               const std::vector<Permutation>& perms, int mask_len, double lambda,
                               const GradCheckOptions& opts = {});

// The standard check: toy model (encoder depth 2, D 64, T 8) in double
// precision on a rendered word, K = 4 permutations, perturbed mask count,
// lambda 0.25.
GradCheckReport toy_gradient_check(const GradCheckOptions& opts = {}, LengthSource source = LengthSource::kWord);

}  // namespace mpstr
