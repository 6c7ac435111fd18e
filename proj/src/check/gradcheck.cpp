#include "mpstr/check/gradcheck.hpp"

#include <cmath>
#include <numeric>

#include "mpstr/toy_data.hpp"
#include "mpstr/training.hpp"

namespace mpstr {

double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), floor);
}

namespace {

// Fourth-order central difference: truncation error O(eps^4), which lets eps
// stay large enough that rounding in the loss does not dominate.
template <class F>
double five_point(F&& f, double eps) {
  return (8 * (f(eps) - f(-eps)) - (f(2 * eps) - f(-2 * eps))) / (12 * eps);
}

}  // namespace

GradCheckReport gradient_check(Model<double>& model, const Image& image, const LabelSequence& label,
                               const std::vector<Permutation>& perms, int mask_len, double lambda,
                               const GradCheckOptions& opts) {
  const Matrix<double> patches = patchify<double>(image, model.config().encoder);
  auto loss = [&] {
    Graph<double> g(false);
    return g.value(sample_loss(g, model, patches, label, perms, mask_len, lambda).total)(0, 0);
  };

  GradCheckReport rep;
  model.params().zero_grad();
  {
    Graph<double> g;
    const SampleLossVars v = sample_loss(g, model, patches, label, perms, mask_len, lambda);
    rep.loss = g.value(v.total)(0, 0);
    g.backward(v.total);
  }

  Rng rng(opts.seed);
  const double eps = opts.eps;
  for (const auto& p : model.params().all()) {
    auto w = p->value.flat();
    const auto grad = p->grad.flat();
    const int n = static_cast<int>(w.size());
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    if (n > opts.full_tensor_limit) {
      const int k = std::min(n, opts.samples_per_tensor);
      for (int i = 0; i < k; ++i) std::swap(idx[i], idx[i + uniform_index(rng, static_cast<std::uint64_t>(n - i))]);
      idx.resize(static_cast<std::size_t>(k));
    }
    TensorCheck tc;
    tc.name = p->name;
    for (int i : idx) {
      const double orig = w[i];
      const double numeric = five_point(
          [&](double d) {
            w[i] = orig + d;
            return loss();
          },
          eps);
      w[i] = orig;
      const double err = relative_error(grad[i], numeric, opts.denom_floor);
      ++tc.checked;
      if (err > tc.max_rel_error || tc.worst_index < 0) {
        tc.max_rel_error = err;
        tc.worst_index = i;
        tc.analytic = grad[i];
        tc.numeric = numeric;
      }
    }
    rep.entries_checked += tc.checked;
    if (tc.max_rel_error >= rep.max_rel_error) {
      rep.max_rel_error = tc.max_rel_error;
      rep.worst_tensor = tc.name;
    }
    rep.tensors.push_back(std::move(tc));
  }

  // One random direction through every parameter at once.
  std::vector<std::vector<double>> dir;
  double analytic = 0;
  for (const auto& p : model.params().all()) {
    std::vector<double> d(p->value.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
      d[i] = 2 * uniform01(rng) - 1;
      analytic += d[i] * p->grad.flat()[i];
    }
    dir.push_back(std::move(d));
  }
  auto shift = [&](double s) {
    const auto& ps = model.params().all();
    for (std::size_t t = 0; t < ps.size(); ++t) {
      auto w = ps[t]->value.flat();
      for (std::size_t i = 0; i < w.size(); ++i) w[i] += s * dir[t][i];
    }
  };
  double at = 0;
  const double numeric = five_point(
      [&](double d) {
        shift(d - at);
        at = d;
        return loss();
      },
      eps);
  shift(-at);
  rep.directional_rel_error = relative_error(analytic, numeric, opts.denom_floor);
  return rep;
}

GradCheckReport toy_gradient_check(const GradCheckOptions& opts, LengthSource source) {
  ModelConfig cfg = ModelConfig::toy();
  cfg.length_source = source;
  Model<double> model(cfg, opts.seed);
  RenderParams render;
  render.width = cfg.encoder.image_width;
  render.height = cfg.encoder.image_height;
  const std::string word = "k7z";
  const Image image = render_word(word, render);
  const LabelSequence label = model.codec().encode(word);
  Rng rng(derive_seed(opts.seed, 3));
  const std::vector<Permutation> perms = sample_permutations(4, label.length(), rng);
  return gradient_check(model, image, label, perms, label.length() + 1, 0.25, opts);
}

}  // namespace mpstr
