#include "mpstr/optimizer.hpp"

#include <cmath>
#include <numbers>

namespace mpstr {

Adam::Adam(const ParamStore<float>& params, AdamConfig cfg) : cfg_(cfg) {
  for (const auto& p : params.all()) {
    m_.emplace_back(p->value.rows(), p->value.cols());
    v_.emplace_back(p->value.rows(), p->value.cols());
  }
}

void Adam::step(ParamStore<float>& params, double lr) {
  const auto& ps = params.all();
  if (ps.size() != m_.size()) throw ShapeError("optimizer state does not match parameter set");
  ++t_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double step = lr * std::sqrt(c2) / c1;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto w = ps[i]->value.flat();
    auto g = ps[i]->grad.flat();
    auto m = m_[i].flat();
    auto v = v_[i].flat();
    if (g.size() != w.size()) throw ShapeError("gradient shape mismatch for " + ps[i]->name);
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j];
      m[j] = static_cast<float>(b1 * m[j] + (1.0 - b1) * gj);
      v[j] = static_cast<float>(b2 * v[j] + (1.0 - b2) * gj * gj);
      double wj = w[j];
      if (cfg_.weight_decay > 0) wj -= lr * cfg_.weight_decay * wj;
      wj -= step * m[j] / (std::sqrt(static_cast<double>(v[j])) + cfg_.eps * std::sqrt(c2));
      w[j] = static_cast<float>(wj);
    }
  }
}

double clip_grad_norm(ParamStore<float>& params, double max_norm) {
  double sq = 0;
  for (const auto& p : params.all())
    for (float g : p->grad.flat()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const float s = static_cast<float>(max_norm / (norm + 1e-12));
    for (const auto& p : params.all())
      for (float& g : p->grad.flat()) g *= s;
  }
  return norm;
}

double LrSchedule::at(std::int64_t step) const {
  const double low = max_lr * final_ratio;
  const auto cycle = static_cast<std::int64_t>(std::llround(cycle_fraction * static_cast<double>(iterations)));
  if (cycle <= 1 || step >= cycle) return low;
  const double start = max_lr / div_factor;
  const double up = std::max(1.0, warmup_fraction * static_cast<double>(cycle));
  const double s = static_cast<double>(step);
  auto cosine = [](double from, double to, double frac) {
    return to + (from - to) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
  };
  if (s < up) return cosine(start, max_lr, s / up);
  return cosine(max_lr, low, (s - up) / std::max(1.0, static_cast<double>(cycle) - up));
}

}  // namespace mpstr
