#include "mpstr/layers.hpp"

#include <cmath>
#include <numbers>

namespace mpstr {

template <typename T>
void fill_normal(Matrix<T>& m, double stddev, Rng& rng) {
  auto flat = m.flat();
  for (std::size_t i = 0; i < flat.size(); i += 2) {
    double u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    if (u1 < 1e-300) u1 = 1e-300;
    const double r = std::sqrt(-2.0 * std::log(u1));
    flat[i] = static_cast<T>(stddev * r * std::cos(2.0 * std::numbers::pi * u2));
    if (i + 1 < flat.size()) flat[i + 1] = static_cast<T>(stddev * r * std::sin(2.0 * std::numbers::pi * u2));
  }
}

template <typename T>
Linear<T> Linear<T>::make(ParamStore<T>& store, const std::string& name, int in, int out, double init_std,
                          Rng& rng) {
  Linear l;
  l.weight = &store.add(name + ".w", in, out);
  l.bias = &store.add(name + ".b", 1, out);
  fill_normal(l.weight->value, init_std, rng);
  return l;
}

template <typename T>
Var Linear<T>::operator()(Graph<T>& g, Var x) const {
  return g.add_row(g.matmul(x, g.param(*weight)), g.param(*bias));
}

template <typename T>
LayerNorm<T> LayerNorm<T>::make(ParamStore<T>& store, const std::string& name, int dim) {
  LayerNorm n;
  n.gain = &store.add(name + ".g", 1, dim);
  n.shift = &store.add(name + ".b", 1, dim);
  n.gain->value.fill(T{1});
  return n;
}

template <typename T>
Var LayerNorm<T>::operator()(Graph<T>& g, Var x) const {
  return g.layer_norm(x, g.param(*gain), g.param(*shift));
}

template <typename T>
MultiHeadAttention<T> MultiHeadAttention<T>::make(ParamStore<T>& store, const std::string& name, int dim,
                                                  int heads, double init_std, Rng& rng) {
  MultiHeadAttention a;
  a.q = Linear<T>::make(store, name + ".q", dim, dim, init_std, rng);
  a.k = Linear<T>::make(store, name + ".k", dim, dim, init_std, rng);
  a.v = Linear<T>::make(store, name + ".v", dim, dim, init_std, rng);
  a.o = Linear<T>::make(store, name + ".o", dim, dim, init_std, rng);
  a.heads = heads;
  return a;
}

template <typename T>
Var MultiHeadAttention<T>::operator()(Graph<T>& g, Var query, Var memory, const BlockMask* mask) const {
  return o(g, g.attention(q(g, query), k(g, memory), v(g, memory), heads, mask));
}

template <typename T>
Mlp<T> Mlp<T>::make(ParamStore<T>& store, const std::string& name, int dim, int hidden, double init_std,
                    Rng& rng) {
  Mlp m;
  m.fc1 = Linear<T>::make(store, name + ".fc1", dim, hidden, init_std, rng);
  m.fc2 = Linear<T>::make(store, name + ".fc2", hidden, dim, init_std, rng);
  return m;
}

template <typename T>
Var Mlp<T>::operator()(Graph<T>& g, Var x) const {
  return fc2(g, g.gelu(fc1(g, x)));
}

template void fill_normal<float>(Matrix<float>&, double, Rng&);
template void fill_normal<double>(Matrix<double>&, double, Rng&);
template struct Linear<float>;
template struct Linear<double>;
template struct LayerNorm<float>;
template struct LayerNorm<double>;
template struct MultiHeadAttention<float>;
template struct MultiHeadAttention<double>;
template struct Mlp<float>;
template struct Mlp<double>;

}  // namespace mpstr
