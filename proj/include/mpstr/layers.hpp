#pragma once

#include <string>

#include "mpstr/autograd.hpp"
#include "mpstr/params.hpp"
#include "mpstr/rng.hpp"

namespace mpstr {

// Zero-mean normal fill via Box-Muller on the portable uniform draw.
template <typename T>
void fill_normal(Matrix<T>& m, double stddev, Rng& rng);

template <typename T>
struct Linear {
  Parameter<T>* weight = nullptr;  // in x out
  Parameter<T>* bias = nullptr;    // 1 x out

  static Linear make(ParamStore<T>& store, const std::string& name, int in, int out, double init_std, Rng& rng);
  Var operator()(Graph<T>& g, Var x) const;
};

template <typename T>
struct LayerNorm {
  Parameter<T>* gain = nullptr;
  Parameter<T>* shift = nullptr;

  static LayerNorm make(ParamStore<T>& store, const std::string& name, int dim);
  Var operator()(Graph<T>& g, Var x) const;
};

// Projections around Graph::attention.
template <typename T>
struct MultiHeadAttention {
  Linear<T> q, k, v, o;
  int heads = 1;

  static MultiHeadAttention make(ParamStore<T>& store, const std::string& name, int dim, int heads,
                                 double init_std, Rng& rng);
  // Full projection path: queries from `query`, keys/values from `memory`.
  Var operator()(Graph<T>& g, Var query, Var memory, const BlockMask* mask = nullptr) const;
};

template <typename T>
struct Mlp {
  Linear<T> fc1, fc2;

  static Mlp make(ParamStore<T>& store, const std::string& name, int dim, int hidden, double init_std, Rng& rng);
  Var operator()(Graph<T>& g, Var x) const;
};

}  // namespace mpstr
