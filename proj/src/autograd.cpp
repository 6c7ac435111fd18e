#include "mpstr/autograd.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "mpstr/simd/kernels.hpp"

namespace mpstr {

namespace {

std::string shape_str(const auto& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

template <typename T>
Var Graph<T>::push(Matrix<T> value, bool needs_grad) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad && record_;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
void Graph<T>::check(Var v) const {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
    throw ShapeError("graph variable does not belong to this graph");
  }
}

template <typename T>
Var Graph<T>::input(Matrix<T> m) {
  return push(std::move(m), false);
}

template <typename T>
Var Graph<T>::param(Parameter<T>& p) {
  Node n;
  n.param = &p;
  n.needs_grad = record_;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
const Matrix<T>& Graph<T>::value(Var v) const {
  check(v);
  const Node& n = nodes_[v.id];
  return n.param != nullptr ? n.param->value : n.value;
}

template <typename T>
Matrix<T>& Graph<T>::grad_of(Var v) {
  Node& n = nodes_[v.id];
  if (n.param != nullptr) {
    if (!n.param->grad.same_shape(n.param->value)) n.param->zero_grad();
    return n.param->grad;
  }
  if (!n.grad.same_shape(n.value)) n.grad = Matrix<T>(n.value.rows(), n.value.cols());
  return n.grad;
}

template <typename T>
bool Graph<T>::has_grad(Var v) const {
  const Node& n = nodes_[v.id];
  return n.param == nullptr && n.grad.same_shape(n.value) && !n.value.empty();
}

template <typename T>
Var Graph<T>::matmul(Var a, Var b) {
  const Matrix<T>& A = value(a);
  const Matrix<T>& B = value(b);
  if (A.cols() != B.rows()) {
    throw ShapeError("matmul shape mismatch: " + shape_str(A) + " * " + shape_str(B));
  }
  const auto& kern = simd::active_kernels<T>();
  const int n = A.rows(), k = A.cols(), m = B.cols();
  Matrix<T> out(n, m);
  for (int i = 0; i < n; ++i) kern.row_times_matrix(A.row(i).data(), k, B.data(), m, m, out.row(i).data());
  Var o = push(std::move(out), needs(a) || needs(b));
  if (nodes_[o.id].needs_grad) {
    nodes_[o.id].back = [this, a, b, o, n, k, m]() {
      const auto& kern = simd::active_kernels<T>();
      const Matrix<T>& dout = nodes_[o.id].grad;
      const Matrix<T>& A = value(a);
      const Matrix<T>& B = value(b);
      if (needs(a)) {
        Matrix<T> bt = B.transposed();
        Matrix<T>& da = grad_of(a);
        for (int i = 0; i < n; ++i) kern.row_times_matrix(dout.row(i).data(), m, bt.data(), k, k, da.row(i).data());
      }
      if (needs(b)) {
        Matrix<T> at = A.transposed();
        Matrix<T>& db = grad_of(b);
        for (int kk = 0; kk < k; ++kk) kern.row_times_matrix(at.row(kk).data(), n, dout.data(), m, m, db.row(kk).data());
      }
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::add(Var a, Var b) {
  const Matrix<T>& A = value(a);
  const Matrix<T>& B = value(b);
  if (!A.same_shape(B)) throw ShapeError("add shape mismatch: " + shape_str(A) + " + " + shape_str(B));
  Matrix<T> out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += B.data()[i];
  Var o = push(std::move(out), needs(a) || needs(b));
  if (nodes_[o.id].needs_grad) {
    nodes_[o.id].back = [this, a, b, o]() {
      const Matrix<T>& d = nodes_[o.id].grad;
      for (Var in : {a, b}) {
        if (!needs(in)) continue;
        Matrix<T>& g = grad_of(in);
        for (std::size_t i = 0; i < d.size(); ++i) g.data()[i] += d.data()[i];
      }
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::add_row(Var x, Var row) {
  const Matrix<T>& X = value(x);
  const Matrix<T>& R = value(row);
  if (R.rows() != 1 || R.cols() != X.cols()) {
    throw ShapeError("add_row shape mismatch: " + shape_str(X) + " + " + shape_str(R));
  }
  Matrix<T> out = X;
  for (int i = 0; i < out.rows(); ++i)
    for (int j = 0; j < out.cols(); ++j) out(i, j) += R(0, j);
  Var o = push(std::move(out), needs(x) || needs(row));
  if (nodes_[o.id].needs_grad) {
    nodes_[o.id].back = [this, x, row, o]() {
      const Matrix<T>& d = nodes_[o.id].grad;
      if (needs(x)) {
        Matrix<T>& g = grad_of(x);
        for (std::size_t i = 0; i < d.size(); ++i) g.data()[i] += d.data()[i];
      }
      if (needs(row)) {
        Matrix<T>& g = grad_of(row);
        for (int i = 0; i < d.rows(); ++i)
          for (int j = 0; j < d.cols(); ++j) g(0, j) += d(i, j);
      }
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::scale(Var x, T s) {
  Matrix<T> out = value(x);
  for (auto& e : out.flat()) e *= s;
  Var o = push(std::move(out), needs(x));
  if (nodes_[o.id].needs_grad) {
    nodes_[o.id].back = [this, x, o, s]() {
      const Matrix<T>& d = nodes_[o.id].grad;
      Matrix<T>& g = grad_of(x);
      for (std::size_t i = 0; i < d.size(); ++i) g.data()[i] += s * d.data()[i];
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::weighted_sum(Var a, T wa, Var b, T wb) {
  const Matrix<T>& A = value(a);
  const Matrix<T>& B = value(b);
  if (!A.same_shape(B)) throw ShapeError("weighted_sum shape mismatch");
  Matrix<T> out(A.rows(), A.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = wa * A.data()[i] + wb * B.data()[i];
  Var o = push(std::move(out), needs(a) || needs(b));
  if (nodes_[o.id].needs_grad) {
    nodes_[o.id].back = [this, a, b, o, wa, wb]() {
      const Matrix<T>& d = nodes_[o.id].grad;
      if (needs(a)) {
        Matrix<T>& g = grad_of(a);
        for (std::size_t i = 0; i < d.size(); ++i) g.data()[i] += wa * d.data()[i];
      }
      if (needs(b)) {
        Matrix<T>& g = grad_of(b);
        for (std::size_t i = 0; i < d.size(); ++i) g.data()[i] += wb * d.data()[i];
      }
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::layer_norm(Var x, Var gamma, Var beta, T eps) {
  const Matrix<T>& X = value(x);
  const Matrix<T>& G = value(gamma);
  const Matrix<T>& B = value(beta);
  const int n = X.rows(), d = X.cols();
  if (G.rows() != 1 || G.cols() != d || !G.same_shape(B)) throw ShapeError("layer_norm affine shape mismatch");
  Matrix<T> out(n, d);
  std::vector<T> stats(2 * static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    auto r = X.row(i);
    T mean{0};
    for (T v : r) mean += v;
    mean /= d;
    T var{0};
    for (T v : r) var += (v - mean) * (v - mean);
    var /= d;
    const T rstd = T{1} / std::sqrt(var + eps);
    stats[2 * i] = mean;
    stats[2 * i + 1] = rstd;
    for (int j = 0; j < d; ++j) out(i, j) = (r[j] - mean) * rstd * G(0, j) + B(0, j);
  }
  Var o = push(std::move(out), needs(x) || needs(gamma) || needs(beta));
  nodes_[o.id].aux = std::move(stats);
  if (nodes_[o.id].needs_grad) {
    nodes_[o.id].back = [this, x, gamma, beta, o, n, d]() {
      const Matrix<T>& dy = nodes_[o.id].grad;
      const Matrix<T>& X = value(x);
      const Matrix<T>& G = value(gamma);
      const std::vector<T>& st = nodes_[o.id].aux;
      Matrix<T>* dx = needs(x) ? &grad_of(x) : nullptr;
      Matrix<T>* dg = needs(gamma) ? &grad_of(gamma) : nullptr;
      Matrix<T>* db = needs(beta) ? &grad_of(beta) : nullptr;
      std::vector<T> xhat(d), dxhat(d);
      for (int i = 0; i < n; ++i) {
        const T mean = st[2 * i], rstd = st[2 * i + 1];
        T sum_dxhat{0}, sum_dxhat_xhat{0};
        for (int j = 0; j < d; ++j) {
          xhat[j] = (X(i, j) - mean) * rstd;
          dxhat[j] = dy(i, j) * G(0, j);
          sum_dxhat += dxhat[j];
          sum_dxhat_xhat += dxhat[j] * xhat[j];
          if (dg) (*dg)(0, j) += dy(i, j) * xhat[j];
          if (db) (*db)(0, j) += dy(i, j);
        }
        if (dx) {
          const T inv_d = T{1} / d;
          for (int j = 0; j < d; ++j) {
            (*dx)(i, j) += rstd * (dxhat[j] - inv_d * sum_dxhat - xhat[j] * inv_d * sum_dxhat_xhat);
          }
        }
      }
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::gelu(Var x) {
  const Matrix<T>& X = value(x);
  Matrix<T> out(X.rows(), X.cols());
  const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  for (std::size_t i = 0; i < X.size(); ++i) {
    const T v = X.data()[i];
    out.data()[i] = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  }
  Var o = push(std::move(out), needs(x));
  if (nodes_[o.id].needs_grad) {
    nodes_[o.id].back = [this, x, o, inv_sqrt2]() {
      const Matrix<T>& d = nodes_[o.id].grad;
      const Matrix<T>& X = value(x);
      Matrix<T>& g = grad_of(x);
      const T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
      for (std::size_t i = 0; i < X.size(); ++i) {
        const T v = X.data()[i];
        const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
        g.data()[i] += d.data()[i] * (cdf + v * pdf);
      }
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::attention(Var q, Var k, Var v, int heads, const BlockMask* mask) {
  const Matrix<T>& Q = value(q);
  const Matrix<T>& K = value(k);
  const Matrix<T>& V = value(v);
  const int nq = Q.rows(), nk = K.rows(), dim = Q.cols();
  if (heads <= 0 || dim % heads != 0) throw ShapeError("attention: dim not divisible by heads");
  if (K.cols() != dim || !K.same_shape(V)) throw ShapeError("attention: key/value shape mismatch");
  if (mask != nullptr && (mask->rows != nq || mask->cols != nk)) {
    throw ShapeError("attention: mask is " + std::to_string(mask->rows) + "x" + std::to_string(mask->cols) +
                     ", expected " + std::to_string(nq) + "x" + std::to_string(nk));
  }
  const int dh = dim / heads;
  const T inv_scale = T(1) / std::sqrt(static_cast<T>(dh));
  const auto& kern = simd::active_kernels<T>();

  Matrix<T> out(nq, dim);
  std::vector<T> probs(static_cast<std::size_t>(heads) * nq * nk, T{0});
  for (int h = 0; h < heads; ++h) {
    const int off = h * dh;
    for (int i = 0; i < nq; ++i) {
      T* p = probs.data() + (static_cast<std::size_t>(h) * nq + i) * nk;
      const T* qi = Q.row(i).data() + off;
      T mx = -std::numeric_limits<T>::infinity();
      bool any = false;
      for (int j = 0; j < nk; ++j) {
        if (mask != nullptr && mask->at(i, j)) continue;
        p[j] = kern.dot(qi, K.row(j).data() + off, dh) * inv_scale;
        mx = any ? std::max(mx, p[j]) : p[j];
        any = true;
      }
      if (!any) continue;
      T sum{0};
      for (int j = 0; j < nk; ++j) {
        if (mask != nullptr && mask->at(i, j)) continue;
        p[j] = std::exp(p[j] - mx);
        sum += p[j];
      }
      T* oi = out.row(i).data() + off;
      for (int j = 0; j < nk; ++j) {
        if (mask != nullptr && mask->at(i, j)) continue;
        p[j] /= sum;
        kern.axpy(p[j], V.row(j).data() + off, oi, dh);
      }
    }
  }
  Var o = push(std::move(out), needs(q) || needs(k) || needs(v));
  nodes_[o.id].aux = std::move(probs);
  if (nodes_[o.id].needs_grad) {
    BlockMask mask_copy = mask != nullptr ? *mask : BlockMask(nq, nk, 0);
    nodes_[o.id].back = [this, q, k, v, o, heads, nq, nk, dh, inv_scale, m = std::move(mask_copy)]() {
      const auto& kern = simd::active_kernels<T>();
      const Matrix<T>& dout = nodes_[o.id].grad;
      const Matrix<T>& Q = value(q);
      const Matrix<T>& K = value(k);
      const Matrix<T>& V = value(v);
      const std::vector<T>& probs = nodes_[o.id].aux;
      Matrix<T>* dq = needs(q) ? &grad_of(q) : nullptr;
      Matrix<T>* dk = needs(k) ? &grad_of(k) : nullptr;
      Matrix<T>* dv = needs(v) ? &grad_of(v) : nullptr;
      std::vector<T> dp(nk);
      for (int h = 0; h < heads; ++h) {
        const int off = h * dh;
        for (int i = 0; i < nq; ++i) {
          const T* p = probs.data() + (static_cast<std::size_t>(h) * nq + i) * nk;
          const T* doi = dout.row(i).data() + off;
          T weighted{0};
          for (int j = 0; j < nk; ++j) {
            if (m.at(i, j)) continue;
            dp[j] = kern.dot(doi, V.row(j).data() + off, dh);
            weighted += p[j] * dp[j];
            if (dv) kern.axpy(p[j], doi, dv->row(j).data() + off, dh);
          }
          for (int j = 0; j < nk; ++j) {
            if (m.at(i, j)) continue;
            const T ds = p[j] * (dp[j] - weighted) * inv_scale;
            if (ds == T{0}) continue;
            if (dq) kern.axpy(ds, K.row(j).data() + off, dq->row(i).data() + off, dh);
            if (dk) kern.axpy(ds, Q.row(i).data() + off, dk->row(j).data() + off, dh);
          }
        }
      }
    };
  }
  return o;
}

template <typename T>
const std::vector<T>& Graph<T>::attention_probs(Var attn_out) const {
  check(attn_out);
  return nodes_[attn_out.id].aux;
}

template <typename T>
Var Graph<T>::gather_rows(Var table, std::span<const int> ids) {
  const Matrix<T>& W = value(table);
  Matrix<T> out(static_cast<int>(ids.size()), W.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= W.rows()) throw ShapeError("gather_rows: index out of range");
    std::copy(W.row(ids[i]).begin(), W.row(ids[i]).end(), out.row(static_cast<int>(i)).begin());
  }
  Var o = push(std::move(out), needs(table));
  if (nodes_[o.id].needs_grad) {
    nodes_[o.id].back = [this, table, o, idx = std::vector<int>(ids.begin(), ids.end())]() {
      const Matrix<T>& d = nodes_[o.id].grad;
      Matrix<T>& g = grad_of(table);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        auto src = d.row(static_cast<int>(i));
        auto dst = g.row(idx[i]);
        for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
      }
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::concat_rows(std::initializer_list<Var> parts) {
  std::vector<Var> vs(parts);
  if (vs.empty()) throw ShapeError("concat_rows: no inputs");
  const int cols = value(vs[0]).cols();
  int total = 0;
  bool need = false;
  for (Var v : vs) {
    if (value(v).cols() != cols) throw ShapeError("concat_rows: column mismatch");
    total += value(v).rows();
    need = need || needs(v);
  }
  Matrix<T> out(total, cols);
  int r = 0;
  for (Var v : vs) {
    const Matrix<T>& m = value(v);
    std::copy(m.data(), m.data() + m.size(), out.row(r).data());
    r += m.rows();
  }
  Var o = push(std::move(out), need);
  if (nodes_[o.id].needs_grad) {
    nodes_[o.id].back = [this, vs, o]() {
      const Matrix<T>& d = nodes_[o.id].grad;
      int r = 0;
      for (Var v : vs) {
        const int n = value(v).rows();
        if (needs(v)) {
          Matrix<T>& g = grad_of(v);
          const T* src = d.row(r).data();
          for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] += src[i];
        }
        r += n;
      }
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::slice_rows(Var x, int begin, int count) {
  const Matrix<T>& X = value(x);
  if (begin < 0 || count < 0 || begin + count > X.rows()) throw ShapeError("slice_rows out of range");
  Matrix<T> out(count, X.cols());
  if (count > 0) std::copy(X.row(begin).data(), X.row(begin).data() + out.size(), out.data());
  Var o = push(std::move(out), needs(x));
  if (nodes_[o.id].needs_grad) {
    nodes_[o.id].back = [this, x, o, begin]() {
      const Matrix<T>& d = nodes_[o.id].grad;
      Matrix<T>& g = grad_of(x);
      if (d.size() == 0) return;
      T* dst = g.row(begin).data();
      for (std::size_t i = 0; i < d.size(); ++i) dst[i] += d.data()[i];
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::tile_rows(Var x, int times) {
  const Matrix<T>& X = value(x);
  if (times < 1) throw ShapeError("tile_rows: times must be >= 1");
  Matrix<T> out(X.rows() * times, X.cols());
  for (int t = 0; t < times; ++t) std::copy(X.data(), X.data() + X.size(), out.row(t * X.rows()).data());
  Var o = push(std::move(out), needs(x));
  if (nodes_[o.id].needs_grad) {
    nodes_[o.id].back = [this, x, o, times]() {
      const Matrix<T>& d = nodes_[o.id].grad;
      Matrix<T>& g = grad_of(x);
      for (int t = 0; t < times; ++t) {
        const T* src = d.row(t * g.rows()).data();
        for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] += src[i];
      }
    };
  }
  return o;
}

template <typename T>
Var Graph<T>::cross_entropy(Var logits, std::span<const int> targets) {
  const Matrix<T>& X = value(logits);
  if (static_cast<int>(targets.size()) != X.rows()) throw ShapeError("cross_entropy: target count mismatch");
  int count = 0;
  T total{0};
  for (int i = 0; i < X.rows(); ++i) {
    const int t = targets[i];
    if (t < 0) continue;
    if (t >= X.cols()) throw ShapeError("cross_entropy: target class out of range");
    auto r = X.row(i);
    T mx = r[0];
    for (T v : r) mx = std::max(mx, v);
    T sum{0};
    for (T v : r) sum += std::exp(v - mx);
    total += std::log(sum) + mx - r[t];
    ++count;
  }
  Matrix<T> out(1, 1, count > 0 ? total / count : T{0});
  Var o = push(std::move(out), needs(logits) && count > 0);
  if (nodes_[o.id].needs_grad) {
    nodes_[o.id].back = [this, logits, o, count, tg = std::vector<int>(targets.begin(), targets.end())]() {
      const T up = nodes_[o.id].grad(0, 0) / count;
      const Matrix<T>& X = value(logits);
      Matrix<T>& g = grad_of(logits);
      for (int i = 0; i < X.rows(); ++i) {
        if (tg[i] < 0) continue;
        auto r = X.row(i);
        T mx = r[0];
        for (T v : r) mx = std::max(mx, v);
        T sum{0};
        for (T v : r) sum += std::exp(v - mx);
        for (int j = 0; j < X.cols(); ++j) {
          const T p = std::exp(r[j] - mx) / sum;
          g(i, j) += up * (p - (j == tg[i] ? T{1} : T{0}));
        }
      }
    };
  }
  return o;
}

template <typename T>
void Graph<T>::backward(Var root, T seed) {
  check(root);
  if (!record_) throw ShapeError("backward on a graph built without recording");
  if (value(root).size() != 1) throw ShapeError("backward root must be a scalar");
  if (!nodes_[root.id].needs_grad) return;
  grad_of(root)(0, 0) += seed;
  for (int id = root.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.needs_grad || !n.back || !has_grad(Var{id})) continue;
    n.back();
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace mpstr
