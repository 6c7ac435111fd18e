#pragma once

// Tape-based reverse-mode differentiation over row-major matrices. A Graph
// lives for one forward/backward pass; parameter gradients accumulate into
// Parameter::grad so several graphs can contribute to one optimizer step.

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "mpstr/params.hpp"
#include "mpstr/tensor.hpp"

namespace mpstr {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Query x key blocking pattern for attention, 1 = blocked.
struct BlockMask {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> blocked;

  BlockMask() = default;
  BlockMask(int r, int c, std::uint8_t fill = 0)
      : rows(r), cols(c), blocked(static_cast<std::size_t>(r) * c, fill) {}
  bool at(int r, int c) const { return blocked[static_cast<std::size_t>(r) * cols + c] != 0; }
  void set(int r, int c, bool b) { blocked[static_cast<std::size_t>(r) * cols + c] = b ? 1 : 0; }
};

template <typename T>
class Graph {
 public:
  explicit Graph(bool record_backward = true) : record_(record_backward) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var input(Matrix<T> m);
  Var param(Parameter<T>& p);

  const Matrix<T>& value(Var v) const;
  int rows(Var v) const { return value(v).rows(); }
  int cols(Var v) const { return value(v).cols(); }
  std::size_t node_count() const { return nodes_.size(); }

  // a: n x k, b: k x m
  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  // x: n x m, row: 1 x m broadcast over rows
  Var add_row(Var x, Var row);
  Var scale(Var x, T s);
  // a * wa + b * wb, same shapes
  Var weighted_sum(Var a, T wa, Var b, T wb);
  Var layer_norm(Var x, Var gamma, Var beta, T eps = T(1e-5));
  Var gelu(Var x);
  // Multi-head scaled dot-product attention over already-projected q, k, v.
  // Blocked keys are skipped outright; a query with every key blocked
  // produces a zero row.
  Var attention(Var q, Var k, Var v, int heads, const BlockMask* mask = nullptr);
  Var gather_rows(Var table, std::span<const int> ids);
  Var concat_rows(std::initializer_list<Var> parts);
  Var slice_rows(Var x, int begin, int count);
  Var tile_rows(Var x, int times);
  // Mean token cross-entropy over rows whose target is >= 0. Returns 1 x 1.
  Var cross_entropy(Var logits, std::span<const int> targets);

  // Per-head attention probabilities of an attention() output, laid out
  // [head][query][key].
  const std::vector<T>& attention_probs(Var attn_out) const;

  // Accumulates d(seed * root)/d(param) into every reachable parameter.
  void backward(Var root, T seed = T{1});

 private:
  struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    Parameter<T>* param = nullptr;
    bool needs_grad = false;
    std::function<void()> back;
    std::vector<T> aux;
  };

  Var push(Matrix<T> value, bool needs_grad);
  bool needs(Var v) const { return nodes_[v.id].needs_grad; }
  Matrix<T>& grad_of(Var v);
  bool has_grad(Var v) const;
  void check(Var v) const;

  bool record_;
  std::vector<Node> nodes_;
};

}  // namespace mpstr
