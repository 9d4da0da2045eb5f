#pragma once

#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "sed/random.hpp"

namespace sed::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class ParameterStore;

/// Handle to a node on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Variable-length sequences packed along the row axis: sequence i occupies
/// rows [offsets[i], offsets[i+1]).
struct Segments {
  std::vector<int> offsets{0};

  static Segments from_lengths(std::span<const int> lengths);
  int count() const { return static_cast<int>(offsets.size()) - 1; }
  int begin(int i) const { return offsets[static_cast<std::size_t>(i)]; }
  int length(int i) const {
    return offsets[static_cast<std::size_t>(i) + 1] - offsets[static_cast<std::size_t>(i)];
  }
  int total() const { return offsets.back(); }
};

/// Reverse-mode automatic differentiation over dense row-major matrices.
///
/// A recording tape stores a backward closure per node; `backward(loss)`
/// accumulates gradients into the ParameterStore the tape was created with.
/// An inference tape only computes values.
class Tape {
 public:
  /// Recording tape without parameters (gradients reachable via grad()).
  Tape();
  static Tape recording(ParameterStore& params);
  static Tape inference(const ParameterStore& params);

  // Backward closures capture `this`; a tape never moves.
  Tape(Tape&&) = delete;
  Tape& operator=(Tape&&) = delete;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool is_recording() const { return recording_; }

  Var constant(Matrix value);
  /// Leaf whose gradient is tracked (for tests and input sensitivities).
  Var variable(Matrix value);
  Var param(std::size_t id);

  const Matrix& value(Var v) const;
  /// Gradient of the last backward() target w.r.t. v; empty if v was unused.
  const Matrix& grad(Var v) const;
  double scalar(Var v) const;

  /// `loss` must be 1x1.
  void backward(Var loss);

  // --- elementwise / linear algebra
  Var matmul(Var a, Var b);
  /// x W + b, with W of shape in x out and b of shape 1 x out.
  Var linear(Var x, Var w, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double c);
  Var add_scalar(Var a, double c);
  /// Adds a 1 x n row to every row of a.
  Var add_row(Var a, Var row);
  Var relu(Var a);
  Var silu(Var a);
  Var exp(Var a);

  // --- structural
  Var concat_rows(Var a, Var b);
  Var concat_cols(Var a, Var b);
  Var slice_cols(Var a, int start, int count);
  /// out.row(i) = x.row(indices[i]); backward scatter-adds.
  Var gather_rows(Var x, std::vector<int> indices);
  /// Mean over each segment's rows; one output row per segment.
  Var segment_mean(Var x, const Segments& segments);

  // --- layers
  Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
  /// Multi-head scaled dot-product self-attention over packed sequences.
  /// `qkv` is N x 3d with [Q | K | V] column blocks; returns N x d.
  Var attention(Var qkv, const Segments& segments, int heads, bool causal);
  /// Inverted dropout; identity when p == 0.
  Var dropout(Var x, double p, Rng& rng);

  // --- reductions (1 x 1 outputs)
  Var sum(Var a);
  /// sum_ij (a - b)^2
  Var squared_error(Var a, Var b);
  /// sum over rows of -log softmax(logits.row(r))[targets[r]]; rows whose
  /// target is negative are skipped.
  Var softmax_cross_entropy(Var logits, std::vector<int> targets);

 private:
  struct Node {
    Matrix value;
    const Matrix* external = nullptr;
    Matrix grad;
    bool requires_grad = false;
    std::function<void()> backward;
  };

  Tape(const ParameterStore* params, ParameterStore* sink, bool recording);

  const Matrix& val(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.external ? *n.external : n.value;
  }
  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  bool needs(Var v) const { return recording_ && nodes_[static_cast<std::size_t>(v.id)].requires_grad; }
  Var push(Matrix value, bool requires_grad);
  Matrix& grad_slot(int id);
  template <typename Expr>
  void accumulate(int id, const Expr& g);

  const ParameterStore* params_ = nullptr;
  ParameterStore* sink_ = nullptr;
  bool recording_ = true;
  std::vector<Node> nodes_;
};

}  // namespace sed::nn
