#include "sed/nn/tape.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <random>

#include "sed/errors.hpp"
#include "sed/nn/parameters.hpp"

namespace sed::nn {

namespace {

void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ContractError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                        std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                        std::to_string(b.cols()) + ")");
  }
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Segments Segments::from_lengths(std::span<const int> lengths) {
  Segments s;
  s.offsets.reserve(lengths.size() + 1);
  for (int len : lengths) s.offsets.push_back(s.offsets.back() + len);
  return s;
}

Tape::Tape() : Tape(nullptr, nullptr, true) {}

Tape::Tape(const ParameterStore* params, ParameterStore* sink, bool recording)
    : params_(params), sink_(sink), recording_(recording) {
  nodes_.reserve(256);
}

Tape Tape::recording(ParameterStore& params) { return Tape(&params, &params, true); }

Tape Tape::inference(const ParameterStore& params) { return Tape(&params, nullptr, false); }

Var Tape::push(Matrix value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = recording_ && requires_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Matrix value) { return push(std::move(value), false); }

Var Tape::variable(Matrix value) { return push(std::move(value), true); }

Var Tape::param(std::size_t id) {
  if (params_ == nullptr) throw ContractError("tape has no parameter store");
  Node n;
  n.external = &(*params_)[id].value;
  n.requires_grad = recording_ && sink_ != nullptr;
  nodes_.push_back(std::move(n));
  const int self = static_cast<int>(nodes_.size()) - 1;
  if (nodes_.back().requires_grad) {
    nodes_.back().backward = [this, self, id] { (*sink_)[id].grad += node(self).grad; };
  }
  return Var{self};
}

const Matrix& Tape::value(Var v) const { return val(v.id); }

const Matrix& Tape::grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].grad; }

double Tape::scalar(Var v) const {
  const Matrix& m = val(v.id);
  if (m.size() != 1) throw ContractError("scalar(): node is not 1x1");
  return m(0, 0);
}

Matrix& Tape::grad_slot(int id) {
  Node& n = node(id);
  if (n.grad.size() == 0) n.grad = Matrix::Zero(val(id).rows(), val(id).cols());
  return n.grad;
}

template <typename Expr>
void Tape::accumulate(int id, const Expr& g) {
  Node& n = node(id);
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::backward(Var loss) {
  if (!recording_) throw ContractError("backward() on an inference tape");
  if (val(loss.id).size() != 1) throw ContractError("backward() target must be 1x1");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  node(loss.id).grad = Matrix::Ones(1, 1);
  for (int id = loss.id; id >= 0; --id) {
    Node& n = node(id);
    if (n.requires_grad && n.grad.size() != 0 && n.backward) n.backward();
  }
}

// ---------------------------------------------------------------------------

Var Tape::matmul(Var a, Var b) {
  const Matrix& A = val(a.id);
  const Matrix& B = val(b.id);
  if (A.cols() != B.rows()) throw ContractError("matmul: inner dimensions differ");
  Matrix out = A * B;
  Var r = push(std::move(out), needs(a) || needs(b));
  if (node(r.id).requires_grad) {
    node(r.id).backward = [this, a, b, r] {
      const Matrix& g = node(r.id).grad;
      if (needs(a)) accumulate(a.id, g * val(b.id).transpose());
      if (needs(b)) accumulate(b.id, val(a.id).transpose() * g);
    };
  }
  return r;
}

Var Tape::linear(Var x, Var w, Var b) {
  const Matrix& X = val(x.id);
  const Matrix& W = val(w.id);
  const Matrix& B = val(b.id);
  if (X.cols() != W.rows()) {
    throw ContractError("linear: input width " + std::to_string(X.cols()) +
                        " does not match weight rows " + std::to_string(W.rows()));
  }
  if (B.rows() != 1 || B.cols() != W.cols()) throw ContractError("linear: bad bias shape");
  Matrix out = X * W;
  out.rowwise() += B.row(0);
  Var r = push(std::move(out), needs(x) || needs(w) || needs(b));
  if (node(r.id).requires_grad) {
    node(r.id).backward = [this, x, w, b, r] {
      const Matrix& g = node(r.id).grad;
      if (needs(x)) accumulate(x.id, g * val(w.id).transpose());
      if (needs(w)) accumulate(w.id, val(x.id).transpose() * g);
      if (needs(b)) accumulate(b.id, g.colwise().sum());
    };
  }
  return r;
}

Var Tape::add(Var a, Var b) {
  check_same_shape(val(a.id), val(b.id), "add");
  Var r = push(val(a.id) + val(b.id), needs(a) || needs(b));
  if (node(r.id).requires_grad) {
    node(r.id).backward = [this, a, b, r] {
      const Matrix& g = node(r.id).grad;
      accumulate(a.id, g);
      accumulate(b.id, g);
    };
  }
  return r;
}

Var Tape::sub(Var a, Var b) {
  check_same_shape(val(a.id), val(b.id), "sub");
  Var r = push(val(a.id) - val(b.id), needs(a) || needs(b));
  if (node(r.id).requires_grad) {
    node(r.id).backward = [this, a, b, r] {
      const Matrix& g = node(r.id).grad;
      accumulate(a.id, g);
      accumulate(b.id, -g);
    };
  }
  return r;
}

Var Tape::mul(Var a, Var b) {
  check_same_shape(val(a.id), val(b.id), "mul");
  Var r = push(val(a.id).cwiseProduct(val(b.id)), needs(a) || needs(b));
  if (node(r.id).requires_grad) {
    node(r.id).backward = [this, a, b, r] {
      const Matrix& g = node(r.id).grad;
      if (needs(a)) accumulate(a.id, g.cwiseProduct(val(b.id)));
      if (needs(b)) accumulate(b.id, g.cwiseProduct(val(a.id)));
    };
  }
  return r;
}

Var Tape::scale(Var a, double c) {
  Var r = push(val(a.id) * c, needs(a));
  if (node(r.id).requires_grad) {
    node(r.id).backward = [this, a, r, c] { accumulate(a.id, node(r.id).grad * c); };
  }
  return r;
}

Var Tape::add_scalar(Var a, double c) {
  Matrix out = val(a.id).array() + c;
  Var r = push(std::move(out), needs(a));
  if (node(r.id).requires_grad) {
    node(r.id).backward = [this, a, r] { accumulate(a.id, node(r.id).grad); };
  }
  return r;
}

Var Tape::add_row(Var a, Var row) {
  const Matrix& A = val(a.id);
  const Matrix& R = val(row.id);
  if (R.rows() != 1 || R.cols() != A.cols()) throw ContractError("add_row: bad row shape");
  Matrix out = A;
  out.rowwise() += R.row(0);
  Var r = push(std::move(out), needs(a) || needs(row));
  if (node(r.id).requires_grad) {
    node(r.id).backward = [this, a, row, r] {
      const Matrix& g = node(r.id).grad;
      accumulate(a.id, g);
      if (needs(row)) accumulate(row.id, g.colwise().sum());
    };
  }
  return r;
}

Var Tape::relu(Var a) {
  Var r = push(val(a.id).cwiseMax(0.0), needs(a));
  if (node(r.id).requires_grad) {
    node(r.id).backward = [this, a, r] {
      const Matrix& x = val(a.id);
      Matrix g = node(r.id).grad;
      g = (x.array() > 0.0).select(g, 0.0);
      accumulate(a.id, g);
    };
  }
  return r;
}

Var Tape::silu(Var a) {
  const Matrix& x = val(a.id);
  Matrix out = x.unaryExpr([](double v) { return v * sigmoid(v); });
  Var r = push(std::move(out), needs(a));
  if (node(r.id).requires_grad) {
    node(r.id).backward = [this, a, r] {
      const Matrix& xv = val(a.id);
      Matrix d = xv.unaryExpr([](double v) {
        const double s = sigmoid(v);
        return s * (1.0 + v * (1.0 - s));
      });
      accumulate(a.id, node(r.id).grad.cwiseProduct(d));
    };
  }
  return r;
}

Var Tape::exp(Var a) {
  Matrix out = val(a.id).array().exp();
  Var r = push(std::move(out), needs(a));
  if (node(r.id).requires_grad) {
    node(r.id).backward = [this, a, r] {
      accumulate(a.id, node(r.id).grad.cwiseProduct(val(r.id)));
    };
  }
  return r;
}

// ---------------------------------------------------------------------------

Var Tape::concat_rows(Var a, Var b) {
  const Matrix& A = val(a.id);
  const Matrix& B = val(b.id);
  if (A.cols() != B.cols()) throw ContractError("concat_rows: column counts differ");
  Matrix out(A.rows() + B.rows(), A.cols());
  out.topRows(A.rows()) = A;
  out.bottomRows(B.rows()) = B;
  Var r = push(std::move(out), needs(a) || needs(b));
  if (node(r.id).requires_grad) {
    node(r.id).backward = [this, a, b, r] {
      const Matrix& g = node(r.id).grad;
      const auto na = val(a.id).rows();
      if (needs(a)) accumulate(a.id, g.topRows(na));
      if (needs(b)) accumulate(b.id, g.bottomRows(g.rows() - na));
    };
  }
  return r;
}

Var Tape::concat_cols(Var a, Var b) {
  const Matrix& A = val(a.id);
  const Matrix& B = val(b.id);
  if (A.rows() != B.rows()) throw ContractError("concat_cols: row counts differ");
  Matrix out(A.rows(), A.cols() + B.cols());
  out.leftCols(A.cols()) = A;
  out.rightCols(B.cols()) = B;
  Var r = push(std::move(out), needs(a) || needs(b));
  if (node(r.id).requires_grad) {
    node(r.id).backward = [this, a, b, r] {
      const Matrix& g = node(r.id).grad;
      const auto na = val(a.id).cols();
      if (needs(a)) accumulate(a.id, g.leftCols(na));
      if (needs(b)) accumulate(b.id, g.rightCols(g.cols() - na));
    };
  }
  return r;
}

Var Tape::slice_cols(Var a, int start, int count) {
  const Matrix& A = val(a.id);
  if (start < 0 || count < 0 || start + count > A.cols()) {
    throw ContractError("slice_cols: range out of bounds");
  }
  Var r = push(A.middleCols(start, count), needs(a));
  if (node(r.id).requires_grad) {
    node(r.id).backward = [this, a, r, start, count] {
      grad_slot(a.id).middleCols(start, count) += node(r.id).grad;
    };
  }
  return r;
}

Var Tape::gather_rows(Var x, std::vector<int> indices) {
  const Matrix& X = val(x.id);
  Matrix out(static_cast<Eigen::Index>(indices.size()), X.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= X.rows()) throw ContractError("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = X.row(indices[i]);
  }
  Var r = push(std::move(out), needs(x));
  if (node(r.id).requires_grad) {
    node(r.id).backward = [this, x, r, idx = std::move(indices)] {
      const Matrix& g = node(r.id).grad;
      Matrix& gx = grad_slot(x.id);
      for (std::size_t i = 0; i < idx.size(); ++i) gx.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    };
  }
  return r;
}

Var Tape::segment_mean(Var x, const Segments& segments) {
  const Matrix& X = val(x.id);
  if (segments.total() != X.rows()) throw ContractError("segment_mean: segments do not cover rows");
  Matrix out(segments.count(), X.cols());
  for (int s = 0; s < segments.count(); ++s) {
    if (segments.length(s) == 0) throw ContractError("segment_mean: empty segment");
    out.row(s) = X.middleRows(segments.begin(s), segments.length(s)).colwise().mean();
  }
  Var r = push(std::move(out), needs(x));
  if (node(r.id).requires_grad) {
    node(r.id).backward = [this, x, r, segments] {
      const Matrix& g = node(r.id).grad;
      Matrix& gx = grad_slot(x.id);
      for (int s = 0; s < segments.count(); ++s) {
        const double inv = 1.0 / segments.length(s);
        for (int row = segments.begin(s); row < segments.begin(s) + segments.length(s); ++row) {
          gx.row(row) += g.row(s) * inv;
        }
      }
    };
  }
  return r;
}

// ---------------------------------------------------------------------------

Var Tape::layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Matrix& X = val(x.id);
  const Matrix& G = val(gamma.id);
  const Matrix& B = val(beta.id);
  if (G.rows() != 1 || G.cols() != X.cols() || B.rows() != 1 || B.cols() != X.cols()) {
    throw ContractError("layer_norm: gamma/beta shape mismatch");
  }
  const Eigen::Index n = X.rows();
  const double width = static_cast<double>(X.cols());
  Matrix xhat(n, X.cols());
  Eigen::VectorXd inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = X.row(i).mean();
    const double var = (X.row(i).array() - mean).square().sum() / width;
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (X.row(i).array() - mean) * inv_std(i);
  }
  Matrix out = xhat.array().rowwise() * G.row(0).array();
  out.rowwise() += B.row(0);
  Var r = push(std::move(out), needs(x) || needs(gamma) || needs(beta));
  if (node(r.id).requires_grad) {
    auto saved = std::make_shared<std::pair<Matrix, Eigen::VectorXd>>(std::move(xhat), std::move(inv_std));
    node(r.id).backward = [this, x, gamma, beta, r, saved] {
      const Matrix& g = node(r.id).grad;
      const Matrix& xh = saved->first;
      if (needs(gamma)) accumulate(gamma.id, g.cwiseProduct(xh).colwise().sum());
      if (needs(beta)) accumulate(beta.id, g.colwise().sum());
      if (needs(x)) {
        const Matrix dxhat = g.array().rowwise() * val(gamma.id).row(0).array();
        const double w = static_cast<double>(xh.cols());
        Matrix dx(xh.rows(), xh.cols());
        for (Eigen::Index i = 0; i < xh.rows(); ++i) {
          const double m1 = dxhat.row(i).sum() / w;
          const double m2 = dxhat.row(i).dot(xh.row(i)) / w;
          dx.row(i) = (dxhat.row(i).array() - m1 - xh.row(i).array() * m2) * saved->second(i);
        }
        accumulate(x.id, dx);
      }
    };
  }
  return r;
}

Var Tape::attention(Var qkv, const Segments& segments, int heads, bool causal) {
  const Matrix& QKV = val(qkv.id);
  if (QKV.cols() % 3 != 0) throw ContractError("attention: qkv width must be 3*d");
  const int d = static_cast<int>(QKV.cols() / 3);
  if (heads <= 0 || d % heads != 0) throw ContractError("attention: d not divisible by heads");
  if (segments.total() != QKV.rows()) throw ContractError("attention: segments do not cover rows");
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix out = Matrix::Zero(QKV.rows(), d);
  const bool rec = needs(qkv);
  auto probs = rec ? std::make_shared<std::vector<Matrix>>() : nullptr;
  if (rec) probs->reserve(static_cast<std::size_t>(segments.count() * heads));

  for (int s = 0; s < segments.count(); ++s) {
    const int b = segments.begin(s);
    const int len = segments.length(s);
    if (len == 0) {
      if (rec) for (int h = 0; h < heads; ++h) probs->emplace_back();
      continue;
    }
    for (int h = 0; h < heads; ++h) {
      const auto Q = QKV.block(b, h * dh, len, dh);
      const auto K = QKV.block(b, d + h * dh, len, dh);
      const auto V = QKV.block(b, 2 * d + h * dh, len, dh);
      Matrix P = (Q * K.transpose()) * scale;
      for (int i = 0; i < len; ++i) {
        const int visible = causal ? i + 1 : len;
        const double mx = P.row(i).head(visible).maxCoeff();
        double total = 0.0;
        for (int j = 0; j < visible; ++j) {
          P(i, j) = std::exp(P(i, j) - mx);
          total += P(i, j);
        }
        for (int j = 0; j < visible; ++j) P(i, j) /= total;
        for (int j = visible; j < len; ++j) P(i, j) = 0.0;
      }
      out.block(b, h * dh, len, dh).noalias() = P * V;
      if (rec) probs->push_back(std::move(P));
    }
  }

  Var r = push(std::move(out), rec);
  if (rec) {
    node(r.id).backward = [this, qkv, r, segments, heads, d, dh, scale, probs] {
      const Matrix& g = node(r.id).grad;
      const Matrix& QKVv = val(qkv.id);
      Matrix& gq = grad_slot(qkv.id);
      for (int s = 0; s < segments.count(); ++s) {
        const int b = segments.begin(s);
        const int len = segments.length(s);
        if (len == 0) continue;
        for (int h = 0; h < heads; ++h) {
          const Matrix& P = (*probs)[static_cast<std::size_t>(s * heads + h)];
          const auto Q = QKVv.block(b, h * dh, len, dh);
          const auto K = QKVv.block(b, d + h * dh, len, dh);
          const auto V = QKVv.block(b, 2 * d + h * dh, len, dh);
          const auto dO = g.block(b, h * dh, len, dh);
          gq.block(b, 2 * d + h * dh, len, dh).noalias() += P.transpose() * dO;
          const Matrix dP = dO * V.transpose();
          const Eigen::VectorXd row_dot = dP.cwiseProduct(P).rowwise().sum();
          const Matrix dS = P.cwiseProduct(dP.colwise() - row_dot) * scale;
          gq.block(b, h * dh, len, dh).noalias() += dS * K;
          gq.block(b, d + h * dh, len, dh).noalias() += dS.transpose() * Q;
        }
      }
    };
  }
  return r;
}

Var Tape::dropout(Var x, double p, Rng& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw ContractError("dropout probability must be < 1");
  const Matrix& X = val(x.id);
  Matrix mask(X.rows(), X.cols());
  std::bernoulli_distribution keep(1.0 - p);
  const double inv = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? inv : 0.0;
  Var r = push(X.cwiseProduct(mask), needs(x));
  if (node(r.id).requires_grad) {
    node(r.id).backward = [this, x, r, m = std::move(mask)] {
      accumulate(x.id, node(r.id).grad.cwiseProduct(m));
    };
  }
  return r;
}

// ---------------------------------------------------------------------------

Var Tape::sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = val(a.id).sum();
  Var r = push(std::move(out), needs(a));
  if (node(r.id).requires_grad) {
    node(r.id).backward = [this, a, r] {
      const double g = node(r.id).grad(0, 0);
      accumulate(a.id, Matrix::Constant(val(a.id).rows(), val(a.id).cols(), g));
    };
  }
  return r;
}

Var Tape::squared_error(Var a, Var b) {
  check_same_shape(val(a.id), val(b.id), "squared_error");
  Matrix out(1, 1);
  out(0, 0) = (val(a.id) - val(b.id)).squaredNorm();
  Var r = push(std::move(out), needs(a) || needs(b));
  if (node(r.id).requires_grad) {
    node(r.id).backward = [this, a, b, r] {
      const double g = node(r.id).grad(0, 0);
      const Matrix diff = (val(a.id) - val(b.id)) * (2.0 * g);
      if (needs(a)) accumulate(a.id, diff);
      if (needs(b)) accumulate(b.id, -diff);
    };
  }
  return r;
}

Var Tape::softmax_cross_entropy(Var logits, std::vector<int> targets) {
  const Matrix& L = val(logits.id);
  if (static_cast<Eigen::Index>(targets.size()) != L.rows()) {
    throw ContractError("softmax_cross_entropy: one target per row required");
  }
  const bool rec = needs(logits);
  Matrix probs = rec ? Matrix(L.rows(), L.cols()) : Matrix();
  double total = 0.0;
  for (Eigen::Index i = 0; i < L.rows(); ++i) {
    const int t = targets[static_cast<std::size_t>(i)];
    if (t < 0) {
      if (rec) probs.row(i).setZero();
      continue;
    }
    if (t >= L.cols()) throw ContractError("softmax_cross_entropy: target out of range");
    const double mx = L.row(i).maxCoeff();
    const double lse = mx + std::log((L.row(i).array() - mx).exp().sum());
    total += lse - L(i, t);
    if (rec) {
      probs.row(i) = (L.row(i).array() - lse).exp();
      probs(i, t) -= 1.0;
    }
  }
  Matrix out(1, 1);
  out(0, 0) = total;
  Var r = push(std::move(out), rec);
  if (rec) {
    node(r.id).backward = [this, logits, r, p = std::move(probs)] {
      accumulate(logits.id, p * node(r.id).grad(0, 0));
    };
  }
  return r;
}

}  // namespace sed::nn
