#include "sed/nn/layers.hpp"

#include <cmath>

#include "sed/errors.hpp"

namespace sed::nn {

Var ForwardMode::apply_dropout(Tape& tape, Var x) const {
  if (!training || dropout <= 0.0) return x;
  if (rng == nullptr) throw ContractError("training mode with dropout requires an RNG");
  return tape.dropout(x, dropout, *rng);
}

Matrix glorot_uniform(int rows, int cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Linear Linear::create(ParameterStore& store, const std::string& name, int in, int out, Rng& rng,
                      bool zero_init) {
  Linear l;
  l.in = in;
  l.out = out;
  l.weight = store.add(name + ".weight", zero_init ? Matrix::Zero(in, out) : glorot_uniform(in, out, rng));
  l.bias = store.add(name + ".bias", Matrix::Zero(1, out));
  return l;
}

Var Linear::operator()(Tape& tape, Var x) const {
  return tape.linear(x, tape.param(weight), tape.param(bias));
}

LayerNorm LayerNorm::create(ParameterStore& store, const std::string& name, int width) {
  LayerNorm ln;
  ln.gamma = store.add(name + ".gamma", Matrix::Ones(1, width));
  ln.beta = store.add(name + ".beta", Matrix::Zero(1, width));
  return ln;
}

Var LayerNorm::operator()(Tape& tape, Var x) const {
  return tape.layer_norm(x, tape.param(gamma), tape.param(beta));
}

TransformerBlock TransformerBlock::create(ParameterStore& store, const std::string& name,
                                          int d_model, int d_ff, int heads, Rng& rng) {
  if (d_model % heads != 0) {
    throw ConfigError("d_model (" + std::to_string(d_model) + ") not divisible by num_heads (" +
                      std::to_string(heads) + ")");
  }
  TransformerBlock b;
  b.heads = heads;
  b.attn_norm = LayerNorm::create(store, name + ".attn_norm", d_model);
  b.qkv = Linear::create(store, name + ".qkv", d_model, 3 * d_model, rng);
  b.attn_out = Linear::create(store, name + ".attn_out", d_model, d_model, rng);
  b.ff_norm = LayerNorm::create(store, name + ".ff_norm", d_model);
  b.ff_in = Linear::create(store, name + ".ff_in", d_model, d_ff, rng);
  b.ff_out = Linear::create(store, name + ".ff_out", d_ff, d_model, rng);
  return b;
}

Var TransformerBlock::operator()(Tape& tape, Var x, const Segments& segments, bool causal,
                                 const ForwardMode& mode) const {
  Var h = tape.attention(qkv(tape, attn_norm(tape, x)), segments, heads, causal);
  x = tape.add(x, mode.apply_dropout(tape, attn_out(tape, h)));
  Var f = ff_out(tape, mode.apply_dropout(tape, tape.relu(ff_in(tape, ff_norm(tape, x)))));
  return tape.add(x, mode.apply_dropout(tape, f));
}

}  // namespace sed::nn
