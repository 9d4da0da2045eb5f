#pragma once

#include <string>

#include "sed/nn/parameters.hpp"
#include "sed/nn/tape.hpp"
#include "sed/random.hpp"

namespace sed::nn {

/// Dropout switch threaded through forward passes.
struct ForwardMode {
  bool training = false;
  double dropout = 0.0;
  Rng* rng = nullptr;

  static ForwardMode eval() { return {}; }
  static ForwardMode train(double p, Rng& rng) { return {true, p, &rng}; }
  Var apply_dropout(Tape& tape, Var x) const;
};

/// Uniform Glorot initialisation.
Matrix glorot_uniform(int rows, int cols, Rng& rng);

struct Linear {
  std::size_t weight = 0;
  std::size_t bias = 0;
  int in = 0;
  int out = 0;

  static Linear create(ParameterStore& store, const std::string& name, int in, int out, Rng& rng,
                       bool zero_init = false);
  Var operator()(Tape& tape, Var x) const;
};

struct LayerNorm {
  std::size_t gamma = 0;
  std::size_t beta = 0;

  static LayerNorm create(ParameterStore& store, const std::string& name, int width);
  Var operator()(Tape& tape, Var x) const;
};

/// Pre-norm Transformer block (self-attention + ReLU feed-forward).
struct TransformerBlock {
  LayerNorm attn_norm;
  Linear qkv;
  Linear attn_out;
  LayerNorm ff_norm;
  Linear ff_in;
  Linear ff_out;
  int heads = 1;

  static TransformerBlock create(ParameterStore& store, const std::string& name, int d_model,
                                 int d_ff, int heads, Rng& rng);
  Var operator()(Tape& tape, Var x, const Segments& segments, bool causal,
                 const ForwardMode& mode) const;
};

}  // namespace sed::nn
