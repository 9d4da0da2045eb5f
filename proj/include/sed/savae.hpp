#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"
#include "sed/checkpoint.hpp"
#include "sed/nn/layers.hpp"
#include "sed/sparse_data.hpp"

namespace sed::savae {

struct SavaeConfig {
  int ambient_dim = 100;
  int d_model = 64;
  int d_ff = 256;
  int num_heads = 4;
  int num_layers = 2;
  double dropout = 0.1;
  double beta = 1e-6;
  int latent_dim = 32;
  int max_sequence_length = 256;
  double dimension_base = 20000.0;
  /// Fixed isotropic variance of the value likelihood; the value term is
  /// sum (v - mu)^2 / value_variance.
  double value_variance = 1.0;

  /// s dimension categories + EOS + start marker.
  int vocabulary_size() const { return ambient_dim + 2; }
  int eos_token() const { return ambient_dim; }
  int start_token() const { return ambient_dim + 1; }
  EncodingConfig encoding() const { return {d_model, dimension_base}; }

  void validate() const;
  nlohmann::json to_json() const;
  static SavaeConfig from_json(const nlohmann::json& j);
};

struct PosteriorParams {
  std::vector<double> mu;
  std::vector<double> log_var;
};

struct LatentState {
  std::vector<double> z;
};

struct EncodedSample {
  PosteriorParams posterior;
  LatentState latent;
};

/// Logits over s dimensions + EOS (index s) and the Gaussian value mean.
struct DecoderStepOutput {
  std::vector<double> dim_logits;
  double value_mean = 0.0;
};

struct LossBreakdown {
  double dim_nll = 0.0;
  double value_mse = 0.0;
  double kl = 0.0;
  double total = 0.0;
};

/// Greedy decoder output, kept in generation order.
struct GeneratedSample {
  int ambient_dim = 1;
  std::vector<int> dims;
  std::vector<double> values;
  bool hit_max_len = false;

  /// Strictly ascending with no duplicates.
  bool valid_order() const;
  /// Densify; repeated dims resolve last-write-wins.
  DenseSample to_dense() const;
  /// Canonical form of to_dense().
  SparseSample to_sparse() const;
};

/// KL(N(mu, diag exp(log_var)) || N(0, I)).
double kl_gaussian(const PosteriorParams& posterior);

/// Per-sample loss from step outputs (l + 1 steps, the last one predicting EOS).
LossBreakdown savae_loss(std::span<const DecoderStepOutput> outputs, const SparseSample& target,
                         const PosteriorParams& posterior, const SavaeConfig& cfg);

class Savae {
 public:
  Savae(SavaeConfig cfg, std::uint64_t init_seed);

  const SavaeConfig& config() const { return cfg_; }
  nn::ParameterStore& parameters() { return params_; }
  const nn::ParameterStore& parameters() const { return params_; }

  // --- value-level operations (inference, dropout off)

  /// `noise` (batch x latent_dim) gives z = mu + exp(log_var / 2) * noise;
  /// nullptr gives the deterministic z = mu.
  std::vector<EncodedSample> encode(std::span<const SparseSample> batch,
                                    const nn::Matrix* noise = nullptr) const;
  /// Deterministic latent means as a batch x latent_dim matrix.
  nn::Matrix encode_means(std::span<const SparseSample> batch) const;
  std::vector<DecoderStepOutput> decode_teacher_forced(const LatentState& z,
                                                       const SparseSample& target) const;
  /// Argmax decoding until EOS or max_len pairs. Unconstrained by default;
  /// `constrained` masks every dim <= the previously emitted one.
  GeneratedSample decode_greedy(const LatentState& z, int max_len, bool constrained = false) const;
  /// Batched greedy decoding of each row of `latents`.
  std::vector<GeneratedSample> decode_greedy_batch(const nn::Matrix& latents, int max_len,
                                                   bool constrained = false) const;

  // --- graph-level building blocks (training, gradient checks)

  struct EncoderGraph {
    nn::Var pooled;
    nn::Var mu;
    nn::Var log_var;
    nn::Var z;
  };
  EncoderGraph encode_graph(nn::Tape& tape, std::span<const SparseSample> batch,
                            const nn::Matrix* noise, const nn::ForwardMode& mode) const;
  /// Encoder over token sequences in any order (the encoder has no notion of
  /// position, so order only matters up to floating-point summation).
  EncoderGraph encode_sequences_graph(nn::Tape& tape, std::span<const std::vector<int>> dims,
                                      std::span<const std::vector<double>> values,
                                      const nn::Matrix* noise, const nn::ForwardMode& mode) const;

  struct DecoderGraph {
    nn::Var logits;       // rows = sum(l_b + 1), cols = s + 1
    nn::Var value_means;  // rows = sum(l_b + 1), cols = 1
    nn::Segments segments;
  };
  /// Teacher-forced decoder over generation-order token sequences (dims may
  /// be unsorted here; callers enforce canonical order where required).
  DecoderGraph decode_graph(nn::Tape& tape, nn::Var z, std::span<const std::vector<int>> dims,
                            std::span<const std::vector<double>> values,
                            const nn::ForwardMode& mode, bool last_row_only = false) const;

  struct LossGraph {
    nn::Var total;
    nn::Var dim_nll;
    nn::Var value_mse;
    nn::Var kl;
  };
  /// Batch-mean loss. `noise` as in encode(); nullptr trains on z = mu.
  LossGraph loss_graph(nn::Tape& tape, std::span<const SparseSample> batch,
                       const nn::Matrix* noise, const nn::ForwardMode& mode) const;

  Checkpoint to_checkpoint() const;
  static Savae from_checkpoint(const Checkpoint& ckpt, const std::string& prefix = "params/");

 private:
  nn::Var embed_tokens(nn::Tape& tape, std::span<const int> dims,
                       std::span<const double> values) const;

  SavaeConfig cfg_;
  nn::ParameterStore params_;
  nn::Linear value_embed_;
  std::size_t encoder_start_ = 0;
  std::vector<nn::TransformerBlock> encoder_;
  nn::LayerNorm encoder_norm_;
  nn::Linear mu_head_;
  nn::Linear log_var_head_;
  nn::Linear latent_to_start_;
  std::vector<nn::TransformerBlock> decoder_;
  nn::LayerNorm decoder_norm_;
  nn::Linear dim_head_;
  nn::Linear value_head_;
};

}  // namespace sed::savae
