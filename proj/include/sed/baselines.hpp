#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"
#include "sed/latent_diffusion.hpp"
#include "sed/sparse_data.hpp"

namespace sed::baselines {

using nn::Matrix;

// ---------------------------------------------------------------------------
// Dense diffusion on the full input vector (eps-prediction).

struct DenseDmConfig {
  int ambient_dim = 100;
  std::vector<int> widths{256, 128};
  int time_embed_dim = 64;
  double dropout = 0.0;

  diffusion::BackboneConfig backbone_config() const;
  void validate() const;
  nlohmann::json to_json() const;
  static DenseDmConfig from_json(const nlohmann::json& j);
};

diffusion::Backbone make_dense_backbone(const DenseDmConfig& cfg, std::uint64_t init_seed);

/// Batch mean of ||eps - g(x_t, t)||^2.
double dense_ddpm_loss(const diffusion::Backbone& model, const diffusion::NoiseSchedule& schedule,
                       const Matrix& x0, Rng& rng);

/// Same sampler as the latent model, with x0 = (x_t - sqrt(1 - gamma) eps) / sqrt(gamma).
std::vector<DenseSample> dense_sample(const diffusion::Backbone& model,
                                      const diffusion::NoiseSchedule& schedule,
                                      const diffusion::SampleOptions& options, int n,
                                      std::uint64_t seed, const nn::ParameterStore* weights = nullptr);

// ---------------------------------------------------------------------------
// Dense MLP VAE.

struct DenseVaeConfig {
  int ambient_dim = 100;
  /// Encoder hidden widths; the decoder uses them in reverse.
  std::vector<int> widths{256, 128};
  int latent_dim = 32;
  double beta = 1e-6;

  void validate() const;
  nlohmann::json to_json() const;
  static DenseVaeConfig from_json(const nlohmann::json& j);
};

class DenseVae {
 public:
  DenseVae(DenseVaeConfig cfg, std::uint64_t init_seed);

  const DenseVaeConfig& config() const { return cfg_; }
  nn::ParameterStore& parameters() { return params_; }
  const nn::ParameterStore& parameters() const { return params_; }

  struct EncoderGraph {
    nn::Var mu;
    nn::Var log_var;
    nn::Var z;
  };
  /// `noise` (batch x latent) reparameterizes; nullptr gives z = mu.
  EncoderGraph encode_graph(nn::Tape& tape, nn::Var x, const Matrix* noise) const;
  nn::Var decode_graph(nn::Tape& tape, nn::Var z) const;

  struct LossGraph {
    nn::Var total;
    nn::Var reconstruction;  // batch mean of sum (x - x_hat)^2
    nn::Var kl;
  };
  LossGraph loss_graph(nn::Tape& tape, const Matrix& x, const Matrix* noise) const;

  Matrix encode_means(const Matrix& x) const;
  Matrix decode(const Matrix& z) const;
  /// Encode -> (optionally) reparameterize -> decode.
  Matrix roundtrip(const Matrix& x, const Matrix* noise = nullptr) const;

  void to_checkpoint(Checkpoint& ckpt, const std::string& prefix) const;
  static DenseVae from_checkpoint(const Checkpoint& ckpt, const nlohmann::json& cfg,
                                  const std::string& prefix);

 private:
  DenseVaeConfig cfg_;
  nn::ParameterStore params_;
  std::vector<nn::Linear> encoder_;
  nn::Linear mu_head_;
  nn::Linear log_var_head_;
  std::vector<nn::Linear> decoder_;
  nn::Linear output_;
};

/// Widest two-layer encoder [w, w/2] whose parameter count is closest to
/// `target_params`.
DenseVaeConfig match_parameter_budget(int ambient_dim, int latent_dim, double beta,
                                      std::size_t target_params);

// ---------------------------------------------------------------------------
// Post-hoc thresholding.

struct ThresholdCalibration {
  double tau = 0.0;
  double target_sparsity = 0.0;
};

/// Smallest tau in the pooled |values| such that zeroing |x| <= tau reaches a
/// zero fraction of at least `target_sparsity`.
ThresholdCalibration calibrate_threshold(double target_sparsity, std::span<const double> values);
/// target_sparsity = mean sparsity of `training`; values pooled from `calibration`.
ThresholdCalibration threshold_calibrate(std::span<const SparseSample> training,
                                         std::span<const DenseSample> calibration);

DenseSample apply_threshold(const DenseSample& sample, const ThresholdCalibration& calib);
std::vector<DenseSample> apply_threshold(std::span<const DenseSample> samples,
                                         const ThresholdCalibration& calib);

// ---------------------------------------------------------------------------

Matrix to_matrix(std::span<const DenseSample> samples);
Matrix to_matrix(std::span<const SparseSample> samples);
std::vector<DenseSample> from_matrix(const Matrix& m);

}  // namespace sed::baselines
