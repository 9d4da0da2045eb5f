#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sed/baselines.hpp"
#include "sed/latent_diffusion.hpp"
#include "sed/run_config.hpp"
#include "sed/savae.hpp"

namespace sed::training {

using nn::Matrix;

/// Per-step loss components; serialized as CSV with a `step` column first.
struct TrainingCurve {
  std::vector<std::string> columns;
  std::vector<long> steps;
  std::vector<std::vector<double>> rows;

  void add(long step, std::vector<double> values);
  std::string to_csv() const;
};

struct SavaeRun {
  savae::Savae model;
  nn::ParameterStore ema;
  TrainingCurve curve;
  savae::LossBreakdown last;
};

/// Teacher-forced training on minibatches drawn with replacement; the
/// posterior is sampled with the reparameterization trick.
SavaeRun train_savae(const savae::SavaeConfig& cfg, const TrainingConfig& tc,
                     std::span<const SparseSample> data, std::uint64_t seed);

struct BackboneRun {
  diffusion::Backbone model;
  diffusion::EmaState ema;
  TrainingCurve curve;
  double last_loss = 0.0;
};

/// Trains a denoiser on rows of `data` (latent codes or dense vectors).
BackboneRun train_backbone(const diffusion::BackboneConfig& cfg, const TrainingConfig& tc,
                           const diffusion::NoiseSchedule& schedule, const Matrix& data,
                           double self_cond_prob, std::uint64_t seed);

struct VaeRun {
  baselines::DenseVae model;
  nn::ParameterStore ema;
  TrainingCurve curve;
};

VaeRun train_dense_vae(const baselines::DenseVaeConfig& cfg, const TrainingConfig& tc, const Matrix& data,
                       std::uint64_t seed);

/// Copy of `model` evaluated with `weights` (same layout), e.g. EMA shadow.
template <typename Model>
Model with_weights(const Model& model, const nn::ParameterStore& weights) {
  Model copy = model;
  copy.parameters().assign_values(weights);
  return copy;
}

/// Encoder means of `data` in batches (or posterior samples when
/// `sample_seed` is given).
Matrix encode_dataset(const savae::Savae& model, std::span<const SparseSample> data, int batch_size = 256,
                      const std::uint64_t* sample_seed = nullptr);

}  // namespace sed::training
