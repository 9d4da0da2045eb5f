#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "json.hpp"
#include "sed/baselines.hpp"
#include "sed/latent_diffusion.hpp"
#include "sed/savae.hpp"
#include "sed/sparse_data.hpp"

namespace sed {

/// Optimisation settings shared by every training stage.
struct TrainingConfig {
  long steps = 20000;
  int batch_size = 64;
  /// Peak (or constant) learning rate.
  double learning_rate = 1e-4;
  /// "constant" or "warmup_exponential".
  std::string lr_schedule = "constant";
  long warmup_steps = 0;
  double final_lr_ratio = 0.1;
  double grad_clip = 1.0;
  double ema_decay = 0.9999;
  bool ema_warmup = true;
  long log_every = 1;

  double learning_rate_at(long step) const;
  void validate(std::string_view where) const;
  nlohmann::json to_json() const;
  static TrainingConfig from_json(const nlohmann::json& j, TrainingConfig defaults, std::string_view where);
};

struct SamplingConfig {
  std::string sampler = "ddim";
  /// 0 = all T steps.
  int steps = 0;
  /// Cap on generated pairs per SED sample; 0 = min(s, max_sequence_length).
  int max_len = 0;
  /// Restrict greedy decoding to ascending dimensions.
  bool constrained = false;

  void validate() const;
  nlohmann::json to_json() const;
  static SamplingConfig from_json(const nlohmann::json& j);
};

struct EvalConfig {
  int histogram_bins = 20;
  /// Subsample cap for the O(n^2) MMD.
  int mmd_max_samples = 1000;
  int rd_grid_points = 50;
  int rd_mc_samples = 16;
  /// Data rows used for the rate-distortion estimate.
  int rd_max_samples = 256;

  void validate() const;
  nlohmann::json to_json() const;
  static EvalConfig from_json(const nlohmann::json& j);
};

/// Everything a CLI command needs. Serialization is lossless and the content
/// hash is taken over canonical (key-sorted) JSON.
struct RunConfig {
  std::string model_kind = "sed";  // sed | ddpm-dense | ldm-dense | dense-vae
  std::uint64_t seed = 0;
  std::string out_dir = "runs/default";

  /// Exactly one data source: a generator spec or a JSON-lines file.
  std::optional<DatasetSpec> dataset = DatasetSpec{};
  std::string data_path;
  ScalingScheme scaling = ScalingScheme::max_scale;

  savae::SavaeConfig savae;
  diffusion::BackboneConfig latent_backbone;
  baselines::DenseDmConfig dense_dm;
  baselines::DenseVaeConfig dense_vae;
  int diffusion_steps = 1000;  // T
  /// Train diffusion on z = mu (false) or on posterior samples (true).
  bool diffusion_use_sampled_latents = false;
  double self_condition_prob = 0.5;

  TrainingConfig savae_training = default_savae_training();
  TrainingConfig diffusion_training = default_diffusion_training();
  TrainingConfig dense_training = default_diffusion_training();
  TrainingConfig vae_training = default_vae_training();
  SamplingConfig sampling;
  EvalConfig evaluation;

  static TrainingConfig default_savae_training();
  static TrainingConfig default_diffusion_training();
  static TrainingConfig default_vae_training();

  void validate() const;
  nlohmann::json to_json() const;
  /// Strict: unknown keys anywhere are a ConfigError. Missing keys take defaults.
  static RunConfig from_json(const nlohmann::json& j);
  std::string hash() const;
};

RunConfig load_run_config(const std::string& path);

/// Default config plus a short description of every key.
nlohmann::json config_schema();

}  // namespace sed
