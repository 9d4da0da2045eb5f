#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sed/checkpoint.hpp"
#include "sed/nn/layers.hpp"

namespace sed::diffusion {

using nn::Matrix;

inline constexpr double kCosineOffset = 0.008;
inline constexpr double kGammaClip = 1e-5;

/// Cosine schedule f(t)/f(0) with f(t) = cos^2(((t/T + s0)/(1 + s0)) * pi/2).
/// With `clip`, the result is clamped to [1e-5, 1 - 1e-5].
double cosine_gamma(int t, int T, bool clip = true);

struct NoiseSchedule {
  int T = 1000;
  std::vector<double> gamma;    // T + 1 entries, clipped
  std::vector<double> log_snr;  // ln(gamma / (1 - gamma))

  static NoiseSchedule cosine(int T);
  /// Per-step retention alpha_t = gamma_t / gamma_s between s < t.
  double alpha(int t, int s) const;
};

/// z_t = sqrt(gamma_t) z0 + sqrt(1 - gamma_t) eps.
std::vector<double> forward_diffuse(std::span<const double> z0, int t, std::span<const double> eps,
                                    const NoiseSchedule& schedule);
/// Row-wise forward process with a timestep per row.
Matrix forward_diffuse(const Matrix& z0, std::span<const int> t, const Matrix& eps,
                       const NoiseSchedule& schedule);

enum class Prediction { x0, eps };
enum class SamplerKind { ddpm, ddim };

std::string to_string(Prediction p);
Prediction parse_prediction(std::string_view name);
std::string to_string(SamplerKind k);
SamplerKind parse_sampler_kind(std::string_view name);

struct BackboneConfig {
  int data_dim = 32;
  /// Down-path widths; the up path mirrors them with additive skips.
  std::vector<int> widths{256, 256, 128};
  int time_embed_dim = 64;
  double dropout = 0.0;
  bool self_condition = true;
  Prediction prediction = Prediction::x0;

  int input_width() const { return self_condition ? 2 * data_dim : data_dim; }
  void validate() const;
  nlohmann::json to_json() const;
  static BackboneConfig from_json(const nlohmann::json& j);
};

/// Sinusoidal features of log-SNR(t), one row per entry of `t`.
Matrix time_features(const NoiseSchedule& schedule, std::span<const int> t, int dim);

/// MLP U-Net f(x_t, t, x~0). Each block is silu(W h + P temb), where temb is
/// a small MLP over the log-SNR features; the output layer starts at zero.
class Backbone {
 public:
  Backbone(BackboneConfig cfg, std::uint64_t init_seed);

  const BackboneConfig& config() const { return cfg_; }
  nn::ParameterStore& parameters() { return params_; }
  const nn::ParameterStore& parameters() const { return params_; }

  /// `self_cond` is ignored (and may be invalid) when self-conditioning is off.
  nn::Var forward_graph(nn::Tape& tape, nn::Var x_t, const Matrix& time_feats, nn::Var self_cond,
                        const nn::ForwardMode& mode) const;
  /// Inference forward; `self_cond` nullptr means zeros.
  Matrix predict(const Matrix& x_t, const Matrix& time_feats, const Matrix* self_cond = nullptr) const;
  /// As predict(), evaluated with another parameter set of the same layout
  /// (used for EMA weights).
  Matrix predict_with(const nn::ParameterStore& weights, const Matrix& x_t, const Matrix& time_feats,
                      const Matrix* self_cond = nullptr) const;

  void to_checkpoint(Checkpoint& ckpt, const std::string& prefix) const;
  static Backbone from_checkpoint(const Checkpoint& ckpt, const nlohmann::json& cfg,
                                  const std::string& prefix);

 private:
  BackboneConfig cfg_;
  nn::ParameterStore params_;
  nn::Linear time_mlp_;
  nn::Linear input_;
  std::vector<nn::Linear> down_;
  std::vector<nn::Linear> up_;
  std::vector<nn::Linear> time_proj_;  // input, down..., up...
  nn::Linear output_;
};

/// Random inputs of one training step.
struct LossDraws {
  std::vector<int> t;              // uniform over {1..T}
  Matrix eps;                      // N(0, I)
  std::vector<bool> self_cond;     // true: condition on a stop-gradient first pass
};

LossDraws draw_loss_inputs(int batch, int dim, const NoiseSchedule& schedule, Rng& rng,
                           double self_cond_prob = 0.5);

/// Batch mean of ||target - f||^2, where target is x0 or eps depending on the
/// backbone's parameterization. Gradients reach the backbone parameters when
/// `tape` records into them; the self-conditioning input is a constant.
nn::Var diffusion_loss_graph(nn::Tape& tape, const Backbone& backbone, const NoiseSchedule& schedule,
                             const Matrix& x0, const LossDraws& draws, const nn::ForwardMode& mode);
double diffusion_loss(const Backbone& backbone, const NoiseSchedule& schedule, const Matrix& x0,
                      const LossDraws& draws);
double diffusion_loss(const Backbone& backbone, const NoiseSchedule& schedule, const Matrix& x0,
                      Rng& rng);

/// Converts a backbone output into the clean-signal estimate.
Matrix predicted_x0(Prediction p, const Matrix& output, const Matrix& x_t, std::span<const int> t,
                    const NoiseSchedule& schedule);

/// Any map (x_t, t, x~0) -> x0 estimate; `self_cond` is nullptr at the first step.
using X0Predictor =
    std::function<Matrix(const Matrix& x_t, std::span<const int> t, const Matrix* self_cond)>;

struct SampleOptions {
  SamplerKind kind = SamplerKind::ddim;
  /// Number of denoising steps; 0 means T. Fewer steps use an evenly strided
  /// subsequence of timesteps.
  int steps = 0;
  bool chain_self_condition = true;
};

/// Ancestral (DDPM) or deterministic (DDIM) sampling of n rows of width `dim`.
/// Chain c draws all its noise from derive_rng(seed, c). The last step
/// returns the clean estimate directly.
Matrix sample(const X0Predictor& predict, int dim, const NoiseSchedule& schedule,
              const SampleOptions& options, int n, std::uint64_t seed);
/// Samples with the backbone (optionally under `weights`, e.g. EMA shadow).
Matrix sample(const Backbone& backbone, const NoiseSchedule& schedule, const SampleOptions& options,
              int n, std::uint64_t seed, const nn::ParameterStore* weights = nullptr);

/// The timestep sequence visited by a sampler, from T down to 0.
std::vector<int> sampling_timesteps(int T, int steps);

// ---------------------------------------------------------------------------

/// shadow <- decay * shadow + (1 - decay) * params.
void ema_update(nn::ParameterStore& shadow, const nn::ParameterStore& params, double decay);

struct EmaState {
  nn::ParameterStore shadow;
  double decay = 0.9999;
  /// Effective decay min(decay, (1 + n) / (10 + n)) after n updates.
  bool warmup = false;
  long updates = 0;

  static EmaState track(const nn::ParameterStore& params, double decay, bool warmup);
  void update(const nn::ParameterStore& params);
  double effective_decay() const;
};

/// Per-coordinate standardization of latent codes.
struct LatentStats {
  std::vector<double> mean;
  std::vector<double> std_dev;

  static LatentStats fit(const Matrix& latents);
  static LatentStats identity(int dim);
  Matrix standardize(const Matrix& latents) const;
  Matrix destandardize(const Matrix& latents) const;

  void to_checkpoint(Checkpoint& ckpt, const std::string& prefix) const;
  static LatentStats from_checkpoint(const Checkpoint& ckpt, const std::string& prefix);
};

}  // namespace sed::diffusion
