#include "sed/baselines.hpp"

#include <algorithm>
#include <cmath>

#include "sed/errors.hpp"
#include "sed/json_util.hpp"

namespace sed::baselines {

using nn::Tape;
using nn::Var;

diffusion::BackboneConfig DenseDmConfig::backbone_config() const {
  diffusion::BackboneConfig b;
  b.data_dim = ambient_dim;
  b.widths = widths;
  b.time_embed_dim = time_embed_dim;
  b.dropout = dropout;
  b.self_condition = false;
  b.prediction = diffusion::Prediction::eps;
  return b;
}

void DenseDmConfig::validate() const {
  if (ambient_dim <= 0) throw ConfigError("dense_dm.ambient_dim must be positive");
  backbone_config().validate();
}

nlohmann::json DenseDmConfig::to_json() const {
  return {{"ambient_dim", ambient_dim},
          {"widths", widths},
          {"time_embed_dim", time_embed_dim},
          {"dropout", dropout}};
}

DenseDmConfig DenseDmConfig::from_json(const nlohmann::json& j) {
  require_known_keys(j, {"ambient_dim", "widths", "time_embed_dim", "dropout"}, "dense_dm");
  DenseDmConfig c;
  read_optional(j, "ambient_dim", c.ambient_dim, "dense_dm");
  read_optional(j, "widths", c.widths, "dense_dm");
  read_optional(j, "time_embed_dim", c.time_embed_dim, "dense_dm");
  read_optional(j, "dropout", c.dropout, "dense_dm");
  return c;
}

diffusion::Backbone make_dense_backbone(const DenseDmConfig& cfg, std::uint64_t init_seed) {
  cfg.validate();
  return diffusion::Backbone(cfg.backbone_config(), init_seed);
}

double dense_ddpm_loss(const diffusion::Backbone& model, const diffusion::NoiseSchedule& schedule,
                       const Matrix& x0, Rng& rng) {
  if (model.config().prediction != diffusion::Prediction::eps) {
    throw ContractError("dense_ddpm_loss: model must use eps-prediction");
  }
  return diffusion::diffusion_loss(model, schedule, x0, rng);
}

std::vector<DenseSample> dense_sample(const diffusion::Backbone& model,
                                      const diffusion::NoiseSchedule& schedule,
                                      const diffusion::SampleOptions& options, int n,
                                      std::uint64_t seed, const nn::ParameterStore* weights) {
  return from_matrix(diffusion::sample(model, schedule, options, n, seed, weights));
}

// ---------------------------------------------------------------------------

void DenseVaeConfig::validate() const {
  if (ambient_dim <= 0) throw ConfigError("dense_vae.ambient_dim must be positive");
  if (latent_dim < 1 || latent_dim > ambient_dim) {
    throw ConfigError("dense_vae.latent_dim must lie in [1, ambient_dim]");
  }
  for (int w : widths) {
    if (w <= 0) throw ConfigError("dense_vae.widths must be positive");
  }
  if (beta < 0.0) throw ConfigError("dense_vae.beta must be non-negative");
}

nlohmann::json DenseVaeConfig::to_json() const {
  return {{"ambient_dim", ambient_dim}, {"widths", widths}, {"latent_dim", latent_dim}, {"beta", beta}};
}

DenseVaeConfig DenseVaeConfig::from_json(const nlohmann::json& j) {
  require_known_keys(j, {"ambient_dim", "widths", "latent_dim", "beta"}, "dense_vae");
  DenseVaeConfig c;
  read_optional(j, "ambient_dim", c.ambient_dim, "dense_vae");
  read_optional(j, "widths", c.widths, "dense_vae");
  read_optional(j, "latent_dim", c.latent_dim, "dense_vae");
  read_optional(j, "beta", c.beta, "dense_vae");
  return c;
}

DenseVae::DenseVae(DenseVaeConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng = derive_rng(init_seed, 0xDE5E);
  int in = cfg_.ambient_dim;
  for (std::size_t i = 0; i < cfg_.widths.size(); ++i) {
    encoder_.push_back(nn::Linear::create(params_, "encoder" + std::to_string(i), in, cfg_.widths[i], rng));
    in = cfg_.widths[i];
  }
  mu_head_ = nn::Linear::create(params_, "encoder.mu", in, cfg_.latent_dim, rng);
  log_var_head_ = nn::Linear::create(params_, "encoder.log_var", in, cfg_.latent_dim, rng);
  in = cfg_.latent_dim;
  for (std::size_t i = cfg_.widths.size(); i-- > 0;) {
    decoder_.push_back(nn::Linear::create(params_, "decoder" + std::to_string(i), in, cfg_.widths[i], rng));
    in = cfg_.widths[i];
  }
  output_ = nn::Linear::create(params_, "decoder.output", in, cfg_.ambient_dim, rng);
}

DenseVae::EncoderGraph DenseVae::encode_graph(Tape& tape, Var x, const Matrix* noise) const {
  if (tape.value(x).cols() != cfg_.ambient_dim) throw ContractError("dense_vae: input width mismatch");
  Var h = x;
  for (const auto& layer : encoder_) h = tape.silu(layer(tape, h));
  EncoderGraph g;
  g.mu = mu_head_(tape, h);
  g.log_var = log_var_head_(tape, h);
  if (noise != nullptr) {
    if (noise->rows() != tape.value(x).rows() || noise->cols() != cfg_.latent_dim) {
      throw ContractError("dense_vae: noise must be batch x latent_dim");
    }
    g.z = tape.add(g.mu, tape.mul(tape.exp(tape.scale(g.log_var, 0.5)), tape.constant(*noise)));
  } else {
    g.z = g.mu;
  }
  return g;
}

Var DenseVae::decode_graph(Tape& tape, Var z) const {
  if (tape.value(z).cols() != cfg_.latent_dim) throw ContractError("dense_vae: latent width mismatch");
  Var h = z;
  for (const auto& layer : decoder_) h = tape.silu(layer(tape, h));
  return output_(tape, h);
}

DenseVae::LossGraph DenseVae::loss_graph(Tape& tape, const Matrix& x, const Matrix* noise) const {
  if (x.rows() == 0) throw ContractError("dense_vae: empty batch");
  const double inv_batch = 1.0 / static_cast<double>(x.rows());
  Var xv = tape.constant(x);
  EncoderGraph enc = encode_graph(tape, xv, noise);
  Var recon = decode_graph(tape, enc.z);
  LossGraph g;
  g.reconstruction = tape.scale(tape.squared_error(recon, xv), inv_batch);
  Var kl_terms = tape.sub(tape.add(tape.mul(enc.mu, enc.mu), tape.exp(enc.log_var)), enc.log_var);
  g.kl = tape.scale(tape.add_scalar(tape.sum(kl_terms), -static_cast<double>(x.rows()) * cfg_.latent_dim),
                    0.5 * inv_batch);
  g.total = tape.add(g.reconstruction, tape.scale(g.kl, cfg_.beta));
  return g;
}

Matrix DenseVae::encode_means(const Matrix& x) const {
  Tape tape = Tape::inference(params_);
  return tape.value(encode_graph(tape, tape.constant(x), nullptr).mu);
}

Matrix DenseVae::decode(const Matrix& z) const {
  Tape tape = Tape::inference(params_);
  return tape.value(decode_graph(tape, tape.constant(z)));
}

Matrix DenseVae::roundtrip(const Matrix& x, const Matrix* noise) const {
  Tape tape = Tape::inference(params_);
  EncoderGraph enc = encode_graph(tape, tape.constant(x), noise);
  return tape.value(decode_graph(tape, enc.z));
}

void DenseVae::to_checkpoint(Checkpoint& ckpt, const std::string& prefix) const {
  ckpt.put_parameters(params_, prefix);
}

DenseVae DenseVae::from_checkpoint(const Checkpoint& ckpt, const nlohmann::json& cfg,
                                   const std::string& prefix) {
  DenseVae vae(DenseVaeConfig::from_json(cfg), 0);
  ckpt.get_parameters(vae.params_, prefix);
  return vae;
}

DenseVaeConfig match_parameter_budget(int ambient_dim, int latent_dim, double beta,
                                      std::size_t target_params) {
  auto count = [&](long w) {
    const long h = std::max(1L, w / 2);
    const long s = ambient_dim;
    const long l = latent_dim;
    const long enc = s * w + w + w * h + h + 2 * (h * l + l);
    const long dec = l * h + h + h * w + w + w * s + s;
    return enc + dec;
  };
  long best = 2;
  for (long w = 2; w <= 8192; ++w) {
    const auto target = static_cast<long>(target_params);
    if (std::labs(count(w) - target) < std::labs(count(best) - target)) best = w;
  }
  DenseVaeConfig c;
  c.ambient_dim = ambient_dim;
  c.latent_dim = latent_dim;
  c.beta = beta;
  c.widths = {static_cast<int>(best), static_cast<int>(std::max(1L, best / 2))};
  return c;
}

// ---------------------------------------------------------------------------

ThresholdCalibration calibrate_threshold(double target_sparsity, std::span<const double> values) {
  if (!(target_sparsity >= 0.0 && target_sparsity <= 1.0)) {
    throw ContractError("threshold: target sparsity must lie in [0, 1]");
  }
  if (values.empty()) throw ContractError("threshold: calibration set is empty");
  std::vector<double> mags(values.size());
  std::transform(values.begin(), values.end(), mags.begin(), [](double v) { return std::abs(v); });
  std::sort(mags.begin(), mags.end());
  const double n = static_cast<double>(mags.size());
  const auto k = static_cast<std::size_t>(std::ceil(target_sparsity * n - 1e-9));
  ThresholdCalibration c;
  c.target_sparsity = target_sparsity;
  c.tau = k == 0 ? 0.0 : mags[std::min(k, mags.size()) - 1];
  return c;
}

ThresholdCalibration threshold_calibrate(std::span<const SparseSample> training,
                                         std::span<const DenseSample> calibration) {
  if (training.empty()) throw ContractError("threshold: training set is empty");
  std::vector<double> pooled;
  for (const auto& s : calibration) pooled.insert(pooled.end(), s.data().begin(), s.data().end());
  return calibrate_threshold(mean_sparsity(training), pooled);
}

DenseSample apply_threshold(const DenseSample& sample, const ThresholdCalibration& calib) {
  std::vector<double> out(sample.data().begin(), sample.data().end());
  for (double& v : out) {
    if (std::abs(v) <= calib.tau) v = 0.0;
  }
  return DenseSample(std::move(out));
}

std::vector<DenseSample> apply_threshold(std::span<const DenseSample> samples,
                                         const ThresholdCalibration& calib) {
  std::vector<DenseSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(apply_threshold(s, calib));
  return out;
}

// ---------------------------------------------------------------------------

Matrix to_matrix(std::span<const DenseSample> samples) {
  if (samples.empty()) return Matrix(0, 0);
  Matrix m(static_cast<Eigen::Index>(samples.size()), samples.front().size());
  for (std::size_t r = 0; r < samples.size(); ++r) {
    if (samples[r].size() != m.cols()) throw DataError("dense samples differ in length");
    for (int c = 0; c < m.cols(); ++c) m(static_cast<Eigen::Index>(r), c) = samples[r][static_cast<std::size_t>(c)];
  }
  return m;
}

Matrix to_matrix(std::span<const SparseSample> samples) {
  if (samples.empty()) return Matrix(0, 0);
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(samples.size()), samples.front().ambient_dim());
  for (std::size_t r = 0; r < samples.size(); ++r) {
    if (samples[r].ambient_dim() != m.cols()) throw DataError("sparse samples differ in ambient_dim");
    for (int i = 0; i < samples[r].length(); ++i) {
      m(static_cast<Eigen::Index>(r), samples[r].dims()[static_cast<std::size_t>(i)]) =
          samples[r].values()[static_cast<std::size_t>(i)];
    }
  }
  return m;
}

std::vector<DenseSample> from_matrix(const Matrix& m) {
  std::vector<DenseSample> out;
  out.reserve(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    out.emplace_back(std::vector<double>(m.row(r).data(), m.row(r).data() + m.cols()));
  }
  return out;
}

}  // namespace sed::baselines
