#include "sed/latent_diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "sed/errors.hpp"
#include "sed/json_util.hpp"

namespace sed::diffusion {

using nn::Tape;
using nn::Var;

double cosine_gamma(int t, int T, bool clip) {
  if (T <= 0 || t < 0 || t > T) {
    throw ContractError("cosine_gamma: need 0 <= t <= T, got t=" + std::to_string(t) +
                        " T=" + std::to_string(T));
  }
  auto f = [&](double u) {
    const double c = std::cos((u + kCosineOffset) / (1.0 + kCosineOffset) * std::numbers::pi / 2.0);
    return c * c;
  };
  const double g = f(static_cast<double>(t) / T) / f(0.0);
  return clip ? std::clamp(g, kGammaClip, 1.0 - kGammaClip) : g;
}

NoiseSchedule NoiseSchedule::cosine(int T) {
  if (T <= 0) throw ConfigError("schedule: T must be positive");
  NoiseSchedule s;
  s.T = T;
  s.gamma.resize(static_cast<std::size_t>(T) + 1);
  s.log_snr.resize(static_cast<std::size_t>(T) + 1);
  for (int t = 0; t <= T; ++t) {
    const double g = cosine_gamma(t, T);
    s.gamma[static_cast<std::size_t>(t)] = g;
    s.log_snr[static_cast<std::size_t>(t)] = std::log(g / (1.0 - g));
  }
  return s;
}

double NoiseSchedule::alpha(int t, int s) const {
  return gamma[static_cast<std::size_t>(t)] / gamma[static_cast<std::size_t>(s)];
}

std::vector<double> forward_diffuse(std::span<const double> z0, int t, std::span<const double> eps,
                                    const NoiseSchedule& schedule) {
  if (z0.size() != eps.size()) throw ContractError("forward_diffuse: z0 and eps differ in size");
  if (t < 0 || t > schedule.T) throw ContractError("forward_diffuse: t out of range");
  const double g = schedule.gamma[static_cast<std::size_t>(t)];
  const double a = std::sqrt(g);
  const double b = std::sqrt(1.0 - g);
  std::vector<double> out(z0.size());
  for (std::size_t i = 0; i < z0.size(); ++i) out[i] = a * z0[i] + b * eps[i];
  return out;
}

Matrix forward_diffuse(const Matrix& z0, std::span<const int> t, const Matrix& eps,
                       const NoiseSchedule& schedule) {
  if (z0.rows() != eps.rows() || z0.cols() != eps.cols() ||
      static_cast<std::size_t>(z0.rows()) != t.size()) {
    throw ContractError("forward_diffuse: shape mismatch");
  }
  Matrix out(z0.rows(), z0.cols());
  for (Eigen::Index r = 0; r < z0.rows(); ++r) {
    const int tr = t[static_cast<std::size_t>(r)];
    if (tr < 0 || tr > schedule.T) throw ContractError("forward_diffuse: t out of range");
    const double g = schedule.gamma[static_cast<std::size_t>(tr)];
    out.row(r) = std::sqrt(g) * z0.row(r) + std::sqrt(1.0 - g) * eps.row(r);
  }
  return out;
}

std::string to_string(Prediction p) { return p == Prediction::x0 ? "x0" : "eps"; }

Prediction parse_prediction(std::string_view name) {
  if (name == "x0") return Prediction::x0;
  if (name == "eps") return Prediction::eps;
  throw ConfigError("unknown prediction target '" + std::string(name) + "' (expected x0 or eps)");
}

std::string to_string(SamplerKind k) { return k == SamplerKind::ddpm ? "ddpm" : "ddim"; }

SamplerKind parse_sampler_kind(std::string_view name) {
  if (name == "ddpm") return SamplerKind::ddpm;
  if (name == "ddim") return SamplerKind::ddim;
  throw ConfigError("unknown sampler '" + std::string(name) + "' (expected ddpm or ddim)");
}

// ---------------------------------------------------------------------------

void BackboneConfig::validate() const {
  if (data_dim <= 0) throw ConfigError("backbone.data_dim must be positive");
  if (widths.empty()) throw ConfigError("backbone.widths must not be empty");
  for (int w : widths) {
    if (w <= 0) throw ConfigError("backbone.widths must be positive");
  }
  if (time_embed_dim <= 0 || time_embed_dim % 2 != 0) {
    throw ConfigError("backbone.time_embed_dim must be positive and even");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("backbone.dropout must lie in [0, 1)");
}

nlohmann::json BackboneConfig::to_json() const {
  return {{"data_dim", data_dim},         {"widths", widths},
          {"time_embed_dim", time_embed_dim}, {"dropout", dropout},
          {"self_condition", self_condition}, {"prediction", to_string(prediction)}};
}

BackboneConfig BackboneConfig::from_json(const nlohmann::json& j) {
  require_known_keys(j, {"data_dim", "widths", "time_embed_dim", "dropout", "self_condition", "prediction"},
                     "backbone");
  BackboneConfig c;
  read_optional(j, "data_dim", c.data_dim, "backbone");
  read_optional(j, "widths", c.widths, "backbone");
  read_optional(j, "time_embed_dim", c.time_embed_dim, "backbone");
  read_optional(j, "dropout", c.dropout, "backbone");
  read_optional(j, "self_condition", c.self_condition, "backbone");
  std::string pred = to_string(c.prediction);
  read_optional(j, "prediction", pred, "backbone");
  c.prediction = parse_prediction(pred);
  return c;
}

Matrix time_features(const NoiseSchedule& schedule, std::span<const int> t, int dim) {
  // Frequencies span 100 .. 0.01 rad per unit log-SNR, so both adjacent steps
  // and the full [-12, 12] range are resolved.
  const int half = dim / 2;
  Matrix out(static_cast<Eigen::Index>(t.size()), dim);
  for (std::size_t r = 0; r < t.size(); ++r) {
    if (t[r] < 0 || t[r] > schedule.T) throw ContractError("time_features: t out of range");
    const double lambda = schedule.log_snr[static_cast<std::size_t>(t[r])];
    for (int k = 0; k < half; ++k) {
      const double freq = 100.0 * std::pow(1e-4, static_cast<double>(k) / std::max(1, half - 1));
      out(static_cast<Eigen::Index>(r), 2 * k) = std::sin(lambda * freq);
      out(static_cast<Eigen::Index>(r), 2 * k + 1) = std::cos(lambda * freq);
    }
  }
  return out;
}

Backbone::Backbone(BackboneConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng = derive_rng(init_seed, 0xD1FF);
  const auto& w = cfg_.widths;
  const int te = cfg_.time_embed_dim;
  time_mlp_ = nn::Linear::create(params_, "time.mlp", te, te, rng);
  input_ = nn::Linear::create(params_, "input", cfg_.input_width(), w[0], rng);
  time_proj_.push_back(nn::Linear::create(params_, "time.proj.input", te, w[0], rng));
  for (std::size_t i = 1; i < w.size(); ++i) {
    down_.push_back(nn::Linear::create(params_, "down" + std::to_string(i), w[i - 1], w[i], rng));
    time_proj_.push_back(nn::Linear::create(params_, "time.proj.down" + std::to_string(i), te, w[i], rng));
  }
  for (std::size_t i = w.size() - 1; i-- > 0;) {
    up_.push_back(nn::Linear::create(params_, "up" + std::to_string(i), w[i + 1], w[i], rng));
    time_proj_.push_back(nn::Linear::create(params_, "time.proj.up" + std::to_string(i), te, w[i], rng));
  }
  output_ = nn::Linear::create(params_, "output", w[0], cfg_.data_dim, rng, /*zero_init=*/true);
}

Var Backbone::forward_graph(Tape& tape, Var x_t, const Matrix& time_feats, Var self_cond,
                            const nn::ForwardMode& mode) const {
  const Matrix& x = tape.value(x_t);
  if (x.cols() != cfg_.data_dim) {
    throw ContractError("backbone: input width " + std::to_string(x.cols()) + " != data_dim " +
                        std::to_string(cfg_.data_dim));
  }
  if (time_feats.rows() != x.rows() || time_feats.cols() != cfg_.time_embed_dim) {
    throw ContractError("backbone: time features must be batch x time_embed_dim");
  }
  Var in = x_t;
  if (cfg_.self_condition) {
    if (!self_cond.valid()) {
      self_cond = tape.constant(Matrix::Zero(x.rows(), cfg_.data_dim));
    } else if (tape.value(self_cond).rows() != x.rows() || tape.value(self_cond).cols() != cfg_.data_dim) {
      throw ContractError("backbone: self-conditioning input must match x_t");
    }
    in = tape.concat_cols(x_t, self_cond);
  }
  Var temb = tape.silu(time_mlp_(tape, tape.constant(time_feats)));
  std::size_t proj = 0;
  auto block = [&](const nn::Linear& layer, Var h) {
    Var pre = tape.add(layer(tape, h), time_proj_[proj++](tape, temb));
    return mode.apply_dropout(tape, tape.silu(pre));
  };
  Var h = block(input_, in);
  std::vector<Var> skips{h};
  for (const auto& layer : down_) {
    h = block(layer, h);
    skips.push_back(h);
  }
  for (std::size_t k = 0; k < up_.size(); ++k) {
    h = tape.add(block(up_[k], h), skips[skips.size() - 2 - k]);
  }
  return output_(tape, h);
}

Matrix Backbone::predict(const Matrix& x_t, const Matrix& time_feats, const Matrix* self_cond) const {
  return predict_with(params_, x_t, time_feats, self_cond);
}

Matrix Backbone::predict_with(const nn::ParameterStore& weights, const Matrix& x_t,
                              const Matrix& time_feats, const Matrix* self_cond) const {
  if (&weights != &params_ && !weights.same_layout(params_)) {
    throw ContractError("backbone: weight set layout differs from the model");
  }
  Tape tape = Tape::inference(weights);
  Var sc = self_cond != nullptr ? tape.constant(*self_cond) : Var{};
  return tape.value(forward_graph(tape, tape.constant(x_t), time_feats, sc, nn::ForwardMode::eval()));
}

void Backbone::to_checkpoint(Checkpoint& ckpt, const std::string& prefix) const {
  ckpt.put_parameters(params_, prefix);
}

Backbone Backbone::from_checkpoint(const Checkpoint& ckpt, const nlohmann::json& cfg,
                                   const std::string& prefix) {
  Backbone b(BackboneConfig::from_json(cfg), 0);
  ckpt.get_parameters(b.params_, prefix);
  return b;
}

// ---------------------------------------------------------------------------

LossDraws draw_loss_inputs(int batch, int dim, const NoiseSchedule& schedule, Rng& rng,
                           double self_cond_prob) {
  LossDraws d;
  std::uniform_int_distribution<int> step(1, schedule.T);
  std::normal_distribution<double> normal;
  std::bernoulli_distribution coin(self_cond_prob);
  d.eps.resize(batch, dim);
  for (int r = 0; r < batch; ++r) {
    d.t.push_back(step(rng));
    for (int c = 0; c < dim; ++c) d.eps(r, c) = normal(rng);
    d.self_cond.push_back(coin(rng));
  }
  return d;
}

Var diffusion_loss_graph(Tape& tape, const Backbone& backbone, const NoiseSchedule& schedule,
                         const Matrix& x0, const LossDraws& draws, const nn::ForwardMode& mode) {
  const auto batch = x0.rows();
  if (batch == 0) throw ContractError("diffusion_loss: empty batch");
  if (static_cast<Eigen::Index>(draws.t.size()) != batch || draws.eps.rows() != batch ||
      draws.eps.cols() != x0.cols() || static_cast<Eigen::Index>(draws.self_cond.size()) != batch) {
    throw ContractError("diffusion_loss: draws do not match the batch");
  }
  const BackboneConfig& cfg = backbone.config();
  const Matrix x_t = forward_diffuse(x0, draws.t, draws.eps, schedule);
  const Matrix feats = time_features(schedule, draws.t, cfg.time_embed_dim);
  Var self_cond{};
  if (cfg.self_condition) {
    Matrix sc = Matrix::Zero(batch, cfg.data_dim);
    if (std::any_of(draws.self_cond.begin(), draws.self_cond.end(), [](bool b) { return b; })) {
      // First pass without gradient; its output enters the graph as a constant.
      const Matrix first = backbone.predict(x_t, feats, nullptr);
      const Matrix first_x0 = predicted_x0(cfg.prediction, first, x_t, draws.t, schedule);
      for (Eigen::Index r = 0; r < batch; ++r) {
        if (draws.self_cond[static_cast<std::size_t>(r)]) sc.row(r) = first_x0.row(r);
      }
    }
    self_cond = tape.constant(std::move(sc));
  }
  Var out = backbone.forward_graph(tape, tape.constant(x_t), feats, self_cond, mode);
  const Matrix& target = cfg.prediction == Prediction::x0 ? x0 : draws.eps;
  return tape.scale(tape.squared_error(out, tape.constant(target)), 1.0 / static_cast<double>(batch));
}

double diffusion_loss(const Backbone& backbone, const NoiseSchedule& schedule, const Matrix& x0,
                      const LossDraws& draws) {
  Tape tape = Tape::inference(backbone.parameters());
  return tape.scalar(diffusion_loss_graph(tape, backbone, schedule, x0, draws, nn::ForwardMode::eval()));
}

double diffusion_loss(const Backbone& backbone, const NoiseSchedule& schedule, const Matrix& x0,
                      Rng& rng) {
  const LossDraws draws = draw_loss_inputs(static_cast<int>(x0.rows()), static_cast<int>(x0.cols()),
                                           schedule, rng, backbone.config().self_condition ? 0.5 : 0.0);
  return diffusion_loss(backbone, schedule, x0, draws);
}

Matrix predicted_x0(Prediction p, const Matrix& output, const Matrix& x_t, std::span<const int> t,
                    const NoiseSchedule& schedule) {
  if (p == Prediction::x0) return output;
  Matrix out(output.rows(), output.cols());
  for (Eigen::Index r = 0; r < output.rows(); ++r) {
    const double g = schedule.gamma[static_cast<std::size_t>(t[static_cast<std::size_t>(r)])];
    out.row(r) = (x_t.row(r) - std::sqrt(1.0 - g) * output.row(r)) / std::sqrt(g);
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<int> sampling_timesteps(int T, int steps) {
  if (steps <= 0 || steps > T) steps = T;
  std::vector<int> seq(static_cast<std::size_t>(steps) + 1);
  for (int k = 0; k <= steps; ++k) {
    seq[static_cast<std::size_t>(k)] = static_cast<int>(std::llround(static_cast<double>(T) * (steps - k) / steps));
  }
  return seq;
}

Matrix sample(const X0Predictor& predict, int dim, const NoiseSchedule& schedule,
              const SampleOptions& options, int n, std::uint64_t seed) {
  if (n < 0) throw ContractError("sample: n must be non-negative");
  if (dim <= 0) throw ContractError("sample: dim must be positive");
  Matrix z(n, dim);
  if (n == 0) return z;
  for (int c = 0; c < n; ++c) {
    Rng rng = derive_rng(seed, static_cast<std::uint64_t>(c), 0);
    std::normal_distribution<double> normal;
    for (int j = 0; j < dim; ++j) z(c, j) = normal(rng);
  }
  const std::vector<int> seq = sampling_timesteps(schedule.T, options.steps);
  Matrix x0_hat;
  bool have_estimate = false;
  for (std::size_t k = 0; k + 1 < seq.size(); ++k) {
    const int t = seq[k];
    const int s = seq[k + 1];
    const std::vector<int> ts(static_cast<std::size_t>(n), t);
    const Matrix* sc = options.chain_self_condition && have_estimate ? &x0_hat : nullptr;
    x0_hat = predict(z, ts, sc);
    have_estimate = true;
    if (s == 0) return x0_hat;

    const double g_t = schedule.gamma[static_cast<std::size_t>(t)];
    const double g_s = schedule.gamma[static_cast<std::size_t>(s)];
    if (options.kind == SamplerKind::ddim) {
      const Matrix eps_hat = (z - std::sqrt(g_t) * x0_hat) / std::sqrt(1.0 - g_t);
      z = std::sqrt(g_s) * x0_hat + std::sqrt(1.0 - g_s) * eps_hat;
    } else {
      const double a = g_t / g_s;
      const double c0 = std::sqrt(g_s) * (1.0 - a) / (1.0 - g_t);
      const double ct = std::sqrt(a) * (1.0 - g_s) / (1.0 - g_t);
      const double sigma = std::sqrt((1.0 - a) * (1.0 - g_s) / (1.0 - g_t));
      z = c0 * x0_hat + ct * z;
      for (int c = 0; c < n; ++c) {
        Rng rng = derive_rng(seed, static_cast<std::uint64_t>(c), k + 1);
        std::normal_distribution<double> normal;
        for (int j = 0; j < dim; ++j) z(c, j) += sigma * normal(rng);
      }
    }
  }
  return x0_hat;
}

Matrix sample(const Backbone& backbone, const NoiseSchedule& schedule, const SampleOptions& options,
              int n, std::uint64_t seed, const nn::ParameterStore* weights) {
  const BackboneConfig& cfg = backbone.config();
  const nn::ParameterStore& w = weights != nullptr ? *weights : backbone.parameters();
  X0Predictor f = [&](const Matrix& x_t, std::span<const int> t, const Matrix* sc) {
    const Matrix out = backbone.predict_with(w, x_t, time_features(schedule, t, cfg.time_embed_dim), sc);
    return predicted_x0(cfg.prediction, out, x_t, t, schedule);
  };
  return sample(f, cfg.data_dim, schedule, options, n, seed);
}

// ---------------------------------------------------------------------------

void ema_update(nn::ParameterStore& shadow, const nn::ParameterStore& params, double decay) {
  if (!shadow.same_layout(params)) throw ContractError("ema_update: shadow layout differs from params");
  for (std::size_t i = 0; i < params.size(); ++i) {
    shadow[i].value = decay * shadow[i].value + (1.0 - decay) * params[i].value;
  }
}

EmaState EmaState::track(const nn::ParameterStore& params, double decay, bool warmup) {
  if (!(decay >= 0.0 && decay <= 1.0)) throw ConfigError("ema decay must lie in [0, 1]");
  EmaState e;
  e.shadow = params;
  e.decay = decay;
  e.warmup = warmup;
  return e;
}

double EmaState::effective_decay() const {
  if (!warmup) return decay;
  return std::min(decay, (1.0 + static_cast<double>(updates)) / (10.0 + static_cast<double>(updates)));
}

void EmaState::update(const nn::ParameterStore& params) {
  ema_update(shadow, params, effective_decay());
  ++updates;
}

// ---------------------------------------------------------------------------

LatentStats LatentStats::fit(const Matrix& latents) {
  if (latents.rows() == 0) throw ContractError("LatentStats::fit: no latents");
  LatentStats s;
  const auto n = static_cast<double>(latents.rows());
  for (Eigen::Index c = 0; c < latents.cols(); ++c) {
    const double mean = latents.col(c).sum() / n;
    const double var = (latents.col(c).array() - mean).square().sum() / n;
    s.mean.push_back(mean);
    s.std_dev.push_back(var > 1e-24 ? std::sqrt(var) : 1.0);
  }
  return s;
}

LatentStats LatentStats::identity(int dim) {
  LatentStats s;
  s.mean.assign(static_cast<std::size_t>(dim), 0.0);
  s.std_dev.assign(static_cast<std::size_t>(dim), 1.0);
  return s;
}

Matrix LatentStats::standardize(const Matrix& latents) const {
  if (static_cast<std::size_t>(latents.cols()) != mean.size()) {
    throw ContractError("LatentStats: width mismatch");
  }
  Matrix out(latents.rows(), latents.cols());
  for (Eigen::Index c = 0; c < latents.cols(); ++c) {
    out.col(c) = (latents.col(c).array() - mean[static_cast<std::size_t>(c)]) / std_dev[static_cast<std::size_t>(c)];
  }
  return out;
}

Matrix LatentStats::destandardize(const Matrix& latents) const {
  if (static_cast<std::size_t>(latents.cols()) != mean.size()) {
    throw ContractError("LatentStats: width mismatch");
  }
  Matrix out(latents.rows(), latents.cols());
  for (Eigen::Index c = 0; c < latents.cols(); ++c) {
    out.col(c) = latents.col(c).array() * std_dev[static_cast<std::size_t>(c)] + mean[static_cast<std::size_t>(c)];
  }
  return out;
}

void LatentStats::to_checkpoint(Checkpoint& ckpt, const std::string& prefix) const {
  const auto d = static_cast<Eigen::Index>(mean.size());
  nn::Matrix m(1, d);
  nn::Matrix s(1, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    m(0, i) = mean[static_cast<std::size_t>(i)];
    s(0, i) = std_dev[static_cast<std::size_t>(i)];
  }
  ckpt.tensors.emplace_back(prefix + "mean", std::move(m));
  ckpt.tensors.emplace_back(prefix + "std", std::move(s));
}

LatentStats LatentStats::from_checkpoint(const Checkpoint& ckpt, const std::string& prefix) {
  const nn::Matrix& m = ckpt.tensor(prefix + "mean");
  const nn::Matrix& s = ckpt.tensor(prefix + "std");
  if (m.rows() != 1 || s.rows() != 1 || m.cols() != s.cols()) {
    throw CompatibilityError("checkpoint latent statistics have inconsistent shapes");
  }
  LatentStats out;
  out.mean.assign(m.data(), m.data() + m.cols());
  out.std_dev.assign(s.data(), s.data() + s.cols());
  return out;
}

}  // namespace sed::diffusion
