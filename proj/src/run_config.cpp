#include "sed/run_config.hpp"

#include <fstream>
#include <sstream>

#include "sed/errors.hpp"
#include "sed/hashing.hpp"
#include "sed/json_util.hpp"
#include "sed/nn/optim.hpp"

namespace sed {

double TrainingConfig::learning_rate_at(long step) const {
  if (lr_schedule == "constant") return learning_rate;
  nn::WarmupExponentialDecay s{learning_rate, warmup_steps, steps, final_lr_ratio};
  return s(step);
}

void TrainingConfig::validate(std::string_view where) const {
  const std::string w(where);
  if (steps < 0) throw ConfigError(w + ".steps must be non-negative");
  if (batch_size < 1) throw ConfigError(w + ".batch_size must be at least 1");
  if (!(learning_rate > 0.0)) throw ConfigError(w + ".learning_rate must be positive");
  if (lr_schedule != "constant" && lr_schedule != "warmup_exponential") {
    throw ConfigError(w + ".lr_schedule must be 'constant' or 'warmup_exponential'");
  }
  if (warmup_steps < 0) throw ConfigError(w + ".warmup_steps must be non-negative");
  if (!(final_lr_ratio > 0.0 && final_lr_ratio <= 1.0)) throw ConfigError(w + ".final_lr_ratio must lie in (0, 1]");
  if (grad_clip < 0.0) throw ConfigError(w + ".grad_clip must be non-negative");
  if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) throw ConfigError(w + ".ema_decay must lie in [0, 1]");
  if (log_every < 1) throw ConfigError(w + ".log_every must be at least 1");
}

nlohmann::json TrainingConfig::to_json() const {
  return {{"steps", steps},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"lr_schedule", lr_schedule},
          {"warmup_steps", warmup_steps},
          {"final_lr_ratio", final_lr_ratio},
          {"grad_clip", grad_clip},
          {"ema_decay", ema_decay},
          {"ema_warmup", ema_warmup},
          {"log_every", log_every}};
}

TrainingConfig TrainingConfig::from_json(const nlohmann::json& j, TrainingConfig c, std::string_view where) {
  require_known_keys(j,
                     {"steps", "batch_size", "learning_rate", "lr_schedule", "warmup_steps",
                      "final_lr_ratio", "grad_clip", "ema_decay", "ema_warmup", "log_every"},
                     where);
  read_optional(j, "steps", c.steps, where);
  read_optional(j, "batch_size", c.batch_size, where);
  read_optional(j, "learning_rate", c.learning_rate, where);
  read_optional(j, "lr_schedule", c.lr_schedule, where);
  read_optional(j, "warmup_steps", c.warmup_steps, where);
  read_optional(j, "final_lr_ratio", c.final_lr_ratio, where);
  read_optional(j, "grad_clip", c.grad_clip, where);
  read_optional(j, "ema_decay", c.ema_decay, where);
  read_optional(j, "ema_warmup", c.ema_warmup, where);
  read_optional(j, "log_every", c.log_every, where);
  return c;
}

void SamplingConfig::validate() const {
  diffusion::parse_sampler_kind(sampler);
  if (steps < 0) throw ConfigError("sampling.steps must be non-negative");
  if (max_len < 0) throw ConfigError("sampling.max_len must be non-negative");
}

nlohmann::json SamplingConfig::to_json() const {
  return {{"sampler", sampler}, {"steps", steps}, {"max_len", max_len}, {"constrained", constrained}};
}

SamplingConfig SamplingConfig::from_json(const nlohmann::json& j) {
  require_known_keys(j, {"sampler", "steps", "max_len", "constrained"}, "sampling");
  SamplingConfig c;
  read_optional(j, "sampler", c.sampler, "sampling");
  read_optional(j, "steps", c.steps, "sampling");
  read_optional(j, "max_len", c.max_len, "sampling");
  read_optional(j, "constrained", c.constrained, "sampling");
  return c;
}

void EvalConfig::validate() const {
  if (histogram_bins < 1) throw ConfigError("evaluation.histogram_bins must be positive");
  if (mmd_max_samples < 2) throw ConfigError("evaluation.mmd_max_samples must be at least 2");
  if (rd_grid_points < 2) throw ConfigError("evaluation.rd_grid_points must be at least 2");
  if (rd_mc_samples < 1) throw ConfigError("evaluation.rd_mc_samples must be positive");
  if (rd_max_samples < 1) throw ConfigError("evaluation.rd_max_samples must be positive");
}

nlohmann::json EvalConfig::to_json() const {
  return {{"histogram_bins", histogram_bins},
          {"mmd_max_samples", mmd_max_samples},
          {"rd_grid_points", rd_grid_points},
          {"rd_mc_samples", rd_mc_samples},
          {"rd_max_samples", rd_max_samples}};
}

EvalConfig EvalConfig::from_json(const nlohmann::json& j) {
  require_known_keys(j, {"histogram_bins", "mmd_max_samples", "rd_grid_points", "rd_mc_samples", "rd_max_samples"},
                     "evaluation");
  EvalConfig c;
  read_optional(j, "histogram_bins", c.histogram_bins, "evaluation");
  read_optional(j, "mmd_max_samples", c.mmd_max_samples, "evaluation");
  read_optional(j, "rd_grid_points", c.rd_grid_points, "evaluation");
  read_optional(j, "rd_mc_samples", c.rd_mc_samples, "evaluation");
  read_optional(j, "rd_max_samples", c.rd_max_samples, "evaluation");
  return c;
}

// ---------------------------------------------------------------------------

TrainingConfig RunConfig::default_savae_training() {
  TrainingConfig t;
  t.steps = 20000;
  t.learning_rate = 1e-3;
  t.lr_schedule = "warmup_exponential";
  t.warmup_steps = 1000;
  return t;
}

TrainingConfig RunConfig::default_diffusion_training() {
  TrainingConfig t;
  t.steps = 50000;
  t.learning_rate = 1e-4;
  t.lr_schedule = "constant";
  return t;
}

TrainingConfig RunConfig::default_vae_training() {
  TrainingConfig t;
  t.steps = 20000;
  t.learning_rate = 1e-3;
  t.lr_schedule = "warmup_exponential";
  t.warmup_steps = 1000;
  return t;
}

void RunConfig::validate() const {
  if (model_kind != "sed" && model_kind != "ddpm-dense" && model_kind != "ldm-dense" &&
      model_kind != "dense-vae") {
    throw ConfigError("model_kind must be one of sed, ddpm-dense, ldm-dense, dense-vae (got '" +
                      model_kind + "')");
  }
  if (dataset.has_value() == !data_path.empty()) {
    throw ConfigError("exactly one of 'dataset' and 'data_path' must be given");
  }
  if (dataset) dataset->validate();
  savae.validate();
  latent_backbone.validate();
  dense_dm.validate();
  dense_vae.validate();
  if (diffusion_steps < 1) throw ConfigError("diffusion_steps must be positive");
  if (!(self_condition_prob >= 0.0 && self_condition_prob <= 1.0)) {
    throw ConfigError("self_condition_prob must lie in [0, 1]");
  }
  savae_training.validate("savae_training");
  diffusion_training.validate("diffusion_training");
  dense_training.validate("dense_training");
  vae_training.validate("vae_training");
  sampling.validate();
  evaluation.validate();
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j = {{"model_kind", model_kind},
                      {"seed", seed},
                      {"out_dir", out_dir},
                      {"scaling", to_string(scaling)},
                      {"savae", savae.to_json()},
                      {"latent_backbone", latent_backbone.to_json()},
                      {"dense_dm", dense_dm.to_json()},
                      {"dense_vae", dense_vae.to_json()},
                      {"diffusion_steps", diffusion_steps},
                      {"diffusion_use_sampled_latents", diffusion_use_sampled_latents},
                      {"self_condition_prob", self_condition_prob},
                      {"savae_training", savae_training.to_json()},
                      {"diffusion_training", diffusion_training.to_json()},
                      {"dense_training", dense_training.to_json()},
                      {"vae_training", vae_training.to_json()},
                      {"sampling", sampling.to_json()},
                      {"evaluation", evaluation.to_json()}};
  if (dataset) j["dataset"] = sed::to_json(*dataset);
  if (!data_path.empty()) j["data_path"] = data_path;
  return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  require_known_keys(j,
                     {"model_kind", "seed", "out_dir", "dataset", "data_path", "scaling", "savae",
                      "latent_backbone", "dense_dm", "dense_vae", "diffusion_steps",
                      "diffusion_use_sampled_latents", "self_condition_prob", "savae_training",
                      "diffusion_training", "dense_training", "vae_training", "sampling", "evaluation"},
                     "config");
  RunConfig c;
  read_optional(j, "model_kind", c.model_kind, "config");
  read_optional(j, "seed", c.seed, "config");
  read_optional(j, "out_dir", c.out_dir, "config");
  read_optional(j, "data_path", c.data_path, "config");
  if (j.contains("dataset")) {
    c.dataset = dataset_spec_from_json(j.at("dataset"));
  } else if (!c.data_path.empty()) {
    c.dataset.reset();
  }
  std::string scaling = to_string(c.scaling);
  read_optional(j, "scaling", scaling, "config");
  try {
    c.scaling = parse_scaling_scheme(scaling);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (j.contains("savae")) c.savae = savae::SavaeConfig::from_json(j.at("savae"));
  if (j.contains("latent_backbone")) c.latent_backbone = diffusion::BackboneConfig::from_json(j.at("latent_backbone"));
  if (j.contains("dense_dm")) c.dense_dm = baselines::DenseDmConfig::from_json(j.at("dense_dm"));
  if (j.contains("dense_vae")) c.dense_vae = baselines::DenseVaeConfig::from_json(j.at("dense_vae"));
  read_optional(j, "diffusion_steps", c.diffusion_steps, "config");
  read_optional(j, "diffusion_use_sampled_latents", c.diffusion_use_sampled_latents, "config");
  read_optional(j, "self_condition_prob", c.self_condition_prob, "config");
  if (j.contains("savae_training")) {
    c.savae_training = TrainingConfig::from_json(j.at("savae_training"), c.savae_training, "savae_training");
  }
  if (j.contains("diffusion_training")) {
    c.diffusion_training =
        TrainingConfig::from_json(j.at("diffusion_training"), c.diffusion_training, "diffusion_training");
  }
  if (j.contains("dense_training")) {
    c.dense_training = TrainingConfig::from_json(j.at("dense_training"), c.dense_training, "dense_training");
  }
  if (j.contains("vae_training")) {
    c.vae_training = TrainingConfig::from_json(j.at("vae_training"), c.vae_training, "vae_training");
  }
  if (j.contains("sampling")) c.sampling = SamplingConfig::from_json(j.at("sampling"));
  if (j.contains("evaluation")) c.evaluation = EvalConfig::from_json(j.at("evaluation"));
  c.validate();
  return c;
}

std::string RunConfig::hash() const { return content_hash_hex(to_json().dump()); }

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return RunConfig::from_json(j);
}

nlohmann::json config_schema() {
  const RunConfig defaults;
  nlohmann::json keys = {
      {"model_kind", "sed | ddpm-dense | ldm-dense | dense-vae; selects what train-dense trains"},
      {"seed", "master seed; every stage derives its streams from it"},
      {"out_dir", "directory for checkpoints and logs (overridden by --out)"},
      {"dataset", "synthetic generator spec (kind: blob-grid | sparse-tabular | idx-images)"},
      {"data_path", "JSON-lines sparse samples; mutually exclusive with dataset"},
      {"scaling", "identity | max-scale | log1p-max-scale value transform fitted on the data"},
      {"savae", "sparsity-aware autoencoder architecture; ambient_dim is taken from the data"},
      {"latent_backbone", "denoiser for latent codes; data_dim is taken from the autoencoder"},
      {"dense_dm", "input-space eps-prediction denoiser; ambient_dim is taken from the data"},
      {"dense_vae", "MLP autoencoder for the dense latent baseline"},
      {"diffusion_steps", "number of diffusion steps T"},
      {"diffusion_use_sampled_latents", "train the latent model on posterior samples instead of means"},
      {"self_condition_prob", "probability of the self-conditioning pass during training"},
      {"savae_training", "optimiser settings of the autoencoder stage"},
      {"diffusion_training", "optimiser settings of the latent diffusion stage"},
      {"dense_training", "optimiser settings of the dense diffusion baseline"},
      {"vae_training", "optimiser settings of the dense autoencoder"},
      {"sampling", "sampler (ddpm | ddim), steps (0 = T), max_len, constrained"},
      {"evaluation", "histogram bins, MMD subsample cap, rate-distortion grid and replicates"}};
  return {{"defaults", defaults.to_json()}, {"keys", keys}};
}

}  // namespace sed
