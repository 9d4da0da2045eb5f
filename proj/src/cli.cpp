#include "sed/cli.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "sed/baselines.hpp"
#include "sed/checkpoint.hpp"
#include "sed/errors.hpp"
#include "sed/evaluation.hpp"
#include "sed/hashing.hpp"
#include "sed/latent_diffusion.hpp"
#include "sed/savae.hpp"
#include "sed/training.hpp"

namespace sed::cli {

namespace fs = std::filesystem;
using nn::Matrix;

namespace {

constexpr const char* kMetricNames[] = {"sparsity", "w1", "mmd", "scc", "validity"};

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream ss;
  ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return ss.str();
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<int> parse_int_list(const std::string& text, const std::string& what) {
  std::vector<int> out;
  for (const auto& item : split_list(text)) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError(what + ": '" + item + "' is not an integer");
    }
  }
  return out;
}

std::string data_hash(std::span<const SparseSample> data) { return content_hash_hex(to_jsonl(data)); }

int ambient_dim_of(std::span<const SparseSample> data) {
  if (data.empty()) throw DataError("dataset is empty");
  return data.front().ambient_dim();
}

std::string save(const fs::path& path, const Checkpoint& ckpt) {
  fs::create_directories(path.parent_path());
  save_checkpoint(path, ckpt);
  return path.string();
}

/// Values of a checkpoint's EMA tensors loaded into a copy of `params`.
nn::ParameterStore ema_weights(const Checkpoint& ckpt, const nn::ParameterStore& params) {
  nn::ParameterStore ema = params;
  ckpt.get_parameters(ema, "ema/");
  return ema;
}

ValueScaling scaling_of(const Checkpoint& ckpt) {
  if (!ckpt.metadata.contains("scaling")) throw CompatibilityError("checkpoint lacks value scaling metadata");
  return ValueScaling::from_json(ckpt.metadata.at("scaling"));
}

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool config_required) {
  auto* opt = cmd->add_option("--config", c.config_path, "run config (JSON)");
  if (config_required) opt->required();
  cmd->add_option("--seed", c.seed, "overrides the config seed");
  cmd->add_option("--out", c.out, "output directory or file");
}

RunConfig resolve_config(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : load_run_config(c.config_path);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.out_dir = c.out;
  return cfg;
}

// ---------------------------------------------------------------------------

int cmd_train_savae(const Common& common, std::ostream& out) {
  const RunConfig cfg = resolve_config(common);
  const std::vector<SparseSample> raw = load_data(cfg);
  const Scaled<SparseSample> scaled = preprocess_scale(raw, cfg.scaling);
  savae::SavaeConfig sc = cfg.savae;
  sc.ambient_dim = ambient_dim_of(raw);
  training::SavaeRun run = training::train_savae(sc, cfg.savae_training, scaled.samples, cfg.seed);

  Checkpoint ckpt = run.model.to_checkpoint();
  ckpt.step = cfg.savae_training.steps;
  ckpt.metadata = {{"scaling", scaled.transform.to_json()},
                   {"data_hash", data_hash(raw)},
                   {"run_config_hash", cfg.hash()},
                   {"seed", cfg.seed},
                   {"training", cfg.savae_training.to_json()}};
  ckpt.put_parameters(run.ema, "ema/");
  const fs::path dir(cfg.out_dir);
  eval::write_text(dir / "savae_curve.csv", run.curve.to_csv());
  out << save(dir / "savae.ckpt", ckpt) << "\n";
  return kOk;
}

int cmd_train_diffusion(const Common& common, const std::string& autoencoder_path, std::ostream& out) {
  const RunConfig cfg = resolve_config(common);
  const Checkpoint ae = load_checkpoint(autoencoder_path);
  const std::vector<SparseSample> raw = load_data(cfg);
  if (!ae.metadata.contains("data_hash") || ae.metadata.at("data_hash") != data_hash(raw)) {
    throw CompatibilityError("autoencoder checkpoint '" + autoencoder_path +
                             "' was trained on different data than this config names");
  }
  const ValueScaling scaling = scaling_of(ae);
  std::vector<SparseSample> data;
  data.reserve(raw.size());
  for (const auto& s : raw) data.push_back(apply_scaling(s, scaling));

  Matrix latents;
  std::string kind;
  if (ae.model_kind == "savae") {
    kind = "sed";
    const savae::Savae model = savae::Savae::from_checkpoint(ae);
    const savae::Savae frozen = training::with_weights(model, ema_weights(ae, model.parameters()));
    const std::string before = checkpoint_hash(frozen.to_checkpoint());
    if (cfg.diffusion_use_sampled_latents) {
      const std::uint64_t latent_seed = mix64(cfg.seed ^ 0x1A7E);
      latents = training::encode_dataset(frozen, data, 256, &latent_seed);
    } else {
      latents = training::encode_dataset(frozen, data);
    }
    if (checkpoint_hash(frozen.to_checkpoint()) != before) {
      throw Error("autoencoder parameters changed while encoding the dataset");
    }
  } else if (ae.model_kind == "dense-vae") {
    kind = "ldm-dense";
    const baselines::DenseVae model = baselines::DenseVae::from_checkpoint(ae, ae.config, "params/");
    const baselines::DenseVae frozen = training::with_weights(model, ema_weights(ae, model.parameters()));
    latents = frozen.encode_means(baselines::to_matrix(data));
  } else {
    throw CompatibilityError("train-diffusion needs a savae or dense-vae checkpoint, got '" + ae.model_kind + "'");
  }

  const diffusion::LatentStats stats = diffusion::LatentStats::fit(latents);
  diffusion::BackboneConfig bc = cfg.latent_backbone;
  bc.data_dim = static_cast<int>(latents.cols());
  bc.prediction = diffusion::Prediction::x0;
  const diffusion::NoiseSchedule schedule = diffusion::NoiseSchedule::cosine(cfg.diffusion_steps);
  training::BackboneRun run = training::train_backbone(bc, cfg.diffusion_training, schedule,
                                                       stats.standardize(latents), cfg.self_condition_prob,
                                                       cfg.seed);
  Checkpoint ckpt;
  ckpt.model_kind = kind;
  ckpt.config = {{"backbone", bc.to_json()}, {"diffusion_steps", cfg.diffusion_steps}};
  ckpt.step = cfg.diffusion_training.steps;
  ckpt.metadata = {{"autoencoder_hash", checkpoint_hash(ae)},
                   {"autoencoder_kind", ae.model_kind},
                   {"scaling", scaling.to_json()},
                   {"run_config_hash", cfg.hash()},
                   {"seed", cfg.seed},
                   {"training", cfg.diffusion_training.to_json()}};
  run.model.to_checkpoint(ckpt, "params/");
  ckpt.put_parameters(run.ema.shadow, "ema/");
  stats.to_checkpoint(ckpt, "latent/");
  const fs::path dir(cfg.out_dir);
  eval::write_text(dir / "diffusion_curve.csv", run.curve.to_csv());
  out << save(dir / "diffusion.ckpt", ckpt) << "\n";
  return kOk;
}

int cmd_train_dense(const Common& common, std::ostream& out) {
  const RunConfig cfg = resolve_config(common);
  const std::vector<SparseSample> raw = load_data(cfg);
  const Scaled<SparseSample> scaled = preprocess_scale(raw, cfg.scaling);
  const Matrix x = baselines::to_matrix(scaled.samples);
  const fs::path dir(cfg.out_dir);
  Checkpoint ckpt;
  ckpt.metadata = {{"scaling", scaled.transform.to_json()},
                   {"data_hash", data_hash(raw)},
                   {"run_config_hash", cfg.hash()},
                   {"seed", cfg.seed}};
  std::string name;
  if (cfg.model_kind == "ddpm-dense") {
    baselines::DenseDmConfig dc = cfg.dense_dm;
    dc.ambient_dim = ambient_dim_of(raw);
    const diffusion::NoiseSchedule schedule = diffusion::NoiseSchedule::cosine(cfg.diffusion_steps);
    training::BackboneRun run =
        training::train_backbone(dc.backbone_config(), cfg.dense_training, schedule, x, 0.0, cfg.seed);
    ckpt.model_kind = "ddpm-dense";
    ckpt.config = {{"dense_dm", dc.to_json()}, {"diffusion_steps", cfg.diffusion_steps}};
    ckpt.step = cfg.dense_training.steps;
    ckpt.metadata["training"] = cfg.dense_training.to_json();
    run.model.to_checkpoint(ckpt, "params/");
    ckpt.put_parameters(run.ema.shadow, "ema/");
    eval::write_text(dir / "dense_curve.csv", run.curve.to_csv());
    name = "dense.ckpt";
  } else if (cfg.model_kind == "dense-vae") {
    baselines::DenseVaeConfig vc = cfg.dense_vae;
    vc.ambient_dim = ambient_dim_of(raw);
    training::VaeRun run = training::train_dense_vae(vc, cfg.vae_training, x, cfg.seed);
    ckpt.model_kind = "dense-vae";
    ckpt.config = vc.to_json();
    ckpt.step = cfg.vae_training.steps;
    ckpt.metadata["training"] = cfg.vae_training.to_json();
    run.model.to_checkpoint(ckpt, "params/");
    ckpt.put_parameters(run.ema, "ema/");
    eval::write_text(dir / "vae_curve.csv", run.curve.to_csv());
    name = "vae.ckpt";
  } else {
    throw ConfigError("train-dense trains model_kind ddpm-dense or dense-vae, config has '" + cfg.model_kind + "'");
  }
  out << save(dir / name, ckpt) << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct SampleArgs {
  std::string model;
  std::string autoencoder;
  std::string sampler;
  std::optional<int> steps;
  int n = 100;
  std::optional<int> max_len;
  bool constrained = false;
  bool allow_mismatch = false;
  std::string threshold_data;
};

std::string sed_jsonl(const std::vector<savae::GeneratedSample>& generated, const ValueScaling& scaling) {
  std::string text;
  for (const auto& g : generated) {
    savae::GeneratedSample data_units = g;
    for (double& v : data_units.values) v = scaling.inverse(v);
    nlohmann::json j = to_json(data_units.to_sparse());
    j["gen_d"] = data_units.dims;
    nlohmann::json gv = nlohmann::json::array();
    for (double v : data_units.values) gv.push_back(v);
    j["gen_v"] = gv;
    j["valid"] = data_units.valid_order();
    text += j.dump() + "\n";
  }
  return text;
}

std::string dense_csv(const std::vector<DenseSample>& samples) {
  std::string text;
  for (const auto& s : samples) {
    for (int i = 0; i < s.size(); ++i) {
      if (i > 0) text += ",";
      text += format_double(s[static_cast<std::size_t>(i)]);
    }
    text += "\n";
  }
  return text;
}

std::vector<savae::GeneratedSample> decode_in_chunks(const savae::Savae& model, const Matrix& z, int max_len,
                                                     bool constrained) {
  std::vector<savae::GeneratedSample> out;
  constexpr Eigen::Index kChunk = 256;
  for (Eigen::Index start = 0; start < z.rows(); start += kChunk) {
    const Eigen::Index count = std::min(kChunk, z.rows() - start);
    auto part = model.decode_greedy_batch(z.middleRows(start, count), max_len, constrained);
    out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return out;
}

int cmd_sample(const Common& common, const SampleArgs& a, std::ostream& out) {
  const RunConfig cfg = resolve_config(common);
  if (a.n < 0) throw ConfigError("--n must be non-negative");
  if (common.out.empty()) throw ConfigError("sample requires --out FILE");
  const Checkpoint model_ckpt = load_checkpoint(a.model);
  diffusion::SampleOptions opt;
  opt.kind = diffusion::parse_sampler_kind(a.sampler.empty() ? cfg.sampling.sampler : a.sampler);
  opt.steps = a.steps.value_or(cfg.sampling.steps);
  const ValueScaling scaling = scaling_of(model_ckpt);
  const int T = model_ckpt.config.at("diffusion_steps").get<int>();
  const diffusion::NoiseSchedule schedule = diffusion::NoiseSchedule::cosine(T);

  std::string text;
  std::vector<DenseSample> dense;
  if (model_ckpt.model_kind == "sed" || model_ckpt.model_kind == "ldm-dense") {
    if (a.autoencoder.empty()) throw ConfigError("sampling a latent model requires --autoencoder CKPT");
    const Checkpoint ae = load_checkpoint(a.autoencoder);
    if (!a.allow_mismatch && model_ckpt.metadata.at("autoencoder_hash") != checkpoint_hash(ae)) {
      throw CompatibilityError("autoencoder '" + a.autoencoder + "' does not match the one '" + a.model +
                               "' was trained against (use --allow-mismatch to override)");
    }
    const diffusion::Backbone backbone =
        diffusion::Backbone::from_checkpoint(model_ckpt, model_ckpt.config.at("backbone"), "params/");
    const nn::ParameterStore ema = ema_weights(model_ckpt, backbone.parameters());
    const diffusion::LatentStats stats = diffusion::LatentStats::from_checkpoint(model_ckpt, "latent/");
    const Matrix z = stats.destandardize(diffusion::sample(backbone, schedule, opt, a.n, cfg.seed, &ema));
    if (model_ckpt.model_kind == "sed") {
      if (ae.model_kind != "savae") throw CompatibilityError("sed model needs a savae autoencoder");
      const savae::Savae base = savae::Savae::from_checkpoint(ae);
      const savae::Savae model = training::with_weights(base, ema_weights(ae, base.parameters()));
      const auto& sc = model.config();
      const int cap = std::min(sc.ambient_dim, sc.max_sequence_length);
      const int max_len = a.max_len.value_or(cfg.sampling.max_len > 0 ? cfg.sampling.max_len : cap);
      const auto generated = decode_in_chunks(model, z, std::min(max_len, cap), a.constrained || cfg.sampling.constrained);
      text = sed_jsonl(generated, scaling);
    } else {
      if (ae.model_kind != "dense-vae") throw CompatibilityError("ldm-dense model needs a dense-vae autoencoder");
      const baselines::DenseVae base = baselines::DenseVae::from_checkpoint(ae, ae.config, "params/");
      const baselines::DenseVae vae = training::with_weights(base, ema_weights(ae, base.parameters()));
      dense = baselines::from_matrix(vae.decode(z));
    }
  } else if (model_ckpt.model_kind == "ddpm-dense") {
    const diffusion::Backbone backbone = baselines::make_dense_backbone(
        baselines::DenseDmConfig::from_json(model_ckpt.config.at("dense_dm")), 0);
    diffusion::Backbone loaded = backbone;
    model_ckpt.get_parameters(loaded.parameters(), "params/");
    const nn::ParameterStore ema = ema_weights(model_ckpt, loaded.parameters());
    dense = baselines::dense_sample(loaded, schedule, opt, a.n, cfg.seed, &ema);
  } else {
    throw CompatibilityError("cannot sample from a '" + model_ckpt.model_kind + "' checkpoint");
  }

  if (model_ckpt.model_kind != "sed") {
    for (auto& s : dense) {
      for (double& v : s.mutable_data()) v = scaling.inverse(v);
    }
    if (!a.threshold_data.empty() && !dense.empty()) {
      const std::vector<SparseSample> train = read_jsonl(a.threshold_data);
      dense = baselines::apply_threshold(dense, baselines::threshold_calibrate(train, dense));
    }
    text = dense_csv(dense);
  }
  eval::write_text(common.out, text);
  out << common.out << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string real;
  std::string generated;
  std::string metrics = "sparsity,w1,mmd,scc,validity";
};

int cmd_eval(const Common& common, const EvalArgs& a, std::ostream& out) {
  const RunConfig cfg = resolve_config(common);
  std::vector<std::string> metrics = split_list(a.metrics);
  for (const auto& m : metrics) {
    if (std::find(std::begin(kMetricNames), std::end(kMetricNames), m) == std::end(kMetricNames)) {
      throw ConfigError("unknown metric '" + m + "'; valid metrics: sparsity, w1, mmd, scc, validity");
    }
  }
  if (common.out.empty()) throw ConfigError("eval requires --out DIR");
  const auto real_records = read_samples(a.real);
  const auto gen_records = read_samples(a.generated);
  std::vector<SparseSample> real;
  std::vector<SparseSample> gen;
  for (const auto& r : real_records) real.push_back(r.sample);
  for (const auto& r : gen_records) gen.push_back(r.sample);
  if (real.empty() || gen.empty()) throw DataError("eval needs non-empty real and generated sets");
  if (real.front().ambient_dim() != gen.front().ambient_dim()) {
    throw DataError("real and generated samples differ in ambient dimension");
  }
  const fs::path dir(common.out);
  const std::string stamp = utc_timestamp();
  const std::string config_hash = cfg.hash();
  auto report = [&](std::string family) {
    eval::MetricReport r;
    r.family = std::move(family);
    r.seed = cfg.seed;
    r.config_hash = config_hash;
    return r;
  };
  const auto n_real = static_cast<long>(real.size());
  const auto n_gen = static_cast<long>(gen.size());

  for (const auto& m : metrics) {
    eval::MetricReport r = report(m);
    if (m == "sparsity") {
      const int bins = cfg.evaluation.histogram_bins;
      const eval::Histogram hr = eval::sparsity_histogram(real, bins);
      const eval::Histogram hg = eval::sparsity_histogram(gen, bins);
      r.add("mean_sparsity_real", hr.mean, n_real);
      r.add("mean_sparsity_generated", hg.mean, n_gen);
      r.add("mean_sparsity_abs_diff", std::abs(hr.mean - hg.mean), n_gen);
      std::vector<eval::LongRow> rows = eval::histogram_long_rows(hr, "real");
      const auto gen_rows = eval::histogram_long_rows(hg, "generated");
      rows.insert(rows.end(), gen_rows.begin(), gen_rows.end());
      eval::write_text(dir / "sparsity_histogram.csv", eval::to_long_csv("bin", rows));
    } else if (m == "w1") {
      const eval::W1Report w = eval::wasserstein1_report(eval::value_sums(real), eval::value_sums(gen), cfg.seed);
      r.add("w1_raw", w.raw, static_cast<long>(w.n));
      r.add("w1_normalized", w.normalized, static_cast<long>(w.n));
      r.add("reference_std", w.reference_std, static_cast<long>(w.n));
    } else if (m == "mmd") {
      auto subsample = [&](const std::vector<SparseSample>& v, std::uint64_t stream) {
        std::vector<SparseSample> s = v;
        const auto cap = static_cast<std::size_t>(cfg.evaluation.mmd_max_samples);
        if (s.size() > cap) {
          Rng rng = derive_rng(cfg.seed, 0x33D, stream);
          std::shuffle(s.begin(), s.end(), rng);
          s.resize(cap);
        }
        return baselines::to_matrix(s);
      };
      const Matrix x = subsample(real, 0);
      const Matrix y = subsample(gen, 1);
      const eval::MmdReport mr = eval::mmd_rbf(x, y);
      r.add("mmd", mr.mmd, static_cast<long>(x.rows() + y.rows()));
      r.add("mmd2", mr.mmd2, static_cast<long>(x.rows() + y.rows()));
      r.add("bandwidth", mr.bandwidth, static_cast<long>(x.rows() + y.rows()));
      r.details["bandwidth_fallback"] = mr.bandwidth_fallback;
    } else if (m == "scc") {
      const eval::SpearmanReport s = eval::spearman(eval::per_dimension_means(real), eval::per_dimension_means(gen));
      r.add("scc", s.rho, real.front().ambient_dim());
      r.details["undefined"] = s.undefined;
    } else if (m == "validity") {
      std::vector<std::vector<int>> dims;
      for (const auto& g : gen_records) dims.push_back(g.has_generation_order ? g.generation_dims : g.sample.dims());
      r.add("ordering_validity_rate", eval::ordering_validity_rate(dims), n_gen);
    }
    eval::write_report(dir, r, stamp);
  }
  out << dir.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct RdArgs {
  std::string model;
  std::string data;
  std::string grid;
  std::optional<int> mc;
  std::optional<int> max_samples;
};

int cmd_rd_curve(const Common& common, const RdArgs& a, std::ostream& out) {
  const RunConfig cfg = resolve_config(common);
  if (common.out.empty()) throw ConfigError("rd-curve requires --out FILE");
  const Checkpoint ckpt = load_checkpoint(a.model);
  if (ckpt.model_kind != "ddpm-dense") {
    throw ConfigError("rd-curve is defined for input-space diffusion models (ddpm-dense), got '" +
                      ckpt.model_kind + "'");
  }
  const std::vector<SparseSample> raw = a.data.empty() ? load_data(cfg) : read_jsonl(a.data);
  const ValueScaling scaling = scaling_of(ckpt);
  const int max_samples = a.max_samples.value_or(cfg.evaluation.rd_max_samples);
  std::vector<SparseSample> data;
  for (std::size_t i = 0; i < raw.size() && static_cast<int>(i) < max_samples; ++i) {
    data.push_back(apply_scaling(raw[i], scaling));
  }
  const int T = ckpt.config.at("diffusion_steps").get<int>();
  const diffusion::NoiseSchedule schedule = diffusion::NoiseSchedule::cosine(T);
  diffusion::Backbone backbone =
      baselines::make_dense_backbone(baselines::DenseDmConfig::from_json(ckpt.config.at("dense_dm")), 0);
  ckpt.get_parameters(backbone.parameters(), "ema/");
  if (!data.empty() && data.front().ambient_dim() != backbone.config().data_dim) {
    throw CompatibilityError("data ambient dimension does not match the model");
  }
  eval::RdOptions opt;
  opt.grid = a.grid.empty() ? eval::default_rd_grid(T, cfg.evaluation.rd_grid_points) : parse_int_list(a.grid, "--grid");
  opt.mc_samples = a.mc.value_or(cfg.evaluation.rd_mc_samples);
  opt.seed = cfg.seed;
  const auto predict = [&](const Matrix& x_t, std::span<const int> t, const Matrix*) {
    const Matrix e = backbone.predict(x_t, diffusion::time_features(schedule, t, backbone.config().time_embed_dim));
    return diffusion::predicted_x0(diffusion::Prediction::eps, e, x_t, t, schedule);
  };
  const auto points = eval::rate_distortion(predict, schedule, baselines::to_matrix(data), opt);
  const auto rows = eval::rd_long_rows(points);
  eval::write_text(common.out, eval::to_long_csv("t", rows));
  out << common.out << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

int cmd_scaling_report(const Common& common, const std::string& dims_text, double l_mean, std::ostream& out) {
  const RunConfig cfg = resolve_config(common);
  if (common.out.empty()) throw ConfigError("scaling-report requires --out FILE");
  const std::vector<int> dims = parse_int_list(dims_text, "--dims");
  if (dims.empty()) throw ConfigError("--dims must name at least one dimension");
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (dims[i] <= 0 || (i > 0 && dims[i] <= dims[i - 1])) {
      throw ConfigError("--dims must be positive and strictly ascending");
    }
  }
  if (l_mean < 0) throw ConfigError("--l-mean must be non-negative");
  diffusion::BackboneConfig sed_latent = cfg.latent_backbone;
  sed_latent.data_dim = cfg.savae.latent_dim;
  diffusion::BackboneConfig ldm_latent = cfg.latent_backbone;
  ldm_latent.data_dim = cfg.dense_vae.latent_dim;

  std::string text =
      "model_kind,s,l_mean,forward_flops,backward_flops,train_flops,output_head_flops,peak_activation_bytes,"
      "relative_flops,relative_memory\n";
  for (const std::string kind : {"sed", "ddpm-dense", "ldm-dense"}) {
    double first_flops = 0.0;
    double first_mem = 0.0;
    for (int s : dims) {
      eval::FlopsEstimate e;
      if (kind == "sed") {
        e = eval::flops_sed(cfg.savae, sed_latent, s, l_mean);
      } else if (kind == "ddpm-dense") {
        e = eval::flops_dense_ddpm(cfg.dense_dm, s);
      } else {
        baselines::DenseVaeConfig vc = cfg.dense_vae;
        vc.ambient_dim = s;
        e = eval::flops_ldm(vc, ldm_latent, s);
      }
      const double train = e.forward + e.backward;
      if (s == dims.front()) {
        first_flops = train;
        first_mem = e.peak_activation_bytes;
      }
      const double head = kind == "sed" ? e.line("decoder.output_head") : 0.0;
      text += kind + "," + std::to_string(s) + "," + format_double(kind == "sed" ? l_mean : 0.0) + "," +
              format_double(e.forward) + "," + format_double(e.backward) + "," + format_double(train) + "," +
              format_double(head) + "," + format_double(e.peak_activation_bytes) + "," +
              format_double(train / first_flops) + "," + format_double(e.peak_activation_bytes / first_mem) + "\n";
    }
  }
  eval::write_text(common.out, text);
  out << common.out << "\n";
  return kOk;
}

int cmd_generate_data(const Common& common, std::ostream& out) {
  const RunConfig cfg = resolve_config(common);
  if (common.out.empty()) throw ConfigError("generate-data requires --out FILE");
  if (!cfg.dataset) throw ConfigError("generate-data needs a 'dataset' spec in the config");
  const std::vector<SparseSample> data = generate_dataset(*cfg.dataset);
  eval::write_text(common.out, to_jsonl(data));
  eval::write_text(common.out + ".manifest.json", dataset_manifest(*cfg.dataset, data).dump(2) + "\n");
  out << common.out << "\n";
  return kOk;
}

int cmd_defaults(const Common& common, std::ostream& out) {
  const std::string text = config_schema().dump(2) + "\n";
  if (common.out.empty()) {
    out << text;
  } else {
    eval::write_text(common.out, text);
    out << common.out << "\n";
  }
  return kOk;
}

}  // namespace

// ---------------------------------------------------------------------------

std::vector<SparseSample> load_data(const RunConfig& cfg) {
  if (cfg.dataset) return generate_dataset(*cfg.dataset);
  if (!fs::exists(cfg.data_path)) throw DataError("data file '" + cfg.data_path + "' does not exist");
  return read_jsonl(cfg.data_path);
}

std::vector<SampleRecord> read_samples(const std::string& path) {
  if (!fs::exists(path)) throw DataError("sample file '" + path + "' does not exist");
  std::vector<SampleRecord> out;
  if (fs::path(path).extension() == ".jsonl") {
    std::ifstream in(path);
    std::string line;
    std::size_t offset = 0;
    while (std::getline(in, line)) {
      const std::size_t line_offset = offset;
      offset += line.size() + 1;
      if (line.empty()) continue;
      SampleRecord r;
      try {
        const nlohmann::json j = nlohmann::json::parse(line);
        r.sample = sparse_sample_from_json(j);
        if (j.contains("gen_d")) {
          r.generation_dims = j.at("gen_d").get<std::vector<int>>();
          r.has_generation_order = true;
        }
      } catch (const nlohmann::json::exception& e) {
        throw FormatError("'" + path + "': " + e.what(), line_offset);
      } catch (const DataError& e) {
        throw FormatError("'" + path + "': " + e.what(), line_offset);
      }
      out.push_back(std::move(r));
    }
  } else {
    for (const auto& d : read_dense_csv(path)) out.push_back({nze_extract(d), {}, false});
  }
  return out;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sparsity-exploiting diffusion: training, sampling and evaluation"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  Common common;
  SampleArgs sample_args;
  EvalArgs eval_args;
  RdArgs rd_args;
  std::string autoencoder;
  std::string dims = "1000,4000,9000,16000,27000";
  double l_mean = 1000.0;

  auto* train_savae = app.add_subcommand("train-savae", "train the sparsity-aware autoencoder");
  add_common(train_savae, common, true);

  auto* train_diffusion = app.add_subcommand("train-diffusion", "train latent diffusion on a frozen autoencoder");
  add_common(train_diffusion, common, true);
  train_diffusion->add_option("--autoencoder", autoencoder, "savae or dense-vae checkpoint")->required();

  auto* train_dense = app.add_subcommand("train-dense", "train a dense baseline (ddpm-dense or dense-vae)");
  add_common(train_dense, common, true);

  auto* sample = app.add_subcommand("sample", "generate samples from a checkpoint");
  add_common(sample, common, false);
  sample->add_option("--model", sample_args.model, "diffusion checkpoint")->required();
  sample->add_option("--autoencoder", sample_args.autoencoder, "autoencoder checkpoint (latent models)");
  sample->add_option("--sampler", sample_args.sampler, "ddpm or ddim");
  sample->add_option("--steps", sample_args.steps, "denoising steps (0 = T)");
  sample->add_option("--n", sample_args.n, "number of samples");
  sample->add_option("--max-len", sample_args.max_len, "cap on generated pairs per sample");
  sample->add_flag("--constrained", sample_args.constrained, "ascending-only greedy decoding");
  sample->add_flag("--allow-mismatch", sample_args.allow_mismatch, "skip the autoencoder hash check");
  sample->add_option("--threshold-data", sample_args.threshold_data,
                     "training JSON-lines file; zero dense outputs below the calibrated threshold");

  auto* evaluate = app.add_subcommand("eval", "compare generated samples with real data");
  add_common(evaluate, common, false);
  evaluate->add_option("--real", eval_args.real, "real samples (.jsonl or dense .csv)")->required();
  evaluate->add_option("--generated", eval_args.generated, "generated samples (.jsonl or dense .csv)")->required();
  evaluate->add_option("--metrics", eval_args.metrics, "comma-separated: sparsity,w1,mmd,scc,validity");

  auto* rd = app.add_subcommand("rd-curve", "rate-distortion curve of a dense diffusion model");
  add_common(rd, common, false);
  rd->add_option("--model", rd_args.model, "ddpm-dense checkpoint")->required();
  rd->add_option("--data", rd_args.data, "JSON-lines data (default: the config's data)");
  rd->add_option("--grid", rd_args.grid, "comma-separated timesteps");
  rd->add_option("--mc", rd_args.mc, "forward-process draws per sample");
  rd->add_option("--max-samples", rd_args.max_samples, "data rows used");

  auto* scaling = app.add_subcommand("scaling-report", "analytic FLOPs and memory versus dimensionality");
  add_common(scaling, common, false);
  scaling->add_option("--dims", dims, "comma-separated ascending ambient dimensions");
  scaling->add_option("--l-mean", l_mean, "mean non-zero count held fixed across dims");

  auto* generate = app.add_subcommand("generate-data", "write the configured synthetic dataset as JSON lines");
  add_common(generate, common, true);

  auto* defaults = app.add_subcommand("defaults", "print the default config with key descriptions");
  add_common(defaults, common, false);

  std::vector<std::string> argv_storage{"sed_cli"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_storage) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  }

  try {
    if (train_savae->parsed()) return cmd_train_savae(common, out);
    if (train_diffusion->parsed()) return cmd_train_diffusion(common, autoencoder, out);
    if (train_dense->parsed()) return cmd_train_dense(common, out);
    if (sample->parsed()) return cmd_sample(common, sample_args, out);
    if (evaluate->parsed()) return cmd_eval(common, eval_args, out);
    if (rd->parsed()) return cmd_rd_curve(common, rd_args, out);
    if (scaling->parsed()) return cmd_scaling_report(common, dims, l_mean, out);
    if (generate->parsed()) return cmd_generate_data(common, out);
    if (defaults->parsed()) return cmd_defaults(common, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const CompatibilityError& e) {
    err << "incompatible checkpoint: " << e.what() << "\n";
    return kCompatibilityError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kRuntimeError;
}

}  // namespace sed::cli
