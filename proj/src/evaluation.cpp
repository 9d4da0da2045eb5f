#include "sed/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "sed/errors.hpp"
#include "sed/hashing.hpp"

namespace sed::eval {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double population_std(std::span<const double> v) {
  if (v.empty()) return 0.0;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

/// Squared Euclidean distances between all rows of a and b.
Matrix squared_distances(const Matrix& a, const Matrix& b) {
  const Eigen::VectorXd na = a.rowwise().squaredNorm();
  const Eigen::VectorXd nb = b.rowwise().squaredNorm();
  Matrix d = -2.0 * a * b.transpose();
  d.colwise() += na;
  d.rowwise() += nb.transpose();
  return d.cwiseMax(0.0);
}

}  // namespace

double sparsity(const DenseSample& sample) {
  if (sample.size() == 0) throw ContractError("sparsity: empty vector");
  const auto zeros = std::count(sample.data().begin(), sample.data().end(), 0.0);
  return static_cast<double>(zeros) / sample.size();
}

double sparsity(const SparseSample& sample) { return sample.sparsity(); }

Histogram histogram_unit_interval(std::span<const double> values, int bins) {
  if (values.empty()) throw ContractError("histogram: empty input");
  if (bins <= 0) throw ContractError("histogram: bins must be positive");
  Histogram h;
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  for (int i = 0; i <= bins; ++i) h.edges.push_back(static_cast<double>(i) / bins);
  double sum = 0.0;
  for (double v : values) {
    if (!(v >= 0.0 && v <= 1.0)) throw ContractError("histogram: value outside [0, 1]");
    const int b = std::min(bins - 1, static_cast<int>(std::floor(v * bins)));
    ++h.counts[static_cast<std::size_t>(b)];
    sum += v;
  }
  h.n = static_cast<long>(values.size());
  h.mean = sum / static_cast<double>(values.size());
  return h;
}

Histogram sparsity_histogram(std::span<const SparseSample> samples, int bins) {
  std::vector<double> v;
  v.reserve(samples.size());
  for (const auto& s : samples) v.push_back(s.sparsity());
  return histogram_unit_interval(v, bins);
}

Histogram sparsity_histogram(std::span<const DenseSample> samples, int bins) {
  std::vector<double> v;
  v.reserve(samples.size());
  for (const auto& s : samples) v.push_back(sparsity(s));
  return histogram_unit_interval(v, bins);
}

// ---------------------------------------------------------------------------

double wasserstein1(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw ContractError("wasserstein1: empty input");
  if (a.size() != b.size()) throw ContractError("wasserstein1: sets must have equal size");
  std::vector<double> sa(a.begin(), a.end());
  std::vector<double> sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  double total = 0.0;
  for (std::size_t i = 0; i < sa.size(); ++i) total += std::abs(sa[i] - sb[i]);
  return total / static_cast<double>(sa.size());
}

W1Report wasserstein1_report(std::span<const double> reference, std::span<const double> other,
                             std::uint64_t seed) {
  if (reference.empty() || other.empty()) throw ContractError("wasserstein1: empty input");
  auto subsample = [&](std::span<const double> v, std::size_t n) {
    std::vector<double> out(v.begin(), v.end());
    if (out.size() > n) {
      Rng rng = derive_rng(seed, 0x5B5);
      std::shuffle(out.begin(), out.end(), rng);
      out.resize(n);
    }
    return out;
  };
  const std::size_t n = std::min(reference.size(), other.size());
  const std::vector<double> a = subsample(reference, n);
  const std::vector<double> b = subsample(other, n);
  W1Report r;
  r.raw = wasserstein1(a, b);
  r.reference_std = population_std(a);
  r.normalized = r.reference_std > 0.0 ? r.raw / r.reference_std : kNaN;
  r.n = n;
  r.subsample_seed = seed;
  return r;
}

std::vector<double> value_sums(std::span<const SparseSample> samples) {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(std::accumulate(s.values().begin(), s.values().end(), 0.0));
  return out;
}

double median_pairwise_distance(const Matrix& x, const Matrix& y) {
  Matrix z(x.rows() + y.rows(), x.cols());
  z << x, y;
  const Matrix d2 = squared_distances(z, z);
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(z.rows() * (z.rows() - 1) / 2));
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < z.rows(); ++j) d.push_back(std::sqrt(d2(i, j)));
  }
  if (d.empty()) return 0.0;
  const std::size_t mid = d.size() / 2;
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid), d.end());
  if (d.size() % 2 == 1) return d[mid];
  const double upper = d[mid];
  const double lower = *std::max_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

MmdReport mmd_rbf(const Matrix& x, const Matrix& y, std::optional<double> bandwidth) {
  if (x.rows() == 0 || y.rows() == 0) throw ContractError("mmd_rbf: empty set");
  if (x.cols() != y.cols()) throw ContractError("mmd_rbf: sets differ in dimensionality");
  MmdReport r;
  if (bandwidth) {
    if (!(*bandwidth > 0.0)) throw ContractError("mmd_rbf: bandwidth must be positive");
    r.bandwidth = *bandwidth;
  } else {
    const double med = median_pairwise_distance(x, y);
    if (med > 0.0) {
      r.bandwidth = med;
    } else {
      r.bandwidth = 1.0;
      r.bandwidth_fallback = true;
    }
  }
  const double scale = -1.0 / (2.0 * r.bandwidth * r.bandwidth);
  auto mean_kernel = [&](const Matrix& a, const Matrix& b) {
    return (squared_distances(a, b) * scale).array().exp().mean();
  };
  r.mmd2 = mean_kernel(x, x) + mean_kernel(y, y) - 2.0 * mean_kernel(x, y);
  r.mmd = std::sqrt(std::max(0.0, r.mmd2));
  return r;
}

std::vector<double> mid_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

SpearmanReport spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ContractError("spearman: sequences differ in length");
  if (x.size() < 2) throw ContractError("spearman: need at least two points");
  const std::vector<double> rx = mid_ranks(x);
  const std::vector<double> ry = mid_ranks(y);
  const double n = static_cast<double>(rx.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  SpearmanReport r;
  if (sxx == 0.0 || syy == 0.0) {
    r.rho = kNaN;
    r.undefined = true;
    return r;
  }
  r.rho = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  return r;
}

std::vector<double> per_dimension_means(std::span<const SparseSample> samples) {
  if (samples.empty()) throw ContractError("per_dimension_means: empty set");
  std::vector<double> means(static_cast<std::size_t>(samples.front().ambient_dim()), 0.0);
  for (const auto& s : samples) {
    if (s.ambient_dim() != samples.front().ambient_dim()) {
      throw DataError("per_dimension_means: samples differ in ambient_dim");
    }
    for (int i = 0; i < s.length(); ++i) {
      means[static_cast<std::size_t>(s.dims()[static_cast<std::size_t>(i)])] += s.values()[static_cast<std::size_t>(i)];
    }
  }
  for (double& m : means) m /= static_cast<double>(samples.size());
  return means;
}

// ---------------------------------------------------------------------------

std::vector<int> default_rd_grid(int T, int points) {
  if (points < 2) throw ConfigError("rd grid needs at least two points");
  std::vector<int> grid;
  for (int i = 0; i < points; ++i) {
    const int t = static_cast<int>(std::llround(static_cast<double>(T) * i / (points - 1)));
    if (grid.empty() || grid.back() != t) grid.push_back(t);
  }
  return grid;
}

std::vector<RdPoint> rate_distortion(const diffusion::X0Predictor& predict,
                                     const diffusion::NoiseSchedule& schedule, const Matrix& x0,
                                     const RdOptions& options) {
  const int T = schedule.T;
  const std::vector<int> grid = options.grid.empty() ? default_rd_grid(T) : options.grid;
  for (int t : grid) {
    if (t < 0 || t > T) {
      throw ConfigError("rd grid timestep " + std::to_string(t) + " outside [0, " + std::to_string(T) + "]");
    }
  }
  if (options.mc_samples < 1) throw ConfigError("rd mc_samples must be at least 1");
  if (x0.rows() == 0) throw ContractError("rate_distortion: empty data");

  const Eigen::Index n = x0.rows();
  const Eigen::Index dim = x0.cols();
  const int m = options.mc_samples;
  Matrix x0_rep(n * m, dim);
  for (int r = 0; r < m; ++r) x0_rep.middleRows(r * n, n) = x0;
  const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> zero_mask = x0_rep.array() == 0.0;
  const double zero_count = static_cast<double>(zero_mask.count());
  const double nonzero_count = static_cast<double>(x0_rep.size()) - zero_count;

  struct Split {
    double zero = 0.0;
    double nonzero = 0.0;
  };
  auto split_mean = [&](const Matrix& values) {
    const double z = zero_mask.select(values.array(), 0.0).sum();
    const double total = values.sum();
    return Split{zero_count > 0 ? z / zero_count : kNaN,
                 nonzero_count > 0 ? (total - z) / nonzero_count : kNaN};
  };
  auto noisy_errors = [&](int t, std::uint64_t stream) {
    Rng rng = derive_rng(options.seed, static_cast<std::uint64_t>(t), stream);
    std::normal_distribution<double> normal;
    Matrix eps(n * m, dim);
    for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = normal(rng);
    const std::vector<int> ts(static_cast<std::size_t>(n * m), t);
    const Matrix x_t = diffusion::forward_diffuse(x0_rep, ts, eps, schedule);
    const Matrix x_hat = predict(x_t, ts, nullptr);
    if (x_hat.rows() != x_t.rows() || x_hat.cols() != dim) {
      throw ContractError("rate_distortion: predictor returned the wrong shape");
    }
    return Matrix((x0_rep - x_hat).array().square());
  };

  // Per-step expected KL, then suffix sums.
  std::vector<Split> step_kl(static_cast<std::size_t>(T) + 1);
  for (int s = 1; s <= T; ++s) {
    const double g_s = schedule.gamma[static_cast<std::size_t>(s)];
    const double g_prev = schedule.gamma[static_cast<std::size_t>(s - 1)];
    const double a = g_s / g_prev;
    // Both ends clipped to the same gamma: the step adds no noise and carries no rate.
    if (a >= 1.0) continue;
    const double c = std::sqrt(g_prev) * (1.0 - a) / (1.0 - g_s);
    const double var = (1.0 - a) * (1.0 - g_prev) / (1.0 - g_s);
    const Split e = split_mean(noisy_errors(s, 0));
    step_kl[static_cast<std::size_t>(s)] = {c * c * e.zero / (2.0 * var), c * c * e.nonzero / (2.0 * var)};
  }
  std::vector<Split> suffix(static_cast<std::size_t>(T) + 2);
  for (int s = T; s >= 0; --s) {
    const auto i = static_cast<std::size_t>(s);
    suffix[i] = {suffix[i + 1].zero + (s + 1 <= T ? step_kl[i + 1].zero : 0.0),
                 suffix[i + 1].nonzero + (s + 1 <= T ? step_kl[i + 1].nonzero : 0.0)};
  }

  std::vector<RdPoint> out;
  for (int t : grid) {
    RdPoint p;
    p.t = t;
    p.rate_zero = suffix[static_cast<std::size_t>(t)].zero;
    p.rate_nonzero = suffix[static_cast<std::size_t>(t)].nonzero;
    const Split d = split_mean(noisy_errors(t, 1));
    p.distortion_zero = std::sqrt(d.zero);
    p.distortion_nonzero = std::sqrt(d.nonzero);
    out.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------

bool is_valid_ordering(std::span<const int> dims) {
  for (std::size_t i = 1; i < dims.size(); ++i) {
    if (dims[i] <= dims[i - 1]) return false;
  }
  return true;
}

double ordering_validity_rate(std::span<const std::vector<int>> dims) {
  if (dims.empty()) return kNaN;
  const auto valid = std::count_if(dims.begin(), dims.end(), [](const auto& d) { return is_valid_ordering(d); });
  return static_cast<double>(valid) / static_cast<double>(dims.size());
}

double ordering_validity_rate(std::span<const savae::GeneratedSample> samples) {
  std::vector<std::vector<int>> dims;
  dims.reserve(samples.size());
  for (const auto& s : samples) dims.push_back(s.dims);
  return ordering_validity_rate(dims);
}

// ---------------------------------------------------------------------------

double linear_flops(double in, double out) { return 2.0 * in * out; }

double attention_flops(double length, double width) {
  return 2.0 * (4.0 * length * width * width) + 2.0 * (2.0 * length * length * width);
}

double feed_forward_flops(double length, double width, double hidden) {
  return 4.0 * length * width * hidden;
}

double FlopsEstimate::line(std::string_view name) const {
  for (const auto& l : lines) {
    if (l.name == name) return l.forward;
  }
  throw ContractError("flops estimate has no line '" + std::string(name) + "'");
}

namespace {

struct BackboneCost {
  double flops = 0.0;
  double activations = 0.0;
};

BackboneCost backbone_cost(const diffusion::BackboneConfig& cfg) {
  const auto& w = cfg.widths;
  const double te = cfg.time_embed_dim;
  BackboneCost c;
  c.flops += linear_flops(te, te);
  c.flops += linear_flops(cfg.input_width(), w[0]) + linear_flops(te, w[0]);
  c.activations += cfg.input_width() + te + 2.0 * w[0];
  for (std::size_t i = 1; i < w.size(); ++i) {
    c.flops += linear_flops(w[i - 1], w[i]) + linear_flops(te, w[i]);
    c.flops += linear_flops(w[i], w[i - 1]) + linear_flops(te, w[i - 1]);
    c.activations += 2.0 * w[i] + 2.0 * w[i - 1];
  }
  c.flops += linear_flops(w[0], cfg.data_dim);
  c.activations += cfg.data_dim;
  return c;
}

FlopsEstimate finish(FlopsEstimate e, double activations) {
  e.forward = 0.0;
  for (const auto& l : e.lines) e.forward += l.forward;
  e.backward = 2.0 * e.forward;
  e.peak_activation_bytes = 8.0 * activations;
  return e;
}

}  // namespace

FlopsEstimate flops_sed(const savae::SavaeConfig& sv, const diffusion::BackboneConfig& latent,
                        int ambient_dim, double l_mean) {
  if (ambient_dim <= 0 || l_mean < 0) throw ContractError("flops_sed: bad dimensions");
  const double d = sv.d_model;
  const double layers = sv.num_layers;
  const double le = std::max(1.0, l_mean);
  const double ld = l_mean + 1.0;
  FlopsEstimate e;
  e.model_kind = "sed";
  e.ambient_dim = ambient_dim;
  e.l_mean = l_mean;
  e.lines.push_back({"encoder.embed", le * linear_flops(1, d)});
  e.lines.push_back({"encoder.blocks", layers * (attention_flops(le, d) + feed_forward_flops(le, d, sv.d_ff))});
  e.lines.push_back({"encoder.heads", 2.0 * linear_flops(d, sv.latent_dim)});
  e.lines.push_back({"decoder.start", linear_flops(sv.latent_dim, d)});
  e.lines.push_back({"decoder.embed", l_mean * linear_flops(1, d)});
  e.lines.push_back({"decoder.blocks", layers * (attention_flops(ld, d) + feed_forward_flops(ld, d, sv.d_ff))});
  e.lines.push_back({"decoder.value_head", ld * linear_flops(d, 1)});
  e.lines.push_back({"decoder.output_head", ld * linear_flops(d, ambient_dim + 1.0)});
  const BackboneCost b = backbone_cost(latent);
  e.lines.push_back({"latent_backbone", b.flops});
  const double per_layer = 6.0 * d + sv.d_ff + static_cast<double>(sv.num_heads) * ld;
  const double activations = 2.0 * layers * ld * per_layer + ld * (ambient_dim + 1.0) + b.activations;
  return finish(std::move(e), activations);
}

FlopsEstimate flops_dense_ddpm(const baselines::DenseDmConfig& dense, int ambient_dim) {
  if (ambient_dim <= 0) throw ContractError("flops_dense_ddpm: bad dimension");
  baselines::DenseDmConfig cfg = dense;
  cfg.ambient_dim = ambient_dim;
  const diffusion::BackboneConfig bc = cfg.backbone_config();
  FlopsEstimate e;
  e.model_kind = "ddpm-dense";
  e.ambient_dim = ambient_dim;
  e.lines.push_back({"input_layer", linear_flops(ambient_dim, bc.widths[0])});
  e.lines.push_back({"output_layer", linear_flops(bc.widths[0], ambient_dim)});
  const BackboneCost full = backbone_cost(bc);
  e.lines.push_back({"internal", full.flops - e.lines[0].forward - e.lines[1].forward});
  return finish(std::move(e), full.activations);
}

FlopsEstimate flops_ldm(const baselines::DenseVaeConfig& vae, const diffusion::BackboneConfig& latent,
                        int ambient_dim) {
  if (ambient_dim <= 0) throw ContractError("flops_ldm: bad dimension");
  FlopsEstimate e;
  e.model_kind = "ldm-dense";
  e.ambient_dim = ambient_dim;
  double enc = 0.0;
  double dec = 0.0;
  double activations = 0.0;
  double in = ambient_dim;
  for (int w : vae.widths) {
    enc += linear_flops(in, w);
    dec += linear_flops(w, in);
    activations += 2.0 * (in + w);
    in = w;
  }
  enc += 2.0 * linear_flops(in, vae.latent_dim);
  dec += linear_flops(vae.latent_dim, in);
  e.lines.push_back({"autoencoder.encoder", enc});
  e.lines.push_back({"autoencoder.decoder", dec});
  const BackboneCost b = backbone_cost(latent);
  e.lines.push_back({"latent_backbone", b.flops});
  return finish(std::move(e), activations + b.activations);
}

// ---------------------------------------------------------------------------

double MetricReport::value(std::string_view metric) const {
  for (const auto& r : rows) {
    if (r.metric == metric) return r.value;
  }
  throw ContractError("report has no metric '" + std::string(metric) + "'");
}

std::string to_csv(const MetricReport& report) {
  std::string out = "metric,value,n,seed,config_hash\n";
  for (const auto& r : report.rows) {
    out += r.metric + "," + format_double(r.value) + "," + std::to_string(r.n) + "," +
           std::to_string(report.seed) + "," + report.config_hash + "\n";
  }
  return out;
}

nlohmann::json to_json(const MetricReport& report, const std::string& timestamp) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    // NaN is not representable in JSON; it is written as null.
    nlohmann::json v = std::isfinite(r.value) ? nlohmann::json(r.value) : nlohmann::json(nullptr);
    rows.push_back({{"metric", r.metric}, {"value", v}, {"n", r.n}});
  }
  nlohmann::json j = {{"family", report.family},
                      {"seed", report.seed},
                      {"config_hash", report.config_hash},
                      {"metrics", rows},
                      {"details", report.details}};
  if (!timestamp.empty()) j["timestamp"] = timestamp;
  return j;
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

void write_report(const std::filesystem::path& dir, const MetricReport& report,
                  const std::string& timestamp) {
  write_text(dir / (report.family + ".csv"), to_csv(report));
  write_text(dir / (report.family + ".json"), to_json(report, timestamp).dump(2) + "\n");
}

std::string to_long_csv(std::string_view key_name, std::span<const LongRow> rows) {
  std::string out = std::string(key_name) + ",series,value\n";
  for (const auto& r : rows) out += r.key + "," + r.series + "," + format_double(r.value) + "\n";
  return out;
}

std::vector<LongRow> rd_long_rows(std::span<const RdPoint> points) {
  std::vector<LongRow> rows;
  for (const auto& p : points) {
    const std::string t = std::to_string(p.t);
    rows.push_back({t, "rate_zero", p.rate_zero});
    rows.push_back({t, "rate_nonzero", p.rate_nonzero});
    rows.push_back({t, "distortion_zero", p.distortion_zero});
    rows.push_back({t, "distortion_nonzero", p.distortion_nonzero});
  }
  return rows;
}

std::vector<LongRow> histogram_long_rows(const Histogram& h, const std::string& series) {
  std::vector<LongRow> rows;
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    rows.push_back({format_double(h.edges[i]), series, static_cast<double>(h.counts[i])});
  }
  return rows;
}

}  // namespace sed::eval
