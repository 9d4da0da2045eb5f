#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sed/baselines.hpp"
#include "sed/latent_diffusion.hpp"
#include "sed/savae.hpp"
#include "sed/sparse_data.hpp"

namespace sed::eval {

using nn::Matrix;

// ---------------------------------------------------------------------------
// Sparsity

double sparsity(const DenseSample& sample);
double sparsity(const SparseSample& sample);

struct Histogram {
  std::vector<double> edges;  // bins + 1 edges on [0, 1]
  std::vector<long> counts;
  double mean = 0.0;
  long n = 0;
};

/// Left-closed bins [e_i, e_{i+1}); the last bin is [e_{b-1}, 1].
Histogram histogram_unit_interval(std::span<const double> values, int bins = 20);
Histogram sparsity_histogram(std::span<const SparseSample> samples, int bins = 20);
Histogram sparsity_histogram(std::span<const DenseSample> samples, int bins = 20);

// ---------------------------------------------------------------------------
// Distances

/// Mean |sorted(a)_i - sorted(b)_i| over equal-size sets.
double wasserstein1(std::span<const double> a, std::span<const double> b);

struct W1Report {
  double raw = 0.0;
  /// raw / std(reference); NaN when the reference has zero spread.
  double normalized = 0.0;
  double reference_std = 0.0;
  std::size_t n = 0;
  std::uint64_t subsample_seed = 0;
};
/// Subsamples the larger set (without replacement, recorded seed) to match.
W1Report wasserstein1_report(std::span<const double> reference, std::span<const double> other,
                             std::uint64_t seed);

/// Per-sample value sum, the desk-scale stand-in for the P_T statistic.
std::vector<double> value_sums(std::span<const SparseSample> samples);

struct MmdReport {
  double mmd = 0.0;
  double mmd2 = 0.0;
  double bandwidth = 1.0;
  /// Median heuristic gave zero; bandwidth fell back to 1.
  bool bandwidth_fallback = false;
};
/// Median pairwise Euclidean distance over X u Y (distinct pairs).
double median_pairwise_distance(const Matrix& x, const Matrix& y);
/// Biased V-statistic MMD with k(x, y) = exp(-||x - y||^2 / (2 sigma^2)).
MmdReport mmd_rbf(const Matrix& x, const Matrix& y, std::optional<double> bandwidth = std::nullopt);

/// Average ranks (1-based) with ties sharing their mean rank.
std::vector<double> mid_ranks(std::span<const double> x);

struct SpearmanReport {
  double rho = 0.0;
  /// A constant input leaves the correlation undefined (rho is NaN).
  bool undefined = false;
};
SpearmanReport spearman(std::span<const double> x, std::span<const double> y);

/// Column means of the densified samples.
std::vector<double> per_dimension_means(std::span<const SparseSample> samples);

// ---------------------------------------------------------------------------
// Rate-distortion of an input-space diffusion model

struct RdPoint {
  int t = 0;
  double rate_zero = 0.0;
  double rate_nonzero = 0.0;
  double distortion_zero = 0.0;
  double distortion_nonzero = 0.0;
};

struct RdOptions {
  std::vector<int> grid;  // empty: default_rd_grid(T)
  int mc_samples = 16;
  std::uint64_t seed = 0;
};

/// `points` evenly spaced timesteps from 0 to T inclusive.
std::vector<int> default_rd_grid(int T, int points = 50);

/// rate(t) = sum_{s=t+1}^{T} E[c_s^2 (x0 - x0_hat(x_s, s))^2 / (2 sigma_s^2)],
/// with c_s = sqrt(gamma_{s-1}) (1 - alpha_s) / (1 - gamma_s), averaged over
/// the zero (resp. non-zero) entries of x0. Distortion is the RMSE of
/// x0_hat(x_t, t) on the same split. Replicate m of sample i occupies row
/// m * n + i of each predictor batch.
std::vector<RdPoint> rate_distortion(const diffusion::X0Predictor& predict,
                                     const diffusion::NoiseSchedule& schedule, const Matrix& x0,
                                     const RdOptions& options);

// ---------------------------------------------------------------------------

bool is_valid_ordering(std::span<const int> dims);
double ordering_validity_rate(std::span<const std::vector<int>> dims);
double ordering_validity_rate(std::span<const savae::GeneratedSample> samples);

// ---------------------------------------------------------------------------
// Analytic compute model (one multiply-accumulate = 2 FLOPs, batch 1)

double linear_flops(double in, double out);
double attention_flops(double length, double width);
double feed_forward_flops(double length, double width, double hidden);

struct FlopsLine {
  std::string name;
  double forward = 0.0;
};

struct FlopsEstimate {
  std::string model_kind;
  int ambient_dim = 0;
  double l_mean = 0.0;
  double forward = 0.0;
  double backward = 0.0;  // 2 x forward
  double peak_activation_bytes = 0.0;
  std::vector<FlopsLine> lines;

  double line(std::string_view name) const;
};

/// SAVAE encoder (L = l) + decoder (L = l + 1) + one latent backbone pass.
FlopsEstimate flops_sed(const savae::SavaeConfig& savae, const diffusion::BackboneConfig& latent,
                        int ambient_dim, double l_mean);
/// One dense backbone pass over the full vector.
FlopsEstimate flops_dense_ddpm(const baselines::DenseDmConfig& dense, int ambient_dim);
/// Dense VAE encoder + decoder + one latent backbone pass.
FlopsEstimate flops_ldm(const baselines::DenseVaeConfig& vae, const diffusion::BackboneConfig& latent,
                        int ambient_dim);

// ---------------------------------------------------------------------------
// Reports

struct MetricRow {
  std::string metric;
  double value = 0.0;
  long n = 0;
};

struct MetricReport {
  std::string family;
  std::vector<MetricRow> rows;
  std::uint64_t seed = 0;
  std::string config_hash;
  nlohmann::json details = nlohmann::json::object();

  void add(std::string metric, double value, long n) { rows.push_back({std::move(metric), value, n}); }
  double value(std::string_view metric) const;
};

/// Header: metric,value,n,seed,config_hash.
std::string to_csv(const MetricReport& report);
/// Sidecar; the timestamp (when non-empty) is the only field that varies between runs.
nlohmann::json to_json(const MetricReport& report, const std::string& timestamp = "");
/// Writes <dir>/<family>.csv and <dir>/<family>.json.
void write_report(const std::filesystem::path& dir, const MetricReport& report,
                  const std::string& timestamp);

struct LongRow {
  std::string key;
  std::string series;
  double value = 0.0;
};
/// Long-format CSV with header `<key_name>,series,value`.
std::string to_long_csv(std::string_view key_name, std::span<const LongRow> rows);

std::vector<LongRow> rd_long_rows(std::span<const RdPoint> points);
std::vector<LongRow> histogram_long_rows(const Histogram& h, const std::string& series);

void write_text(const std::filesystem::path& path, std::string_view text);

}  // namespace sed::eval
