#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace sed {

/// Non-zero representation of a vector in R^s: ascending dimension indices and
/// the matching (non-zero) values. The all-zero vector has empty dims/values.
class SparseSample {
 public:
  SparseSample() = default;
  /// Validates the canonical-form invariants; throws DataError on violation.
  SparseSample(int ambient_dim, std::vector<int> dims, std::vector<double> values);

  int ambient_dim() const { return ambient_dim_; }
  const std::vector<int>& dims() const { return dims_; }
  const std::vector<double>& values() const { return values_; }
  int length() const { return static_cast<int>(dims_.size()); }
  /// Fraction of exactly-zero entries, (s - l) / s.
  double sparsity() const;

  friend bool operator==(const SparseSample&, const SparseSample&) = default;

 private:
  int ambient_dim_ = 1;
  std::vector<int> dims_;
  std::vector<double> values_;
};

class DenseSample {
 public:
  DenseSample() = default;
  explicit DenseSample(std::vector<double> data) : data_(std::move(data)) {}

  std::span<const double> data() const { return data_; }
  std::vector<double>& mutable_data() { return data_; }
  int size() const { return static_cast<int>(data_.size()); }
  double operator[](std::size_t i) const { return data_[i]; }

  friend bool operator==(const DenseSample&, const DenseSample&) = default;

 private:
  std::vector<double> data_;
};

/// NZE: ascending indices of entries that are exactly non-zero.
SparseSample nze_extract(const DenseSample& x);
DenseSample nze_reconstruct(const SparseSample& sample);

struct EncodingConfig {
  int d_model = 64;
  double base = 20000.0;

  void validate() const;
};

/// Sinusoidal embedding of a dimension index: entry 2i = sin(dim / k^(2i/d)),
/// entry 2i+1 = cos(dim / k^(2i/d)).
std::vector<double> dimension_encoding(int dim_index, const EncodingConfig& cfg);
/// Writes the encoding into `out` (size d_model) without allocating.
void dimension_encoding_into(int dim_index, const EncodingConfig& cfg,
                             std::span<double> out);

// ---------------------------------------------------------------------------
// Datasets

enum class DatasetKind { blob_grid, sparse_tabular, idx_images };

std::string to_string(DatasetKind kind);
DatasetKind parse_dataset_kind(std::string_view name);

struct DatasetSpec {
  DatasetKind kind = DatasetKind::sparse_tabular;
  int ambient_dim = 100;
  int sample_count = 1000;
  double target_sparsity = 0.95;
  std::uint64_t seed = 0;

  // Non-zero values are log-normal(value_log_mean, value_log_sigma) for the
  // tabular generator. Support size is Poisson((1 - target) * s), truncated
  // to [0, s].
  double value_log_mean = 0.0;
  double value_log_sigma = 1.0;

  // Blob-grid: 1..max_blobs Gaussian bumps per image with uniform centers,
  // widths in [blob_width_min, blob_width_max] (grid cells) and log-normal
  // amplitudes; cells below a global intensity threshold become exact zeros.
  int max_blobs = 3;
  double blob_width_min = 1.0;
  double blob_width_max = 2.5;
  double blob_amplitude_log_sigma = 0.3;

  // idx-images: path to an IDX3 image file; sample_count caps the number read
  // (0 = all).
  std::string idx_path;

  void validate() const;
};

nlohmann::json to_json(const DatasetSpec& spec);
/// Strict: unknown keys are a ConfigError.
DatasetSpec dataset_spec_from_json(const nlohmann::json& j);

/// Deterministic given spec.seed; each sample uses its own derived stream.
std::vector<SparseSample> generate_dataset(const DatasetSpec& spec);

/// Reads an IDX3 (magic 0x00000803) unsigned-byte image file. Pixel values are
/// returned unscaled (0..255); see preprocess_scale.
std::vector<DenseSample> load_idx_images(const std::filesystem::path& path);
/// Parses an in-memory IDX3 buffer.
std::vector<DenseSample> parse_idx_images(std::span<const std::uint8_t> bytes);

// ---------------------------------------------------------------------------
// Value scaling

enum class ScalingScheme { identity, max_scale, log1p_max_scale };

std::string to_string(ScalingScheme scheme);
ScalingScheme parse_scaling_scheme(std::string_view name);

/// Zero-preserving invertible value transform with its fitted parameter.
/// log1p-max-scale uses sign(x) * log1p(|x|) so negative values stay defined.
struct ValueScaling {
  ScalingScheme scheme = ScalingScheme::identity;
  double max_value = 1.0;

  double forward(double x) const;
  double inverse(double y) const;

  nlohmann::json to_json() const;
  static ValueScaling from_json(const nlohmann::json& j);
};

ValueScaling fit_scaling(std::span<const SparseSample> samples, ScalingScheme scheme);

template <typename Sample>
struct Scaled {
  std::vector<Sample> samples;
  ValueScaling transform;
};

Scaled<SparseSample> preprocess_scale(std::span<const SparseSample> samples,
                                      ScalingScheme scheme);
Scaled<DenseSample> preprocess_scale(std::span<const DenseSample> samples,
                                     ScalingScheme scheme);
SparseSample apply_scaling(const SparseSample& sample, const ValueScaling& t);
SparseSample invert_scaling(const SparseSample& sample, const ValueScaling& t);

// ---------------------------------------------------------------------------
// Interchange

/// {"s": int, "d": [...], "v": [...]}; extra keys are ignored on read.
nlohmann::json to_json(const SparseSample& sample);
SparseSample sparse_sample_from_json(const nlohmann::json& j);

void write_jsonl(const std::filesystem::path& path, std::span<const SparseSample> samples);
std::string to_jsonl(std::span<const SparseSample> samples);
/// Throws FormatError (byte offset of the offending line) on malformed lines
/// and on SparseSample invariant violations.
std::vector<SparseSample> read_jsonl(const std::filesystem::path& path);

/// Dense matrix as CSV, one sample per row, no header.
void write_dense_csv(const std::filesystem::path& path, std::span<const DenseSample> samples);
std::vector<DenseSample> read_dense_csv(const std::filesystem::path& path);

/// Manifest: spec fields + seed + content hash of the JSON-lines serialization.
nlohmann::json dataset_manifest(const DatasetSpec& spec, std::span<const SparseSample> samples);

double mean_sparsity(std::span<const SparseSample> samples);

}  // namespace sed
