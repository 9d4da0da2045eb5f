#include "sed/sparse_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "sed/errors.hpp"
#include "sed/hashing.hpp"
#include "sed/json_util.hpp"
#include "sed/random.hpp"

namespace sed {

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

}  // namespace

// ---------------------------------------------------------------------------

SparseSample::SparseSample(int ambient_dim, std::vector<int> dims, std::vector<double> values)
    : ambient_dim_(ambient_dim), dims_(std::move(dims)), values_(std::move(values)) {
  if (ambient_dim_ <= 0) throw DataError("ambient dimension must be positive");
  if (dims_.size() != values_.size()) {
    throw DataError("dims and values differ in length");
  }
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (dims_[i] < 0 || dims_[i] >= ambient_dim_) {
      throw DataError("dimension index " + std::to_string(dims_[i]) + " outside [0, " +
                      std::to_string(ambient_dim_) + ")");
    }
    if (i > 0 && dims_[i] <= dims_[i - 1]) {
      throw DataError("dimension indices are not strictly ascending at position " +
                      std::to_string(i));
    }
    if (values_[i] == 0.0 || !std::isfinite(values_[i])) {
      throw DataError("value at position " + std::to_string(i) + " is zero or non-finite");
    }
  }
}

double SparseSample::sparsity() const {
  return static_cast<double>(ambient_dim_ - length()) / static_cast<double>(ambient_dim_);
}

SparseSample nze_extract(const DenseSample& x) {
  if (x.size() == 0) throw DataError("cannot extract from an empty vector");
  std::vector<int> dims;
  std::vector<double> values;
  const auto data = x.data();
  for (std::size_t j = 0; j < data.size(); ++j) {
    if (!std::isfinite(data[j])) {
      throw DataError("non-finite entry at index " + std::to_string(j));
    }
    if (data[j] != 0.0) {
      dims.push_back(static_cast<int>(j));
      values.push_back(data[j]);
    }
  }
  return SparseSample(x.size(), std::move(dims), std::move(values));
}

DenseSample nze_reconstruct(const SparseSample& sample) {
  std::vector<double> data(static_cast<std::size_t>(sample.ambient_dim()), 0.0);
  for (int i = 0; i < sample.length(); ++i) {
    data[static_cast<std::size_t>(sample.dims()[i])] = sample.values()[i];
  }
  return DenseSample(std::move(data));
}

void EncodingConfig::validate() const {
  if (d_model <= 0 || d_model % 2 != 0) {
    throw ConfigError("d_model must be a positive even integer, got " + std::to_string(d_model));
  }
  if (!(base > 0.0)) throw ConfigError("dimension encoding base must be positive");
}

void dimension_encoding_into(int dim_index, const EncodingConfig& cfg, std::span<double> out) {
  cfg.validate();
  if (dim_index < 0) throw ContractError("dimension index must be non-negative");
  if (out.size() != static_cast<std::size_t>(cfg.d_model)) {
    throw ContractError("dimension encoding output has wrong size");
  }
  const double dim = dim_index;
  for (int i = 0; 2 * i < cfg.d_model; ++i) {
    const double angle = dim / std::pow(cfg.base, 2.0 * i / cfg.d_model);
    out[static_cast<std::size_t>(2 * i)] = std::sin(angle);
    out[static_cast<std::size_t>(2 * i + 1)] = std::cos(angle);
  }
}

std::vector<double> dimension_encoding(int dim_index, const EncodingConfig& cfg) {
  cfg.validate();
  std::vector<double> out(static_cast<std::size_t>(cfg.d_model));
  dimension_encoding_into(dim_index, cfg, out);
  return out;
}

// ---------------------------------------------------------------------------

std::string to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::blob_grid: return "blob-grid";
    case DatasetKind::sparse_tabular: return "sparse-tabular";
    case DatasetKind::idx_images: return "idx-images";
  }
  return "unknown";
}

DatasetKind parse_dataset_kind(std::string_view name) {
  if (name == "blob-grid") return DatasetKind::blob_grid;
  if (name == "sparse-tabular") return DatasetKind::sparse_tabular;
  if (name == "idx-images") return DatasetKind::idx_images;
  throw ConfigError("unknown dataset kind '" + std::string(name) +
                    "' (expected blob-grid, sparse-tabular or idx-images)");
}

void DatasetSpec::validate() const {
  if (kind == DatasetKind::idx_images) {
    if (idx_path.empty()) throw ConfigError("idx-images dataset requires idx_path");
    if (sample_count < 0) throw ConfigError("sample_count must be non-negative");
    return;
  }
  if (ambient_dim <= 0) throw ConfigError("ambient_dim must be positive");
  if (sample_count < 1) throw ConfigError("sample_count must be at least 1");
  if (!(target_sparsity > 0.0 && target_sparsity < 1.0)) {
    throw ConfigError("target_sparsity must lie in (0, 1)");
  }
  if (value_log_sigma < 0.0) throw ConfigError("value_log_sigma must be non-negative");
  if (kind == DatasetKind::blob_grid) {
    const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(ambient_dim))));
    if (side * side != ambient_dim) {
      throw ConfigError("blob-grid requires a square ambient_dim, got " +
                        std::to_string(ambient_dim));
    }
    if (max_blobs < 1) throw ConfigError("max_blobs must be at least 1");
    if (!(blob_width_min > 0.0 && blob_width_max >= blob_width_min)) {
      throw ConfigError("blob widths must satisfy 0 < min <= max");
    }
  }
}

nlohmann::json to_json(const DatasetSpec& spec) {
  return {
      {"kind", to_string(spec.kind)},
      {"ambient_dim", spec.ambient_dim},
      {"sample_count", spec.sample_count},
      {"target_sparsity", spec.target_sparsity},
      {"seed", spec.seed},
      {"value_log_mean", spec.value_log_mean},
      {"value_log_sigma", spec.value_log_sigma},
      {"max_blobs", spec.max_blobs},
      {"blob_width_min", spec.blob_width_min},
      {"blob_width_max", spec.blob_width_max},
      {"blob_amplitude_log_sigma", spec.blob_amplitude_log_sigma},
      {"idx_path", spec.idx_path},
  };
}

DatasetSpec dataset_spec_from_json(const nlohmann::json& j) {
  require_known_keys(j,
                     {"kind", "ambient_dim", "sample_count", "target_sparsity", "seed",
                      "value_log_mean", "value_log_sigma", "max_blobs", "blob_width_min",
                      "blob_width_max", "blob_amplitude_log_sigma", "idx_path"},
                     "dataset");
  DatasetSpec spec;
  std::string kind = to_string(spec.kind);
  read_optional(j, "kind", kind, "dataset");
  spec.kind = parse_dataset_kind(kind);
  read_optional(j, "ambient_dim", spec.ambient_dim, "dataset");
  read_optional(j, "sample_count", spec.sample_count, "dataset");
  read_optional(j, "target_sparsity", spec.target_sparsity, "dataset");
  read_optional(j, "seed", spec.seed, "dataset");
  read_optional(j, "value_log_mean", spec.value_log_mean, "dataset");
  read_optional(j, "value_log_sigma", spec.value_log_sigma, "dataset");
  read_optional(j, "max_blobs", spec.max_blobs, "dataset");
  read_optional(j, "blob_width_min", spec.blob_width_min, "dataset");
  read_optional(j, "blob_width_max", spec.blob_width_max, "dataset");
  read_optional(j, "blob_amplitude_log_sigma", spec.blob_amplitude_log_sigma, "dataset");
  read_optional(j, "idx_path", spec.idx_path, "dataset");
  return spec;
}

namespace {

struct Blob {
  double row, col, width, amplitude;
};

std::vector<Blob> draw_blobs(const DatasetSpec& spec, int side, Rng& rng) {
  std::uniform_int_distribution<int> count(1, spec.max_blobs);
  std::uniform_real_distribution<double> pos(0.0, static_cast<double>(side));
  std::uniform_real_distribution<double> width(spec.blob_width_min, spec.blob_width_max);
  std::normal_distribution<double> log_amp(0.0, spec.blob_amplitude_log_sigma);
  std::vector<Blob> blobs(static_cast<std::size_t>(count(rng)));
  for (auto& b : blobs) {
    b.row = pos(rng);
    b.col = pos(rng);
    b.width = width(rng);
    b.amplitude = std::exp(log_amp(rng));
  }
  return blobs;
}

void render_blobs(std::span<const Blob> blobs, int side, std::vector<double>& out) {
  out.assign(static_cast<std::size_t>(side) * static_cast<std::size_t>(side), 0.0);
  for (const auto& b : blobs) {
    const double inv = 1.0 / (2.0 * b.width * b.width);
    for (int r = 0; r < side; ++r) {
      const double dr = (r + 0.5) - b.row;
      for (int c = 0; c < side; ++c) {
        const double dc = (c + 0.5) - b.col;
        out[static_cast<std::size_t>(r * side + c)] +=
            b.amplitude * std::exp(-(dr * dr + dc * dc) * inv);
      }
    }
  }
}

// Global intensity threshold such that the pooled fraction of sub-threshold
// cells over a pilot set equals the target sparsity.
double calibrate_blob_threshold(const DatasetSpec& spec, int side) {
  constexpr int kPilotSamples = 2000;
  std::vector<double> pooled;
  pooled.reserve(static_cast<std::size_t>(kPilotSamples) * spec.ambient_dim);
  std::vector<double> image;
  for (int i = 0; i < kPilotSamples; ++i) {
    Rng rng = derive_rng(spec.seed, 2, static_cast<std::uint64_t>(i));
    const auto blobs = draw_blobs(spec, side, rng);
    render_blobs(blobs, side, image);
    pooled.insert(pooled.end(), image.begin(), image.end());
  }
  const auto k = static_cast<std::size_t>(spec.target_sparsity * static_cast<double>(pooled.size()));
  std::nth_element(pooled.begin(), pooled.begin() + static_cast<std::ptrdiff_t>(k), pooled.end());
  return pooled[k];
}

std::vector<SparseSample> generate_blob_grid(const DatasetSpec& spec) {
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(spec.ambient_dim))));
  const double threshold = calibrate_blob_threshold(spec, side);
  std::vector<SparseSample> out;
  out.reserve(static_cast<std::size_t>(spec.sample_count));
  std::vector<double> image;
  for (int i = 0; i < spec.sample_count; ++i) {
    Rng rng = derive_rng(spec.seed, 1, static_cast<std::uint64_t>(i));
    const auto blobs = draw_blobs(spec, side, rng);
    render_blobs(blobs, side, image);
    std::vector<int> dims;
    std::vector<double> values;
    for (std::size_t j = 0; j < image.size(); ++j) {
      if (image[j] >= threshold && image[j] > 0.0) {
        dims.push_back(static_cast<int>(j));
        values.push_back(image[j]);
      }
    }
    out.emplace_back(spec.ambient_dim, std::move(dims), std::move(values));
  }
  return out;
}

std::vector<SparseSample> generate_sparse_tabular(const DatasetSpec& spec) {
  const double mean_support = (1.0 - spec.target_sparsity) * spec.ambient_dim;
  std::vector<SparseSample> out;
  out.reserve(static_cast<std::size_t>(spec.sample_count));
  std::vector<int> all(static_cast<std::size_t>(spec.ambient_dim));
  for (int i = 0; i < spec.sample_count; ++i) {
    Rng rng = derive_rng(spec.seed, 1, static_cast<std::uint64_t>(i));
    std::poisson_distribution<int> support(mean_support);
    int l = support(rng);
    while (l > spec.ambient_dim) l = support(rng);
    // Partial Fisher-Yates: first l entries form a uniform subset.
    std::iota(all.begin(), all.end(), 0);
    for (int k = 0; k < l; ++k) {
      std::uniform_int_distribution<int> pick(k, spec.ambient_dim - 1);
      std::swap(all[static_cast<std::size_t>(k)], all[static_cast<std::size_t>(pick(rng))]);
    }
    std::vector<int> dims(all.begin(), all.begin() + l);
    std::sort(dims.begin(), dims.end());
    std::lognormal_distribution<double> value(spec.value_log_mean, spec.value_log_sigma);
    std::vector<double> values(static_cast<std::size_t>(l));
    for (auto& v : values) v = value(rng);
    out.emplace_back(spec.ambient_dim, std::move(dims), std::move(values));
  }
  return out;
}

}  // namespace

std::vector<SparseSample> generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case DatasetKind::blob_grid: return generate_blob_grid(spec);
    case DatasetKind::sparse_tabular: return generate_sparse_tabular(spec);
    case DatasetKind::idx_images: {
      auto images = load_idx_images(spec.idx_path);
      if (spec.sample_count > 0 && static_cast<std::size_t>(spec.sample_count) < images.size()) {
        images.resize(static_cast<std::size_t>(spec.sample_count));
      }
      std::vector<SparseSample> out;
      out.reserve(images.size());
      for (const auto& img : images) out.push_back(nze_extract(img));
      return out;
    }
  }
  throw ConfigError("unsupported dataset kind");
}

// ---------------------------------------------------------------------------

std::vector<DenseSample> parse_idx_images(std::span<const std::uint8_t> bytes) {
  auto read_u32 = [&](std::size_t offset) -> std::uint32_t {
    if (offset + 4 > bytes.size()) throw FormatError("IDX header truncated", bytes.size());
    return (static_cast<std::uint32_t>(bytes[offset]) << 24) |
           (static_cast<std::uint32_t>(bytes[offset + 1]) << 16) |
           (static_cast<std::uint32_t>(bytes[offset + 2]) << 8) |
           static_cast<std::uint32_t>(bytes[offset + 3]);
  };
  const std::uint32_t magic = read_u32(0);
  if (magic != 0x00000803U) {
    std::ostringstream msg;
    msg << "bad IDX image magic 0x" << std::hex << magic << " (expected 0x00000803)";
    throw FormatError(msg.str(), 0);
  }
  const std::uint32_t count = read_u32(4);
  const std::uint32_t rows = read_u32(8);
  const std::uint32_t cols = read_u32(12);
  if (rows == 0 || cols == 0) throw FormatError("IDX image shape has a zero extent", 8);
  const std::uint64_t pixels = static_cast<std::uint64_t>(rows) * cols;
  const std::uint64_t expected = 16 + static_cast<std::uint64_t>(count) * pixels;
  if (bytes.size() < expected) {
    throw FormatError("IDX payload truncated: expected " + std::to_string(expected) +
                          " bytes, found " + std::to_string(bytes.size()),
                      bytes.size());
  }
  if (bytes.size() > expected) {
    throw FormatError("trailing bytes after IDX payload", expected);
  }
  std::vector<DenseSample> out;
  out.reserve(count);
  std::size_t offset = 16;
  for (std::uint32_t n = 0; n < count; ++n) {
    std::vector<double> data(pixels);
    for (std::uint64_t p = 0; p < pixels; ++p) data[p] = bytes[offset++];
    out.emplace_back(std::move(data));
  }
  return out;
}

std::vector<DenseSample> load_idx_images(const std::filesystem::path& path) {
  const std::string raw = read_file(path);
  return parse_idx_images(std::span<const std::uint8_t>(
      reinterpret_cast<const std::uint8_t*>(raw.data()), raw.size()));
}

// ---------------------------------------------------------------------------

std::string to_string(ScalingScheme scheme) {
  switch (scheme) {
    case ScalingScheme::identity: return "identity";
    case ScalingScheme::max_scale: return "max-scale";
    case ScalingScheme::log1p_max_scale: return "log1p-max-scale";
  }
  return "unknown";
}

ScalingScheme parse_scaling_scheme(std::string_view name) {
  if (name == "identity") return ScalingScheme::identity;
  if (name == "max-scale") return ScalingScheme::max_scale;
  if (name == "log1p-max-scale") return ScalingScheme::log1p_max_scale;
  throw ConfigError("unknown scaling scheme '" + std::string(name) +
                    "' (expected identity, max-scale or log1p-max-scale)");
}

namespace {
double signed_log1p(double x) { return std::copysign(std::log1p(std::abs(x)), x); }
double signed_expm1(double y) { return std::copysign(std::expm1(std::abs(y)), y); }
}  // namespace

double ValueScaling::forward(double x) const {
  switch (scheme) {
    case ScalingScheme::identity: return x;
    case ScalingScheme::max_scale: return x / max_value;
    case ScalingScheme::log1p_max_scale: return signed_log1p(x) / max_value;
  }
  return x;
}

double ValueScaling::inverse(double y) const {
  switch (scheme) {
    case ScalingScheme::identity: return y;
    case ScalingScheme::max_scale: return y * max_value;
    case ScalingScheme::log1p_max_scale: return signed_expm1(y * max_value);
  }
  return y;
}

nlohmann::json ValueScaling::to_json() const {
  return {{"scheme", to_string(scheme)}, {"max_value", max_value}};
}

ValueScaling ValueScaling::from_json(const nlohmann::json& j) {
  ValueScaling t;
  t.scheme = parse_scaling_scheme(j.at("scheme").get<std::string>());
  t.max_value = j.at("max_value").get<double>();
  return t;
}

namespace {
template <typename Range>
ValueScaling fit_from_values(const Range& values_of_samples, ScalingScheme scheme) {
  ValueScaling t{scheme, 1.0};
  if (scheme == ScalingScheme::identity) return t;
  double max_abs = 0.0;
  for (const auto& values : values_of_samples) {
    for (double v : values) {
      const double m = scheme == ScalingScheme::log1p_max_scale ? std::log1p(std::abs(v)) : std::abs(v);
      max_abs = std::max(max_abs, m);
    }
  }
  t.max_value = max_abs > 0.0 ? max_abs : 1.0;
  return t;
}
}  // namespace

ValueScaling fit_scaling(std::span<const SparseSample> samples, ScalingScheme scheme) {
  std::vector<std::span<const double>> views;
  views.reserve(samples.size());
  for (const auto& s : samples) views.emplace_back(s.values());
  return fit_from_values(views, scheme);
}

SparseSample apply_scaling(const SparseSample& sample, const ValueScaling& t) {
  std::vector<double> values = sample.values();
  for (auto& v : values) v = t.forward(v);
  return SparseSample(sample.ambient_dim(), sample.dims(), std::move(values));
}

SparseSample invert_scaling(const SparseSample& sample, const ValueScaling& t) {
  std::vector<double> values = sample.values();
  for (auto& v : values) v = t.inverse(v);
  return SparseSample(sample.ambient_dim(), sample.dims(), std::move(values));
}

Scaled<SparseSample> preprocess_scale(std::span<const SparseSample> samples, ScalingScheme scheme) {
  Scaled<SparseSample> out;
  out.transform = fit_scaling(samples, scheme);
  out.samples.reserve(samples.size());
  for (const auto& s : samples) out.samples.push_back(apply_scaling(s, out.transform));
  return out;
}

Scaled<DenseSample> preprocess_scale(std::span<const DenseSample> samples, ScalingScheme scheme) {
  std::vector<std::span<const double>> views;
  views.reserve(samples.size());
  for (const auto& s : samples) views.push_back(s.data());
  Scaled<DenseSample> out;
  out.transform = fit_from_values(views, scheme);
  out.samples.reserve(samples.size());
  for (const auto& s : samples) {
    std::vector<double> data(s.data().begin(), s.data().end());
    for (auto& v : data) v = out.transform.forward(v);
    out.samples.emplace_back(std::move(data));
  }
  return out;
}

// ---------------------------------------------------------------------------

nlohmann::json to_json(const SparseSample& sample) {
  return {{"s", sample.ambient_dim()}, {"d", sample.dims()}, {"v", sample.values()}};
}

SparseSample sparse_sample_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("s") || !j.contains("d") || !j.contains("v")) {
    throw DataError("sparse sample requires keys s, d, v");
  }
  try {
    return SparseSample(j.at("s").get<int>(), j.at("d").get<std::vector<int>>(),
                        j.at("v").get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("sparse sample: ") + e.what());
  }
}

std::string to_jsonl(std::span<const SparseSample> samples) {
  std::string out;
  for (const auto& s : samples) {
    out += to_json(s).dump();
    out += '\n';
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, std::span<const SparseSample> samples) {
  write_file(path, to_jsonl(samples));
}

std::vector<SparseSample> read_jsonl(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  std::vector<SparseSample> out;
  std::size_t offset = 0;
  while (offset < text.size()) {
    std::size_t end = text.find('\n', offset);
    if (end == std::string::npos) end = text.size();
    const std::string_view line(text.data() + offset, end - offset);
    if (!line.empty()) {
      try {
        out.push_back(sparse_sample_from_json(nlohmann::json::parse(line)));
      } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("invalid JSON line: ") + e.what(), offset);
      } catch (const FormatError&) {
        throw;
      } catch (const DataError& e) {
        throw FormatError(e.what(), offset);
      }
    }
    offset = end + 1;
  }
  return out;
}

void write_dense_csv(const std::filesystem::path& path, std::span<const DenseSample> samples) {
  std::string out;
  for (const auto& s : samples) {
    const auto data = s.data();
    for (std::size_t j = 0; j < data.size(); ++j) {
      if (j > 0) out += ',';
      out += format_double(data[j]);
    }
    out += '\n';
  }
  write_file(path, out);
}

std::vector<DenseSample> read_dense_csv(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  std::vector<DenseSample> out;
  std::size_t offset = 0;
  std::size_t width = 0;
  while (offset < text.size()) {
    std::size_t end = text.find('\n', offset);
    if (end == std::string::npos) end = text.size();
    if (end > offset) {
      std::vector<double> row;
      std::size_t pos = offset;
      while (pos <= end) {
        std::size_t comma = text.find(',', pos);
        if (comma == std::string::npos || comma > end) comma = end;
        const std::string cell(text.data() + pos, comma - pos);
        try {
          std::size_t used = 0;
          row.push_back(std::stod(cell, &used));
          if (used != cell.size()) throw std::invalid_argument("trailing characters");
        } catch (const std::exception&) {
          throw FormatError("invalid number '" + cell + "'", pos);
        }
        pos = comma + 1;
      }
      if (width == 0) width = row.size();
      if (row.size() != width) throw FormatError("ragged CSV row", offset);
      out.emplace_back(std::move(row));
    }
    offset = end + 1;
  }
  return out;
}

nlohmann::json dataset_manifest(const DatasetSpec& spec, std::span<const SparseSample> samples) {
  nlohmann::json j = to_json(spec);
  j["materialized_count"] = samples.size();
  j["content_hash"] = content_hash_hex(to_jsonl(samples));
  j["mean_sparsity"] = mean_sparsity(samples);
  return j;
}

double mean_sparsity(std::span<const SparseSample> samples) {
  if (samples.empty()) return 0.0;
  double total = 0.0;
  for (const auto& s : samples) total += s.sparsity();
  return total / static_cast<double>(samples.size());
}

}  // namespace sed
