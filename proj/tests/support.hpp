#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "sed/nn/parameters.hpp"
#include "sed/nn/tape.hpp"
#include "sed/random.hpp"
#include "sed/sparse_data.hpp"

namespace sed::test {

using nn::Matrix;

/// Loss builder used by gradient checks: records a scalar on `tape`.
using LossFn = std::function<nn::Var(nn::Tape& tape)>;

struct GradReport {
  double max_rel_error = 0.0;
  std::string worst;
  std::size_t checked = 0;
};

/// Compares tape gradients against central differences for every parameter
/// entry (or a strided subset when `stride` > 1).
inline GradReport check_gradients(nn::ParameterStore& params, const LossFn& build, double h = 1e-5,
                                  std::size_t stride = 1) {
  params.zero_grad();
  {
    nn::Tape tape = nn::Tape::recording(params);
    tape.backward(build(tape));
  }
  GradReport r;
  std::size_t counter = 0;
  for (auto& p : params) {
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      if (counter++ % stride != 0) continue;
      const double orig = p.value.data()[i];
      auto eval = [&](double x) {
        p.value.data()[i] = x;
        nn::Tape tape = nn::Tape::inference(params);
        return tape.scalar(build(tape));
      };
      const double numeric = (eval(orig + h) - eval(orig - h)) / (2 * h);
      p.value.data()[i] = orig;
      const double analytic = p.grad.size() ? p.grad.data()[i] : 0.0;
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
      const double err = std::abs(analytic - numeric) / denom;
      ++r.checked;
      if (err > r.max_rel_error) {
        r.max_rel_error = err;
        r.worst = p.name + "[" + std::to_string(i) + "] analytic=" + std::to_string(analytic) +
                  " numeric=" + std::to_string(numeric);
      }
    }
  }
  return r;
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

/// Random sparse vector with roughly `density` non-zeros and varied magnitudes.
inline DenseSample random_sparse_dense(int s, double density, Rng& rng) {
  std::bernoulli_distribution keep(density);
  std::normal_distribution<double> value(0.0, 3.0);
  std::vector<double> x(static_cast<std::size_t>(s), 0.0);
  for (auto& v : x) {
    if (keep(rng)) {
      do v = value(rng); while (v == 0.0);
    }
  }
  return DenseSample(std::move(x));
}

inline SparseSample random_sparse(int s, int max_len, Rng& rng) {
  std::uniform_int_distribution<int> len(0, max_len);
  const int l = len(rng);
  std::vector<int> all(static_cast<std::size_t>(s));
  for (int i = 0; i < s; ++i) all[static_cast<std::size_t>(i)] = i;
  std::shuffle(all.begin(), all.end(), rng);
  std::vector<int> dims(all.begin(), all.begin() + l);
  std::sort(dims.begin(), dims.end());
  std::uniform_real_distribution<double> v(0.1, 2.0);
  std::vector<double> values;
  for (int i = 0; i < l; ++i) values.push_back(v(rng));
  return SparseSample(s, dims, values);
}

/// Scratch directory removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("sed_test_" + tag + "_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace sed::test
