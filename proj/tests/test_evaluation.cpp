#include <cmath>

#include "doctest.h"
#include "sed/errors.hpp"
#include "sed/evaluation.hpp"
#include "support.hpp"

using namespace sed;
using namespace sed::eval;

namespace {

double brute_mmd2(const Matrix& x, const Matrix& y, double sigma) {
  auto k = [&](const auto& a, const auto& b) { return std::exp(-(a - b).squaredNorm() / (2 * sigma * sigma)); };
  double xx = 0.0;
  double yy = 0.0;
  double xy = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.rows(); ++j) xx += k(x.row(i), x.row(j));
  for (Eigen::Index i = 0; i < y.rows(); ++i)
    for (Eigen::Index j = 0; j < y.rows(); ++j) yy += k(y.row(i), y.row(j));
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < y.rows(); ++j) xy += k(x.row(i), y.row(j));
  const double n = static_cast<double>(x.rows());
  const double m = static_cast<double>(y.rows());
  return xx / (n * n) + yy / (m * m) - 2 * xy / (n * m);
}

std::vector<double> normal_values(int n, double mean, double sd, Rng& rng) {
  std::normal_distribution<double> d(mean, sd);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (double& x : v) x = d(rng);
  return v;
}

}  // namespace

TEST_CASE("sparsity examples") {
  CHECK(sparsity(DenseSample({0, 0, 0, 1})) == 0.75);
  CHECK(sparsity(DenseSample({1, 2})) == 0.0);
  CHECK(sparsity(DenseSample({0, 0})) == 1.0);
  CHECK(sparsity(SparseSample(4, {3}, {1.0})) == 0.75);
}

TEST_CASE("histogram bins are left-closed with the last bin closed") {
  const std::vector<double> v{0.0, 0.05, 0.5, 0.99, 1.0};
  const Histogram h = histogram_unit_interval(v, 20);
  CHECK(h.edges.size() == 21);
  CHECK(h.counts[0] == 1);
  CHECK(h.counts[1] == 1);
  CHECK(h.counts[10] == 1);
  CHECK(h.counts[19] == 2);
  CHECK(h.n == 5);
  CHECK(h.mean == doctest::Approx(2.54 / 5));
  CHECK_THROWS_AS(histogram_unit_interval(std::vector<double>{1.5}, 20), ContractError);

  const std::vector<DenseSample> dense{DenseSample({0, 0, 0, 1}), DenseSample({0, 0, 0, 0})};
  const Histogram hd = sparsity_histogram(dense, 4);
  CHECK(hd.counts == std::vector<long>{0, 0, 0, 2});
}

TEST_CASE("wasserstein-1 examples and metric properties") {
  CHECK(wasserstein1(std::vector<double>{0}, std::vector<double>{1}) == 1.0);
  CHECK(wasserstein1(std::vector<double>{0, 1}, std::vector<double>{1, 2}) == 1.0);
  CHECK(wasserstein1(std::vector<double>{3, 0}, std::vector<double>{0, 3}) == 0.0);
  CHECK_THROWS_AS(wasserstein1(std::vector<double>{0}, std::vector<double>{1, 2}), ContractError);

  Rng rng = derive_rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const auto a = normal_values(30, 0, 1, rng);
    const auto b = normal_values(30, 0.5, 2, rng);
    const auto c = normal_values(30, -1, 1, rng);
    REQUIRE(wasserstein1(a, a) == 0.0);
    REQUIRE(wasserstein1(a, b) == doctest::Approx(wasserstein1(b, a)));
    REQUIRE(wasserstein1(a, c) <= wasserstein1(a, b) + wasserstein1(b, c) + 1e-12);
    std::vector<double> shifted = a;
    for (double& x : shifted) x += 0.7;
    REQUIRE(wasserstein1(a, shifted) == doctest::Approx(0.7));
  }
}

TEST_CASE("wasserstein-1 report subsamples deterministically and normalizes") {
  Rng rng = derive_rng(2);
  const auto big = normal_values(500, 0, 2, rng);
  const auto small = normal_values(100, 0, 2, rng);
  const W1Report a = wasserstein1_report(big, small, 9);
  const W1Report b = wasserstein1_report(big, small, 9);
  CHECK(a.n == 100);
  CHECK(a.raw == b.raw);
  CHECK(a.normalized == doctest::Approx(a.raw / a.reference_std));
  CHECK(std::isnan(wasserstein1_report(std::vector<double>{1, 1}, std::vector<double>{1, 2}, 0).normalized));
}

TEST_CASE("MMD examples") {
  const double sigma = 0.8;
  const Matrix x = Matrix::Zero(1, 1);
  const Matrix y = Matrix::Constant(1, 1, sigma);
  const MmdReport r = mmd_rbf(x, y);
  CHECK(r.bandwidth == doctest::Approx(sigma));
  CHECK(r.mmd2 == doctest::Approx(2 - 2 * std::exp(-0.5)).epsilon(1e-14));

  Rng rng = derive_rng(3);
  const Matrix a = test::random_matrix(20, 3, rng);
  CHECK(mmd_rbf(a, a).mmd == doctest::Approx(0.0).epsilon(1e-7));

  const MmdReport same = mmd_rbf(Matrix::Ones(3, 2), Matrix::Ones(2, 2));
  CHECK(same.bandwidth_fallback);
  CHECK(same.bandwidth == 1.0);
  CHECK(same.mmd == 0.0);
}

TEST_CASE("property: MMD matches a brute-force oracle") {
  Rng rng = derive_rng(4);
  std::uniform_int_distribution<int> size(1, 12);
  for (int trial = 0; trial < 100; ++trial) {
    const int dim = size(rng);
    const Matrix x = test::random_matrix(size(rng), dim, rng);
    const Matrix y = test::random_matrix(size(rng), dim, rng, 2.0);
    const MmdReport r = mmd_rbf(x, y);
    REQUIRE(std::abs(r.mmd2 - brute_mmd2(x, y, r.bandwidth)) <= 1e-10);
    REQUIRE(r.mmd2 >= -1e-12);
    REQUIRE(std::abs(mmd_rbf(y, x).mmd2 - r.mmd2) <= 1e-12);
  }
}

TEST_CASE("median pairwise distance") {
  Matrix x(2, 1);
  x << 0, 1;
  Matrix y(1, 1);
  y << 3;
  // Pairs: 1, 3, 2.
  CHECK(median_pairwise_distance(x, y) == doctest::Approx(2.0));
  Matrix y2(2, 1);
  y2 << 3, 7;
  // Pairs: 1, 3, 7, 2, 6, 4 -> median of six is (3 + 4) / 2.
  CHECK(median_pairwise_distance(x, y2) == doctest::Approx(3.5));
}

TEST_CASE("spearman examples") {
  CHECK(mid_ranks(std::vector<double>{1, 2, 2, 3}) == std::vector<double>{1, 2.5, 2.5, 4});
  const std::vector<double> a{1, 2, 2, 3};
  const std::vector<double> b{1, 2, 3, 3};
  CHECK(spearman(a, b).rho == doctest::Approx(3.75 / 4.5).epsilon(1e-14));
  const std::vector<double> up{1, 5, 9, 20};
  const std::vector<double> down{4, 3, 2, 1};
  CHECK(spearman(up, up).rho == 1.0);
  CHECK(spearman(up, down).rho == -1.0);
  const auto flat = spearman(up, std::vector<double>{2, 2, 2, 2});
  CHECK(flat.undefined);
  CHECK(std::isnan(flat.rho));
}

TEST_CASE("property: spearman is invariant under monotone maps and bounded") {
  Rng rng = derive_rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    auto x = normal_values(25, 0, 1, rng);
    auto y = normal_values(25, 0, 1, rng);
    for (std::size_t i = 0; i < 25; i += 5) y[i] = x[i];
    const double rho = spearman(x, y).rho;
    REQUIRE(rho >= -1.0);
    REQUIRE(rho <= 1.0);
    std::vector<double> mapped = x;
    for (double& v : mapped) v = std::exp(3 * v) + 2;
    REQUIRE(spearman(mapped, y).rho == doctest::Approx(rho).epsilon(1e-12));
    REQUIRE(spearman(y, x).rho == doctest::Approx(rho).epsilon(1e-12));
  }
}

TEST_CASE("per-dimension means and value sums") {
  const std::vector<SparseSample> s{SparseSample(3, {0, 2}, {2.0, 4.0}), SparseSample(3, {2}, {2.0})};
  CHECK(per_dimension_means(s) == std::vector<double>{1.0, 0.0, 3.0});
  CHECK(value_sums(s) == std::vector<double>{6.0, 2.0});
}

TEST_CASE("rate-distortion with a perfect predictor") {
  const auto schedule = diffusion::NoiseSchedule::cosine(20);
  Matrix x0(3, 4);
  x0 << 0, 1, 0, 2, 0, 0, 0, -1, 3, 0, 0, 0;
  RdOptions opt;
  opt.mc_samples = 2;
  opt.grid = {0, 5, 20};
  Matrix rep(6, 4);
  rep << x0, x0;
  const diffusion::X0Predictor perfect = [&](const Matrix&, std::span<const int>, const Matrix*) { return rep; };
  for (const auto& p : rate_distortion(perfect, schedule, x0, opt)) {
    CHECK(p.rate_zero == 0.0);
    CHECK(p.rate_nonzero == 0.0);
    CHECK(p.distortion_zero == 0.0);
    CHECK(p.distortion_nonzero == 0.0);
  }
}

TEST_CASE("rate-distortion: rate(T) = 0, rate non-increasing, grid validated") {
  const auto schedule = diffusion::NoiseSchedule::cosine(30);
  Rng rng = derive_rng(6);
  Matrix x0 = test::random_matrix(8, 5, rng);
  for (Eigen::Index i = 0; i < x0.size(); i += 2) x0.data()[i] = 0.0;
  const diffusion::X0Predictor shrink = [](const Matrix& x_t, std::span<const int>, const Matrix*) {
    return Matrix(0.5 * x_t);
  };
  RdOptions opt;
  opt.mc_samples = 3;
  opt.grid = default_rd_grid(30, 7);
  CHECK(opt.grid.front() == 0);
  CHECK(opt.grid.back() == 30);
  const auto points = rate_distortion(shrink, schedule, x0, opt);
  CHECK(points.back().rate_zero == 0.0);
  CHECK(points.back().rate_nonzero == 0.0);
  for (std::size_t i = 1; i < points.size(); ++i) {
    CHECK(points[i].rate_zero <= points[i - 1].rate_zero);
    CHECK(points[i].rate_nonzero <= points[i - 1].rate_nonzero);
  }
  CHECK(points.front().rate_zero > 0.0);

  // Long schedules clip the last few gammas to the same value; rates must stay finite.
  const auto long_schedule = diffusion::NoiseSchedule::cosine(1000);
  CHECK(long_schedule.gamma[999] == long_schedule.gamma[1000]);
  opt.grid = {0, 998, 999};
  for (const auto& p : rate_distortion(shrink, long_schedule, x0, opt)) {
    CHECK(std::isfinite(p.rate_zero));
    CHECK(std::isfinite(p.rate_nonzero));
  }

  opt.grid = {0, 31};
  CHECK_THROWS_AS(rate_distortion(shrink, schedule, x0, opt), ConfigError);
  opt.grid = {-1};
  CHECK_THROWS_AS(rate_distortion(shrink, schedule, x0, opt), ConfigError);
}

TEST_CASE("ordering validity") {
  CHECK(is_valid_ordering(std::vector<int>{1, 4, 9}));
  CHECK(is_valid_ordering(std::vector<int>{}));
  CHECK_FALSE(is_valid_ordering(std::vector<int>{4, 4}));
  CHECK_FALSE(is_valid_ordering(std::vector<int>{5, 2}));
  const std::vector<std::vector<int>> fixtures{{0, 1}, {3, 2}, {}, {2, 2, 3}};
  CHECK(ordering_validity_rate(fixtures) == 0.5);
}

TEST_CASE("FLOPs model examples") {
  CHECK(linear_flops(100, 200) == 40000.0);

  savae::SavaeConfig sv;
  sv.ambient_dim = 1000;
  diffusion::BackboneConfig latent;
  latent.data_dim = sv.latent_dim;
  latent.widths = {64, 32};
  const auto a = flops_sed(sv, latent, 1000, 20);
  const auto b = flops_sed(sv, latent, 2000, 20);
  // Only the output head depends on s.
  CHECK(b.forward - a.forward ==
        doctest::Approx(b.line("decoder.output_head") - a.line("decoder.output_head")));
  CHECK(a.backward == 2 * a.forward);
  CHECK(b.line("decoder.output_head") - a.line("decoder.output_head") == doctest::Approx(21.0 * 2 * sv.d_model * 1000));

  baselines::DenseDmConfig dense;
  dense.widths = {256, 128};
  const auto d1 = flops_dense_ddpm(dense, 1000);
  const auto d2 = flops_dense_ddpm(dense, 2000);
  CHECK(d2.line("input_layer") == 2 * d1.line("input_layer"));
  CHECK(d2.line("output_layer") == 2 * d1.line("output_layer"));
  CHECK(d2.line("internal") == d1.line("internal"));
  CHECK(d2.forward > d1.forward);
}

TEST_CASE("report serialization") {
  MetricReport r;
  r.family = "distance";
  r.seed = 4;
  r.config_hash = "abc";
  r.add("w1", 0.25, 10);
  r.add("spearman", std::nan(""), 3);
  CHECK(to_csv(r) == "metric,value,n,seed,config_hash\nw1,0.25,10,4,abc\nspearman,nan,3,4,abc\n");
  const auto j = to_json(r);
  CHECK(j["metrics"][1]["value"].is_null());
  CHECK_FALSE(j.contains("timestamp"));
  CHECK(to_json(r, "2026-01-01T00:00:00Z")["timestamp"] == "2026-01-01T00:00:00Z");
  CHECK(r.value("w1") == 0.25);
  CHECK_THROWS_AS(r.value("fid"), ContractError);

  const std::vector<LongRow> rows{{"0", "rate_zero", 1.5}};
  CHECK(to_long_csv("t", rows) == "t,series,value\n0,rate_zero,1.5\n");
}
