#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <memory>
#include <vector>

#include "doctest.h"
#include "frame/errors.hpp"
#include "frame/filter_bank.hpp"
#include "frame/image.hpp"
#include "frame/model.hpp"
#include "frame/numeric.hpp"
#include "frame/oracle.hpp"
#include "frame/rng.hpp"

using namespace frame;

namespace {

std::shared_ptr<const FilterBank> identity_bank() {
  auto bank = std::make_shared<FilterBank>();
  bank->input_channels = 1;
  ConvLayer l;
  l.in_channels = l.out_channels = 1;
  l.kh = l.kw = 1;
  l.kernels = {1.0};
  l.bias = {0.0};
  bank->layers.push_back(l);
  return bank;
}

std::shared_ptr<const FilterBank> random_linear_bank(std::uint64_t seed) {
  // 2 filters, 2x2 valid, identity activation: linear and kink-free.
  auto bank = std::make_shared<FilterBank>();
  bank->input_channels = 1;
  ConvLayer l;
  l.in_channels = 1;
  l.out_channels = 2;
  l.kh = l.kw = 2;
  l.padding = Padding::valid;
  l.activation = Activation::identity;
  PhiloxStream rng(seed, 0);
  l.kernels.resize(l.kernel_count());
  for (double& v : l.kernels) v = rng.normal();
  l.bias.assign(2, 0.0);
  bank->layers.push_back(std::move(l));
  return bank;
}

OracleSpec binary_spec(int h, int w) {
  OracleSpec spec;
  spec.height = h;
  spec.width = w;
  spec.levels = {0.0, 1.0};
  return spec;
}

// Solves the small SPD system M x = b in place (Gaussian elimination).
std::vector<double> solve(std::vector<std::vector<double>> m,
                          std::vector<double> b) {
  const int n = static_cast<int>(b.size());
  for (int i = 0; i < n; ++i) {
    int piv = i;
    for (int r = i + 1; r < n; ++r)
      if (std::fabs(m[r][i]) > std::fabs(m[piv][i])) piv = r;
    std::swap(m[i], m[piv]);
    std::swap(b[i], b[piv]);
    for (int r = i + 1; r < n; ++r) {
      const double f = m[r][i] / m[i][i];
      for (int c = i; c < n; ++c) m[r][c] -= f * m[i][c];
      b[r] -= f * b[i];
    }
  }
  std::vector<double> x(n);
  for (int i = n - 1; i >= 0; --i) {
    double acc = b[i];
    for (int c = i + 1; c < n; ++c) acc -= m[i][c] * x[c];
    x[i] = acc / m[i][i];
  }
  return x;
}

}  // namespace

TEST_CASE("spec validation and state enumeration") {
  OracleSpec spec = binary_spec(2, 2);
  spec.validate();
  CHECK(spec.state_count() == 16);

  CHECK(spec.state_image(0).data == std::vector<double>{0, 0, 0, 0});
  CHECK(spec.state_image(1).data == std::vector<double>{0, 0, 0, 1});
  CHECK(spec.state_image(5).data == std::vector<double>{0, 1, 0, 1});
  CHECK(spec.state_image(15).data == std::vector<double>{1, 1, 1, 1});

  OracleSpec too_big = binary_spec(4, 5);
  CHECK_THROWS_AS(too_big.validate(), InvalidArgument);
  OracleSpec too_many = binary_spec(2, 2);
  too_many.levels = {0, 1, 2, 3};
  CHECK_THROWS_AS(too_many.validate(), InvalidArgument);
  OracleSpec over_cap = binary_spec(4, 4);
  over_cap.levels = {0, 0.5, 1};  // 3^16 states exceeds the cap
  CHECK_THROWS_AS(over_cap.validate(), InvalidArgument);
  OracleSpec bad_sigma = binary_spec(2, 2);
  bad_sigma.sigma_sq = 0.0;
  CHECK_THROWS_AS(bad_sigma.validate(), InvalidArgument);
}

TEST_CASE("partition closed forms for independent pixels") {
  const OracleSpec spec = binary_spec(2, 2);
  auto bank = identity_bank();

  // w = 0: Z = sum q = 1 under either reference.
  NonStationaryFrame flat(bank, 2, 2, 1.0);
  CHECK(exact_partition(spec, flat) == doctest::Approx(0.0).epsilon(1e-13));
  OracleSpec gauss = spec;
  gauss.reference = OracleReference::gaussian_restricted;
  gauss.sigma_sq = 0.8;
  CHECK(exact_partition(gauss, flat) == doctest::Approx(0.0).epsilon(1e-13));

  // Constant w: pixels are independent, log Z = H*W * log((1 + e^w)/2).
  const double w = 0.7;
  FeatureStack ws = output_geometry(*bank, 2, 2);
  ws.data.assign(ws.size(), w);
  NonStationaryFrame model(bank, 2, 2, 1.0, ws);
  const double want = 4.0 * std::log((1.0 + std::exp(w)) / 2.0);
  CHECK(exact_partition(spec, model) == doctest::Approx(want).epsilon(1e-12));

  // The stationary model with the same per-filter weight scores identically.
  StationaryFrame st(bank, 2, 2, 1.0, {w});
  CHECK(exact_partition(spec, st) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("partition, distribution, expectation vs a second enumeration") {
  OracleSpec spec = binary_spec(3, 3);
  spec.reference = OracleReference::gaussian_restricted;
  spec.sigma_sq = 1.4;
  auto bank = random_linear_bank(3);

  PhiloxStream rng(4, 1);
  FeatureStack ws = output_geometry(*bank, 3, 3);
  for (double& v : ws.data) v = 0.4 * rng.normal();
  NonStationaryFrame model(bank, 3, 3, spec.sigma_sq, ws);

  // Direct brute force over all states without the enumeration cache.
  const std::uint64_t n = spec.state_count();
  std::vector<double> log_q(n), scores(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    const Image img = spec.state_image(i);
    log_q[i] = -image_norm_sq(img) / (2.0 * spec.sigma_sq);
    scores[i] = log_score(model, img);
  }
  const double log_zq = log_sum_exp(log_q);
  std::vector<double> lw(n);
  for (std::uint64_t i = 0; i < n; ++i)
    lw[i] = scores[i] + log_q[i] - log_zq;
  const double log_z = log_sum_exp(lw);
  CHECK(exact_partition(spec, model) ==
        doctest::Approx(log_z).epsilon(1e-12));

  const auto probs = exact_distribution(spec, model);
  REQUIRE(probs.size() == n);
  double total = 0.0;
  for (std::uint64_t i = 0; i < n; ++i) {
    CHECK(probs[i] == doctest::Approx(std::exp(lw[i] - log_z)).epsilon(1e-10));
    total += probs[i];
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

  const auto expect = exact_expectation(spec, model);
  std::vector<double> manual(expect.size(), 0.0);
  for (std::uint64_t i = 0; i < n; ++i) {
    const FeatureStack stack = forward(*bank, spec.state_image(i));
    for (std::size_t s = 0; s < manual.size(); ++s)
      manual[s] += probs[i] * stack.data[s];
  }
  for (std::size_t s = 0; s < manual.size(); ++s)
    CHECK(expect[s] == doctest::Approx(manual[s]).epsilon(1e-10));
}

TEST_CASE("categorical sampling") {
  PhiloxStream rng(5, 0);
  const std::vector<double> probs = {0.2, 0.5, 0.3};
  std::vector<int> counts(3, 0);
  const int n = 20000;
  for (int i = 0; i < n; ++i) ++counts[sample_categorical(probs, rng)];
  for (int k = 0; k < 3; ++k) {
    const double freq = counts[k] / static_cast<double>(n);
    const double se = std::sqrt(probs[k] * (1.0 - probs[k]) / n);
    CHECK(std::fabs(freq - probs[k]) < 3.0 * se);
  }

  PhiloxStream a(6, 0), b(6, 0);
  for (int i = 0; i < 100; ++i)
    CHECK(sample_categorical(probs, a) == sample_categorical(probs, b));

  PhiloxStream c(7, 0);
  CHECK(sample_categorical({1.0}, c) == 0);
}

TEST_CASE("exact_fit inverts the logistic map on a single pixel") {
  auto bank = identity_bank();

  SUBCASE("binary levels") {
    const OracleSpec spec = binary_spec(1, 1);
    std::vector<Image> observed = {Image(1, 1, 1, 1.0), Image(1, 1, 1, 1.0),
                                   Image(1, 1, 1, 0.0)};  // target 2/3
    const ExactFitResult fit = exact_fit(spec, bank, observed);
    CHECK(fit.converged);
    CHECK_FALSE(fit.infeasible);
    CHECK(fit.gap <= 1e-8);
    CHECK(fit.model.weights().data[0] ==
          doctest::Approx(std::log(2.0)).epsilon(1e-6));
  }
  SUBCASE("general levels") {
    // E_w = (s0 e^{w s0} + s1 e^{w s1}) / (e^{w s0} + e^{w s1}) = t
    // inverts to w = log((t - s0)/(s1 - t)) / (s1 - s0).
    OracleSpec spec = binary_spec(1, 1);
    spec.levels = {0.2, 0.8};
    const double t = 0.6;
    const ExactFitResult fit =
        exact_fit(spec, bank, {Image(1, 1, 1, t)});
    CHECK(fit.converged);
    const double want = std::log((t - 0.2) / (0.8 - t)) / 0.6;
    CHECK(fit.model.weights().data[0] == doctest::Approx(want).epsilon(1e-6));
  }
  SUBCASE("stationary variant recovers the per-position weight") {
    const OracleSpec spec = binary_spec(2, 2);
    // Constant target 2/3 at each pixel; the score w * area * pooled mean
    // decouples into independent pixels each weighted by w, so the fitted
    // shared weight solves the same single-pixel logistic problem.
    Image obs(2, 2, 1, 2.0 / 3.0);
    const StationaryExactFitResult fit =
        exact_fit_stationary(spec, bank, {obs});
    CHECK(fit.converged);
    CHECK(fit.gap <= 1e-8);
    CHECK(fit.model.weights()[0] ==
          doctest::Approx(std::log(2.0)).epsilon(1e-6));
  }
}

TEST_CASE("exact_fit matches moments on a 3x3 grid") {
  const OracleSpec spec = binary_spec(3, 3);
  auto bank = random_linear_bank(8);

  std::vector<Image> observed;
  PhiloxStream rng(9, 0);
  for (int i = 0; i < 8; ++i)
    observed.push_back(
        spec.state_image(rng.next_u32() % spec.state_count()));

  const ExactFitResult fit = exact_fit(spec, bank, observed);
  CHECK(fit.converged);
  CHECK(fit.gap <= 1e-8);

  // Mean observed statistics, recomputed here.
  const FeatureStack geom = output_geometry(*bank, 3, 3);
  std::vector<double> h_obs(geom.size(), 0.0);
  for (const Image& img : observed) {
    const FeatureStack s = forward(*bank, img);
    for (std::size_t i = 0; i < h_obs.size(); ++i) h_obs[i] += s.data[i];
  }
  for (double& v : h_obs) v /= static_cast<double>(observed.size());

  const auto e = exact_expectation(spec, fit.model);
  for (std::size_t i = 0; i < h_obs.size(); ++i)
    CHECK(e[i] == doctest::Approx(h_obs[i]).epsilon(1e-6).scale(1.0));
}

TEST_CASE("exact_fit flags infeasible targets") {
  const OracleSpec spec = binary_spec(2, 2);
  auto bank = identity_bank();
  // Mean pixel value 2 can never be matched by pixels in {0, 1}.
  const ExactFitResult fit = exact_fit(spec, bank, {Image(2, 2, 1, 2.0)});
  CHECK(fit.infeasible);
  CHECK_FALSE(fit.converged);
}

TEST_CASE("exact_kl basic properties") {
  const std::vector<double> p = {0.5, 0.25, 0.25, 0.0};
  const std::vector<double> q = {0.25, 0.25, 0.25, 0.25};
  CHECK(exact_kl(p, p) == 0.0);
  CHECK(exact_kl(q, q) == 0.0);
  CHECK(exact_kl(p, q) > 0.0);
  CHECK(std::isinf(exact_kl(q, p)));  // q puts mass where p has none
  CHECK_THROWS_AS(exact_kl(p, {0.5, 0.5}), GeometryError);
}

TEST_CASE("the fitted model is the KL projection onto the moment set") {
  const OracleSpec spec = binary_spec(2, 2);
  auto bank = identity_bank();

  PhiloxStream obs_rng(10, 0);
  std::vector<Image> observed;
  for (int i = 0; i < 6; ++i)
    observed.push_back(spec.state_image(obs_rng.next_u32() % 16));
  const ExactFitResult fit = exact_fit(spec, bank, observed);
  REQUIRE(fit.converged);

  const auto p_hat = exact_distribution(spec, fit.model);
  NonStationaryFrame reference(bank, 2, 2, 1.0);  // w = 0 is q itself
  const auto q = exact_distribution(spec, reference);
  const double kl_hat = exact_kl(p_hat, q);

  // Build feasible competitors p = p_hat + delta * z where z is orthogonal
  // to the all-ones vector and every statistic, so normalization and all
  // moments are preserved.
  const std::uint64_t n = spec.state_count();
  const auto cache =
      enumerate_stats(spec, *bank, OracleModelKind::nonstationary);
  const std::size_t n_cols = cache.n_stats + 1;
  std::vector<std::vector<double>> a(n_cols, std::vector<double>(n, 1.0));
  for (std::size_t s = 0; s < cache.n_stats; ++s)
    for (std::uint64_t i = 0; i < n; ++i)
      a[s + 1][i] = cache.stats[i * cache.n_stats + s];

  PhiloxStream rng(11, 0);
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> r(n);
    for (double& v : r) v = rng.normal();
    // Project out the constraint span: z = r - A (A^T A)^{-1} A^T r.
    std::vector<std::vector<double>> m(n_cols, std::vector<double>(n_cols));
    std::vector<double> b(n_cols, 0.0);
    for (std::size_t i = 0; i < n_cols; ++i) {
      for (std::size_t j = 0; j < n_cols; ++j)
        for (std::uint64_t k = 0; k < n; ++k) m[i][j] += a[i][k] * a[j][k];
      for (std::uint64_t k = 0; k < n; ++k) b[i] += a[i][k] * r[k];
    }
    const std::vector<double> c = solve(m, b);
    std::vector<double> z = r;
    for (std::size_t i = 0; i < n_cols; ++i)
      for (std::uint64_t k = 0; k < n; ++k) z[k] -= c[i] * a[i][k];

    double max_ratio = 0.0;
    for (std::uint64_t k = 0; k < n; ++k)
      if (z[k] < 0.0) max_ratio = std::max(max_ratio, -z[k] / p_hat[k]);
    if (max_ratio == 0.0) continue;
    const double delta = 0.5 / max_ratio;

    std::vector<double> p = p_hat;
    double norm = 0.0;
    for (std::uint64_t k = 0; k < n; ++k) {
      p[k] += delta * z[k];
      REQUIRE(p[k] >= 0.0);
      norm += p[k];
    }
    CHECK(norm == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(exact_kl(p, q) >= kl_hat - 1e-10);
    ++checked;
  }
  CHECK(checked == 100);
}
