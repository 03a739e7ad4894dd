#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <vector>

#include "doctest.h"
#include "frame/checkpoint.hpp"
#include "frame/errors.hpp"
#include "frame/filter_bank.hpp"
#include "frame/generative.hpp"
#include "frame/image.hpp"
#include "frame/model.hpp"
#include "frame/rng.hpp"

using namespace frame;
namespace fs = std::filesystem;

namespace {

Image random_image(int h, int w, int c, std::uint64_t seed) {
  PhiloxStream rng(seed, 1);
  Image img(h, w, c);
  for (double& v : img.data) v = rng.normal();
  return img;
}

std::shared_ptr<const FilterBank> shared_bank(FilterBank bank) {
  return std::make_shared<const FilterBank>(std::move(bank));
}

NonStationaryFrame random_nonstationary(
    std::shared_ptr<const FilterBank> bank, int h, int w, double sigma_sq,
    std::uint64_t seed) {
  PhiloxStream rng(seed, 2);
  FeatureStack w_stack = output_geometry(*bank, h, w);
  for (double& v : w_stack.data) v = 0.3 * rng.normal();
  return NonStationaryFrame(bank, h, w, sigma_sq, std::move(w_stack));
}

StationaryFrame random_stationary(std::shared_ptr<const FilterBank> bank,
                                  int h, int w, double sigma_sq,
                                  std::uint64_t seed) {
  PhiloxStream rng(seed, 3);
  std::vector<double> weights(bank->top_channels());
  for (double& v : weights) v = 0.3 * rng.normal();
  return StationaryFrame(bank, h, w, sigma_sq, std::move(weights));
}

std::string tmp_path(const std::string& name) {
  return (fs::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("energy trivia: zero weights") {
  auto bank = shared_bank(make_random_bank(1, 3, 3, 9));
  NonStationaryFrame model(bank, 8, 8, 1.0);

  const Image zero(8, 8, 1, 0.0);
  CHECK(energy(model, zero).energy == 0.0);

  Image img(8, 8, 1, 0.0);
  img.at(0, 0, 0) = 1.0;
  img.at(3, 4, 0) = -1.0;  // ||I||^2 = 2
  const EnergyReport r = energy(model, img);
  CHECK(r.energy == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(r.feature_term == 0.0);
}

TEST_CASE("energy equals independent recomputation, both kinds") {
  auto bank = shared_bank(make_random_bank(1, 4, 3, 10, Activation::abs,
                                           Padding::circular));
  const Image img = random_image(9, 7, 1, 11);
  const double sigma_sq = 2.5;

  double norm = 0.0;
  for (double v : img.data) norm += v * v;
  const FeatureStack stack = forward(*bank, img);

  SUBCASE("nonstationary") {
    const auto model = random_nonstationary(bank, 9, 7, sigma_sq, 12);
    double feat = 0.0;
    for (std::size_t i = 0; i < stack.size(); ++i)
      feat += model.weights().data[i] * stack.data[i];
    const EnergyReport r = energy(model, img);
    CHECK(r.feature_term == doctest::Approx(feat).epsilon(1e-12));
    CHECK(r.gaussian_term ==
          doctest::Approx(norm / (2.0 * sigma_sq)).epsilon(1e-12));
    CHECK(r.energy == r.gaussian_term - r.feature_term);  // exact identity
    CHECK(log_score(model, img) == doctest::Approx(feat).epsilon(1e-12));
  }
  SUBCASE("stationary") {
    const auto model = random_stationary(bank, 9, 7, sigma_sq, 13);
    double feat = 0.0;
    for (int k = 0; k < stack.maps; ++k) {
      double pooled = 0.0;
      for (int y = 0; y < stack.height; ++y)
        for (int x = 0; x < stack.width; ++x) pooled += stack.at(k, y, x);
      feat += model.weights()[k] * pooled;
    }
    const EnergyReport r = energy(model, img);
    CHECK(r.feature_term == doctest::Approx(feat).epsilon(1e-12));
    CHECK(r.energy == r.gaussian_term - r.feature_term);
  }
}

TEST_CASE("log_score ignores sigma_sq") {
  auto bank = shared_bank(make_random_bank(1, 3, 3, 14));
  const Image img = random_image(8, 8, 1, 15);
  const auto a = random_nonstationary(bank, 8, 8, 1.0, 16);
  NonStationaryFrame b(bank, 8, 8, 100.0, a.weights());
  CHECK(log_score(a, img) == log_score(b, img));
}

TEST_CASE("pooled_stats: constant maps and naive resummation") {
  FilterBank raw;  // single 1x1 identity filter
  raw.input_channels = 1;
  ConvLayer l;
  l.in_channels = l.out_channels = 1;
  l.kh = l.kw = 1;
  l.kernels = {1.0};
  l.bias = {0.0};
  raw.layers.push_back(l);
  auto bank = shared_bank(std::move(raw));

  StationaryFrame model(bank, 6, 6, 1.0);
  const Image constant(6, 6, 1, 0.37);
  const auto stats = pooled_stats(model, constant);
  REQUIRE(stats.size() == 1);
  CHECK(stats[0] == doctest::Approx(0.37).epsilon(1e-15));

  auto gabor = shared_bank(make_gabor_bank({1.0}, 3));
  StationaryFrame gm(gabor, 10, 9, 1.0);
  const Image img = random_image(10, 9, 1, 17);
  const auto got = pooled_stats(gm, img);
  const FeatureStack stack = forward(*gabor, img);
  for (int k = 0; k < stack.maps; ++k) {
    double sum = 0.0;
    for (int y = 0; y < stack.height; ++y)
      for (int x = 0; x < stack.width; ++x) sum += stack.at(k, y, x);
    CHECK(got[k] ==
          doctest::Approx(sum / (stack.height * stack.width)).epsilon(1e-12));
  }
}

TEST_CASE("stationary energy and pooled stats are bitwise shift invariant") {
  auto bank = shared_bank(make_random_bank(1, 4, 3, 18, Activation::abs,
                                           Padding::circular));
  const auto model = random_stationary(bank, 12, 10, 1.3, 19);
  const Image img = random_image(12, 10, 1, 20);
  const EnergyReport base = energy(model, img);
  const auto base_stats = pooled_stats(model, img);
  for (auto [dy, dx] : {std::pair{1, 0}, {0, 1}, {5, 3}, {-2, 9}}) {
    const Image shifted = circular_shift(img, dy, dx);
    const EnergyReport r = energy(model, shifted);
    CHECK(r.energy == base.energy);
    CHECK(r.feature_term == base.feature_term);
    CHECK(r.gaussian_term == base.gaussian_term);
    CHECK(pooled_stats(model, shifted) == base_stats);
  }
}

TEST_CASE("grad_energy_image: closed forms") {
  auto bank = shared_bank(make_random_bank(1, 3, 3, 21, Activation::relu));
  const double sigma_sq = 0.7;
  NonStationaryFrame zero_w(bank, 8, 8, sigma_sq);
  const Image img = random_image(8, 8, 1, 22);
  const Image g = grad_energy_image(zero_w, img);
  for (std::size_t i = 0; i < img.size(); ++i)
    CHECK(g.data[i] == doctest::Approx(img.data[i] / sigma_sq).epsilon(1e-15));

  // Zero image through a zero-bias relu bank: every unit sits exactly at the
  // kink and the h'(0) = 0 convention kills the feature gradient.
  const auto model = random_nonstationary(bank, 8, 8, 1.0, 23);
  const Image zero(8, 8, 1, 0.0);
  const Image gz = grad_energy_image(model, zero);
  for (double v : gz.data) CHECK(v == 0.0);
}

TEST_CASE("grad_energy_image matches finite differences") {
  const double h = 1e-5;
  int tested = 0;
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    auto bank = shared_bank(make_random_bank(
        1, 3, 3, 24 + seed, seed % 2 ? Activation::abs : Activation::relu,
        seed % 3 ? Padding::zero : Padding::circular));
    const Image img = random_image(7, 7, 1, 50 + seed);
    PhiloxStream rng(80 + seed, 4);
    Image dir(7, 7, 1);
    for (double& v : dir.data) v = rng.normal();

    const auto eval = [&](const EnergyModel& m, double t) {
      Image p = img;
      for (std::size_t i = 0; i < p.size(); ++i) p.data[i] += t * dir.data[i];
      return m.energy(p).energy;
    };

    for (int kind = 0; kind < 2; ++kind) {
      std::unique_ptr<EnergyModel> m;
      if (kind == 0)
        m = std::make_unique<NonStationaryFrame>(
            random_nonstationary(bank, 7, 7, 1.4, 60 + seed));
      else
        m = std::make_unique<StationaryFrame>(
            random_stationary(bank, 7, 7, 1.4, 70 + seed));
      const double f0 = eval(*m, 0.0);
      const double fp = eval(*m, h);
      const double fm = eval(*m, -h);
      // Subtract the known quadratic part; what remains is piecewise linear,
      // so curvature in the probe marks a crossed kink.
      double dir_dot_img = 0.0, dir_norm = 0.0;
      for (std::size_t i = 0; i < img.size(); ++i) {
        dir_dot_img += dir.data[i] * img.data[i];
        dir_norm += dir.data[i] * dir.data[i];
      }
      const double quad = h * h * dir_norm / (2.0 * 1.4);
      if (std::fabs(fp + fm - 2.0 * f0 - 2.0 * quad) >
          1e-9 * (1.0 + std::fabs(f0)))
        continue;
      const double fd = (fp - fm) / (2.0 * h);
      const Image grad = m->grad_image(img);
      double analytic = 0.0;
      for (std::size_t i = 0; i < img.size(); ++i)
        analytic += grad.data[i] * dir.data[i];
      CHECK(analytic ==
            doctest::Approx(fd).epsilon(1e-4).scale(1.0 + std::fabs(fd)));
      ++tested;
    }
  }
  CHECK(tested >= 12);
}

TEST_CASE("energy diverges quadratically for scaled images") {
  auto bank = shared_bank(make_random_bank(1, 4, 3, 31, Activation::relu));
  const auto model = random_nonstationary(bank, 8, 8, 1.0, 32);
  const Image img = random_image(8, 8, 1, 33);
  double prev = energy(model, img).energy;
  for (double t : {10.0, 100.0, 1000.0}) {
    Image scaled = img;
    for (double& v : scaled.data) v *= t;
    const double e = energy(model, scaled).energy;
    CHECK(e > prev);
    CHECK(e > t);  // quadratic Gaussian term dominates the linear feature term
    prev = e;
  }
}

TEST_CASE("constructor and geometry validation") {
  auto bank = shared_bank(make_random_bank(1, 3, 3, 34));
  CHECK_THROWS_AS(NonStationaryFrame(bank, 8, 8, 0.0), InvalidArgument);
  CHECK_THROWS_AS(NonStationaryFrame(bank, 8, 8, -1.0), InvalidArgument);
  CHECK_THROWS_AS(StationaryFrame(bank, 8, 8, 1.0,
                                  std::vector<double>(7, 0.0)),
                  GeometryError);
  FeatureStack wrong(3, 2, 2);
  CHECK_THROWS_AS(NonStationaryFrame(bank, 8, 8, 1.0, wrong), GeometryError);

  NonStationaryFrame model(bank, 8, 8, 1.0);
  const Image bad = random_image(5, 5, 1, 35);
  CHECK_THROWS_AS(energy(model, bad), GeometryError);
  CHECK_THROWS_AS(grad_energy_image(model, bad), GeometryError);
}

TEST_CASE("FRM1 round trips for all three kinds") {
  auto bank = shared_bank(make_random_bank(1, 3, 3, 36, Activation::relu));

  SUBCASE("nonstationary") {
    const auto model = random_nonstationary(bank, 8, 7, 1.7, 37);
    const std::string path = tmp_path("frame_model_ns.frm");
    save_checkpoint(model, path);
    const LoadedCheckpoint ck = load_checkpoint(path);
    REQUIRE(ck.kind == 0);
    REQUIRE(ck.nonstationary.has_value());
    CHECK(ck.sigma_sq == 1.7);
    CHECK(ck.nonstationary->weights().data == model.weights().data);
    // Same bytes when re-serialized, and identical behavior.
    CHECK(serialize_checkpoint(*ck.nonstationary) ==
          serialize_checkpoint(model));
    const Image img = random_image(8, 7, 1, 38);
    CHECK(energy(*ck.nonstationary, img).energy ==
          doctest::Approx(energy(model, img).energy).epsilon(1e-5));
    fs::remove(path);
  }
  SUBCASE("stationary") {
    const auto model = random_stationary(bank, 6, 6, 0.9, 39);
    const std::string path = tmp_path("frame_model_st.frm");
    save_checkpoint(model, path);
    const LoadedCheckpoint ck = load_checkpoint(path);
    REQUIRE(ck.kind == 1);
    REQUIRE(ck.stationary.has_value());
    CHECK(ck.stationary->weights() == model.weights());
    CHECK(serialize_checkpoint(*ck.stationary) == serialize_checkpoint(model));
    fs::remove(path);
  }
  SUBCASE("generative layer") {
    GenerativeLayer layer;
    layer.base = bank;
    layer.n_experts = 2;
    layer.kh = layer.kw = 3;
    PhiloxStream rng(40, 0);
    layer.weights.resize(std::size_t(2) * bank->top_channels() * 9);
    for (double& v : layer.weights) v = rng.normal();
    layer.bias = {0.25, -0.5};
    layer.sigma_sq = 1.1;
    const std::string path = tmp_path("frame_model_gen.frm");
    save_checkpoint(layer, 10, 10, path);
    const LoadedCheckpoint ck = load_checkpoint(path);
    REQUIRE(ck.kind == 2);
    REQUIRE(ck.generative.has_value());
    CHECK(ck.img_h == 10);
    CHECK(ck.img_w == 10);
    CHECK(ck.generative->weights == layer.weights);
    CHECK(ck.generative->bias == layer.bias);
    CHECK(ck.generative->sigma_sq == 1.1);
    CHECK(serialize_checkpoint(*ck.generative, 10, 10) ==
          serialize_checkpoint(layer, 10, 10));
    fs::remove(path);
  }
}

TEST_CASE("FRM1 error taxonomy") {
  auto bank = shared_bank(make_random_bank(1, 2, 3, 41));
  const auto model = random_stationary(bank, 6, 6, 1.0, 42);
  auto bytes = serialize_checkpoint(model);

  const std::string path = tmp_path("frame_model_bad.frm");
  auto bad = bytes;
  bad[0] = 'X';
  atomic_write_file(path, bad);
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("bad magic"),
                       FormatError);

  bad = bytes;
  bad.resize(bad.size() / 2);
  atomic_write_file(path, bad);
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("truncated"),
                       FormatError);
  fs::remove(path);
  CHECK_THROWS_AS(load_checkpoint(path), IoError);
}

TEST_CASE("atomic_write never leaves temp files behind") {
  const std::string dir = tmp_path("frame_atomic_dir");
  fs::create_directories(dir);
  atomic_write_text(dir + "/a.txt", "hello");
  {
    std::ifstream in(dir + "/a.txt");
    std::string s;
    std::getline(in, s);
    CHECK(s == "hello");
  }
  std::size_t count = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir)) ++count;
  CHECK(count == 1);
  fs::remove_all(dir);
}
