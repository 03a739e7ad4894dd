#include "frame/oracle.hpp"

#include "frame/learner.hpp"

#include <cmath>

#include "frame/errors.hpp"
#include "frame/numeric.hpp"

namespace frame {

namespace {
constexpr std::uint64_t kStateCap = 43'000'000;
}

void OracleSpec::validate() const {
  if (height < 1 || width < 1) throw InvalidArgument("bad oracle geometry");
  if (height * width > 16)
    throw InvalidArgument("oracle grid limited to 16 pixels");
  if (levels.empty() || levels.size() > 3)
    throw InvalidArgument("oracle needs 1..3 pixel levels");
  if (!all_finite(levels)) throw InvalidArgument("non-finite pixel level");
  if (!(sigma_sq > 0.0)) throw InvalidArgument("sigma_sq must be > 0");
  if (state_count() > kStateCap)
    throw InvalidArgument("oracle state count over cap");
}

std::uint64_t OracleSpec::state_count() const {
  std::uint64_t n = 1;
  for (int i = 0; i < height * width; ++i) n *= levels.size();
  return n;
}

Image OracleSpec::state_image(std::uint64_t index) const {
  Image img(height, width, 1);
  const std::uint64_t base = levels.size();
  // Odometer order: the last pixel is the fastest digit.
  for (int p = height * width - 1; p >= 0; --p) {
    img.data[p] = levels[index % base];
    index /= base;
  }
  return img;
}

EnumerationCache enumerate_stats(const OracleSpec& spec,
                                 const FilterBank& bank,
                                 OracleModelKind kind) {
  spec.validate();
  if (bank.input_channels != 1)
    throw GeometryError("oracle supports single-channel banks");
  EnumerationCache cache;
  cache.n_states = spec.state_count();
  const FeatureStack geom = output_geometry(bank, spec.height, spec.width);
  cache.n_stats = kind == OracleModelKind::nonstationary
                      ? geom.size()
                      : static_cast<std::size_t>(geom.maps);
  cache.stats.resize(cache.n_states * cache.n_stats);
  cache.log_q.resize(cache.n_states);
  for (std::uint64_t i = 0; i < cache.n_states; ++i) {
    const Image img = spec.state_image(i);
    const FeatureStack stack = forward(bank, img);
    double* row = cache.stats.data() + i * cache.n_stats;
    if (kind == OracleModelKind::nonstationary) {
      for (std::size_t s = 0; s < cache.n_stats; ++s) row[s] = stack.data[s];
    } else {
      const auto pooled = pooled_stats_of(stack);
      for (std::size_t s = 0; s < cache.n_stats; ++s) row[s] = pooled[s];
    }
    cache.log_q[i] = spec.reference == OracleReference::uniform
                         ? 0.0
                         : -image_norm_sq(img) / (2.0 * spec.sigma_sq);
  }
  // Normalize the reference over the grid.
  const double log_z_q = log_sum_exp(cache.log_q);
  for (double& v : cache.log_q) v -= log_z_q;
  return cache;
}

namespace {

// Statistic weights in the "score" sense: score(I) = dot(coeff, stats(I)).
// Nonstationary: coeff = w. Stationary: stats are pooled means, so
// coeff_k = w_k * feature-map area.
std::vector<double> score_coefficients(const OracleSpec& spec,
                                       const NonStationaryFrame& model) {
  return model.weights().data;
}

std::vector<double> score_coefficients(const OracleSpec& spec,
                                       const StationaryFrame& model) {
  const FeatureStack geom =
      output_geometry(model.bank(), spec.height, spec.width);
  const double area = static_cast<double>(geom.height) * geom.width;
  std::vector<double> coeff = model.weights();
  for (double& v : coeff) v *= area;
  return coeff;
}

std::vector<double> log_weights(const EnumerationCache& cache,
                                const std::vector<double>& coeff) {
  if (coeff.size() != cache.n_stats)
    throw GeometryError("model statistic geometry does not match oracle");
  std::vector<double> lw(cache.n_states);
  for (std::uint64_t i = 0; i < cache.n_states; ++i) {
    const double* row = cache.stats.data() + i * cache.n_stats;
    double score = 0.0;
    for (std::size_t s = 0; s < cache.n_stats; ++s) score += coeff[s] * row[s];
    lw[i] = score + cache.log_q[i];
  }
  return lw;
}

std::vector<double> distribution_from(const EnumerationCache& cache,
                                      const std::vector<double>& coeff) {
  std::vector<double> lw = log_weights(cache, coeff);
  const double log_z = log_sum_exp(lw);
  for (double& v : lw) v = std::exp(v - log_z);
  return lw;
}

std::vector<double> expectation_from(const EnumerationCache& cache,
                                     const std::vector<double>& probs) {
  std::vector<double> e(cache.n_stats, 0.0);
  for (std::uint64_t i = 0; i < cache.n_states; ++i) {
    const double* row = cache.stats.data() + i * cache.n_stats;
    for (std::size_t s = 0; s < cache.n_stats; ++s) e[s] += probs[i] * row[s];
  }
  return e;
}

template <typename Model>
double partition_impl(const OracleSpec& spec, const Model& model) {
  const auto cache = enumerate_stats(
      spec, model.bank(),
      std::is_same_v<Model, NonStationaryFrame>
          ? OracleModelKind::nonstationary
          : OracleModelKind::stationary);
  return log_sum_exp(log_weights(cache, score_coefficients(spec, model)));
}

template <typename Model>
std::vector<double> distribution_impl(const OracleSpec& spec,
                                      const Model& model) {
  const auto cache = enumerate_stats(
      spec, model.bank(),
      std::is_same_v<Model, NonStationaryFrame>
          ? OracleModelKind::nonstationary
          : OracleModelKind::stationary);
  return distribution_from(cache, score_coefficients(spec, model));
}

}  // namespace

double exact_partition(const OracleSpec& spec,
                       const NonStationaryFrame& model) {
  return partition_impl(spec, model);
}
double exact_partition(const OracleSpec& spec, const StationaryFrame& model) {
  return partition_impl(spec, model);
}

std::vector<double> exact_distribution(const OracleSpec& spec,
                                       const NonStationaryFrame& model) {
  return distribution_impl(spec, model);
}
std::vector<double> exact_distribution(const OracleSpec& spec,
                                       const StationaryFrame& model) {
  return distribution_impl(spec, model);
}

std::vector<double> exact_expectation(const OracleSpec& spec,
                                      const NonStationaryFrame& model) {
  const auto cache = enumerate_stats(spec, model.bank(),
                                     OracleModelKind::nonstationary);
  return expectation_from(
      cache, distribution_from(cache, score_coefficients(spec, model)));
}

std::vector<double> exact_expectation(const OracleSpec& spec,
                                      const StationaryFrame& model) {
  const auto cache =
      enumerate_stats(spec, model.bank(), OracleModelKind::stationary);
  return expectation_from(
      cache, distribution_from(cache, score_coefficients(spec, model)));
}

std::uint64_t sample_categorical(const std::vector<double>& probs,
                                 PhiloxStream& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u <= acc) return i;
  }
  return probs.size() - 1;
}

namespace {

struct AscentOutcome {
  std::vector<double> coeff_free;  // fitted w (statistic-space coefficients)
  double gap = 0.0;
  int iterations = 0;
  bool converged = false;
  bool infeasible = false;
};

AscentOutcome ascend(const EnumerationCache& cache,
                     const std::vector<double>& h_obs,
                     const ExactFitOptions& opts) {
  AscentOutcome out;
  out.coeff_free.assign(cache.n_stats, 0.0);
  double best_gap = std::numeric_limits<double>::infinity();
  int stall = 0;
  for (int t = 0; t < opts.max_iterations; ++t) {
    const auto probs = distribution_from(cache, out.coeff_free);
    const auto e = expectation_from(cache, probs);
    double gap = 0.0;
    for (std::size_t s = 0; s < cache.n_stats; ++s)
      gap = std::max(gap, std::fabs(h_obs[s] - e[s]));
    out.gap = gap;
    out.iterations = t;
    if (gap <= opts.tol) {
      out.converged = true;
      return out;
    }
    if (gap < best_gap * (1.0 - 1e-12)) {
      best_gap = gap;
      stall = 0;
    } else {
      ++stall;
    }
    double w_inf = 0.0;
    for (double w : out.coeff_free) w_inf = std::max(w_inf, std::fabs(w));
    // Target outside the achievable convex hull: the gap stalls while the
    // weights run off to infinity.
    if (stall > 1000 && w_inf > 1e3) {
      out.infeasible = true;
      return out;
    }
    for (std::size_t s = 0; s < cache.n_stats; ++s)
      out.coeff_free[s] += opts.gamma * (h_obs[s] - e[s]);
  }
  return out;
}

}  // namespace

ExactFitResult exact_fit(const OracleSpec& spec,
                         std::shared_ptr<const FilterBank> bank,
                         const std::vector<Image>& observed,
                         const ExactFitOptions& opts) {
  const auto cache =
      enumerate_stats(spec, *bank, OracleModelKind::nonstationary);
  const FeatureStack h_obs = observed_stats_object(*bank, observed);
  const AscentOutcome out = ascend(cache, h_obs.data, opts);
  FeatureStack w = output_geometry(*bank, spec.height, spec.width);
  w.data = out.coeff_free;
  ExactFitResult res{NonStationaryFrame(bank, spec.height, spec.width,
                                        spec.sigma_sq, std::move(w)),
                     out.gap, out.iterations, out.converged, out.infeasible};
  return res;
}

StationaryExactFitResult exact_fit_stationary(
    const OracleSpec& spec, std::shared_ptr<const FilterBank> bank,
    const std::vector<Image>& observed, const ExactFitOptions& opts) {
  const auto cache = enumerate_stats(spec, *bank, OracleModelKind::stationary);
  const std::vector<double> h_obs = observed_stats_texture(*bank, observed);
  const AscentOutcome out = ascend(cache, h_obs, opts);
  // Ascent works in statistic space (pooled means); convert back to the
  // per-position weight convention w_k = coeff_k / area.
  const FeatureStack geom = output_geometry(*bank, spec.height, spec.width);
  const double area = static_cast<double>(geom.height) * geom.width;
  std::vector<double> w = out.coeff_free;
  for (double& v : w) v /= area;
  StationaryExactFitResult res{
      StationaryFrame(bank, spec.height, spec.width, spec.sigma_sq,
                      std::move(w)),
      out.gap, out.iterations, out.converged, out.infeasible};
  return res;
}

double exact_kl(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size())
    throw GeometryError("KL tables must share the state space");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) return std::numeric_limits<double>::infinity();
    kl += p[i] * std::log(p[i] / q[i]);
  }
  return kl;
}

}  // namespace frame
