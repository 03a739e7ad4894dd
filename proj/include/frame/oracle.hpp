#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "frame/model.hpp"
#include "frame/rng.hpp"

namespace frame {

enum class OracleReference { uniform, gaussian_restricted };

// A tiny quantized image space on which everything is enumerable: each of
// the H*W pixels takes one of |levels| values. States are enumerated in
// odometer order (last pixel fastest).
struct OracleSpec {
  int height = 0;
  int width = 0;
  std::vector<double> levels;
  OracleReference reference = OracleReference::uniform;
  double sigma_sq = 1.0;  // for gaussian_restricted

  void validate() const;
  std::uint64_t state_count() const;
  Image state_image(std::uint64_t index) const;
};

// log Z = log sum_I exp(score(I) + log q(I)), max-shifted.
double exact_partition(const OracleSpec& spec, const NonStationaryFrame& model);
double exact_partition(const OracleSpec& spec, const StationaryFrame& model);

// E_p[stats(I)] under the normalized model, flat in the model's statistic
// geometry.
std::vector<double> exact_expectation(const OracleSpec& spec,
                                      const NonStationaryFrame& model);
std::vector<double> exact_expectation(const OracleSpec& spec,
                                      const StationaryFrame& model);

// Normalized probability table over the enumerated states.
std::vector<double> exact_distribution(const OracleSpec& spec,
                                       const NonStationaryFrame& model);
std::vector<double> exact_distribution(const OracleSpec& spec,
                                       const StationaryFrame& model);

// Direct categorical draw from an enumerated probability table.
std::uint64_t sample_categorical(const std::vector<double>& probs,
                                 PhiloxStream& rng);

enum class OracleModelKind { nonstationary, stationary };

struct ExactFitResult {
  NonStationaryFrame model;
  double gap = 0.0;  // achieved max|E_w[stats] - H_obs|
  int iterations = 0;
  bool converged = false;
  bool infeasible = false;  // gap stalled with ||w|| diverging
};

struct ExactFitOptions {
  double gamma = 0.5;
  double tol = 1e-8;
  int max_iterations = 2000000;
};

// Exact-gradient ascent of the log-likelihood: w <- w + gamma (H_obs - E_w).
ExactFitResult exact_fit(const OracleSpec& spec,
                         std::shared_ptr<const FilterBank> bank,
                         const std::vector<Image>& observed,
                         const ExactFitOptions& opts = {});

struct StationaryExactFitResult {
  StationaryFrame model;
  double gap = 0.0;
  int iterations = 0;
  bool converged = false;
  bool infeasible = false;
};

StationaryExactFitResult exact_fit_stationary(
    const OracleSpec& spec, std::shared_ptr<const FilterBank> bank,
    const std::vector<Image>& observed, const ExactFitOptions& opts = {});

// KL(p||q) = sum p log(p/q) with 0 log 0 = 0; +infinity where q = 0 < p.
double exact_kl(const std::vector<double>& p, const std::vector<double>& q);

// Per-state statistics and reference log-density, cached once so repeated
// expectation calls are cheap. Statistic geometry follows `kind`.
struct EnumerationCache {
  std::vector<double> stats;  // [n_states][n_stats] row-major
  std::vector<double> log_q;  // [n_states], normalized over the grid
  std::size_t n_stats = 0;
  std::uint64_t n_states = 0;
};

EnumerationCache enumerate_stats(const OracleSpec& spec,
                                 const FilterBank& bank,
                                 OracleModelKind kind);

}  // namespace frame
