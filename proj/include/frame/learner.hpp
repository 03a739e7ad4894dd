#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "frame/model.hpp"
#include "frame/sampler.hpp"

namespace frame {

enum class Schedule { constant, one_over_t, variance_scaled };
enum class StartMode { warm, cold };

struct LearnConfig {
  double gamma0 = 0.01;
  Schedule schedule = Schedule::constant;
  int t0 = 100;             // schedule offset
  int iterations = 100;     // T
  int langevin_steps = 100; // L
  int n_chains = 16;        // M-tilde
  double epsilon = 0.01;
  StartMode start = StartMode::warm;
  std::uint64_t master_seed = 0;
  double sigma_sq = 1.0;
  double tol = 0.0;         // stop when max|H_obs - H_syn| <= tol (0: run all T)
  int threads = 1;
  double v_floor = 1e-6;    // variance floor for variance_scaled

  void validate() const;
};

// gamma0 for constant, gamma0 / (1 + t/t0) otherwise. The variance part of
// variance_scaled is applied per entry inside the update.
double gamma_at(const LearnConfig& config, int t);

// Observed/synthesized statistics and their discrepancy, flat in the
// statistic geometry ([K][H'][W'] non-stationary, [K] stationary).
struct StatsSnapshot {
  std::vector<double> h_obs;
  std::vector<double> h_syn;
  std::vector<double> delta;    // h_obs - h_syn (the ascent direction)
  std::vector<double> obs_var;  // per-entry variance across training images

  double max_abs_delta() const;
};

struct LearnLogRow {
  int iteration = 0;
  double max_abs_diff = 0.0;
  double mean_energy = 0.0;
  double gamma_t = 0.0;
};

enum class FitStatus { converged, max_iterations, diverged };

// Per-filter, per-position mean response over aligned images, with
// per-entry variance (population variance over the image set).
FeatureStack observed_stats_object(const FilterBank& bank,
                                   const std::vector<Image>& images,
                                   FeatureStack* variance = nullptr);

// Pooled per-filter means over the image set.
std::vector<double> observed_stats_texture(const FilterBank& bank,
                                           const std::vector<Image>& images,
                                           std::vector<double>* variance
                                           = nullptr);

struct UpdateOptions {
  bool variance_scaled = false;
  double v_floor = 1e-6;
};

NonStationaryFrame update_nonstationary(const NonStationaryFrame& model,
                                        const StatsSnapshot& snapshot,
                                        double gamma_t,
                                        const UpdateOptions& opts = {});

StationaryFrame update_stationary(const StationaryFrame& model,
                                  const StatsSnapshot& snapshot,
                                  double gamma_t,
                                  const UpdateOptions& opts = {});

struct ObjectFitResult {
  NonStationaryFrame model;
  ChainState chains;
  std::vector<LearnLogRow> log;
  FitStatus status = FitStatus::max_iterations;
  std::string message;
};

struct TextureFitResult {
  StationaryFrame model;
  ChainState chains;
  std::vector<LearnLogRow> log;
  FitStatus status = FitStatus::max_iterations;
  std::string message;
};

// Invoked after each learning iteration (snapshot hooks); never touches
// the trajectory.
using IterCallback = std::function<void(int iteration, const ChainState&)>;

// Stochastic moment-matching ascent with persistent Langevin chains
// (warm start) or fresh noise chains per iteration (cold start).
ObjectFitResult fit_object(std::shared_ptr<const FilterBank> bank,
                           const std::vector<Image>& images,
                           const LearnConfig& config,
                           const IterCallback& on_iteration = {});

TextureFitResult fit_texture(std::shared_ptr<const FilterBank> bank,
                             const std::vector<Image>& images,
                             const LearnConfig& config,
                             const IterCallback& on_iteration = {});

std::string learn_log_to_csv(const std::vector<LearnLogRow>& log);
void write_learn_log_csv(const std::vector<LearnLogRow>& log,
                         const std::string& path);

}  // namespace frame
