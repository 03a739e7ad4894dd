#pragma once

#include <cstdint>
#include <vector>

#include "frame/filter_bank.hpp"
#include "frame/image.hpp"
#include "frame/model.hpp"
#include "frame/rng.hpp"

namespace frame {

// Parallel persistent Langevin chains. Each chain owns a counter-based
// random stream seeded from (master_seed, chain_index), so evolution is
// bitwise reproducible chain by chain regardless of scheduling.
struct ChainState {
  std::vector<Image> images;
  std::vector<PhiloxStream> streams;
  std::uint64_t master_seed = 0;
  long steps_taken = 0;
};

enum class ChainInit { zero, noise };

ChainState init_chains(ChainInit mode, int n_chains, int height, int width,
                       int channels, double sigma_sq,
                       std::uint64_t master_seed);

// I' = I - (eps^2/2) U'(I,w) + eps Z with Z a fresh standard-normal image.
Image langevin_step(const Image& img, const EnergyModel& model, double epsilon,
                    PhiloxStream& noise);

// Advances every chain L steps independently.
void run_chains(ChainState& state, const EnergyModel& model, double epsilon,
                int L, int threads = 1);

// Annealing schedule: temperature T0 * decay^level, clamped at floor.
struct AnnealSchedule {
  double T0 = 1.0;
  double decay = 0.95;
  double floor = 0.0;
  int steps_per_level = 100;
  int levels = 100;

  void validate() const;
  double temperature(int level) const;
  int total_steps() const { return steps_per_level * levels; }
};

enum class JuleszMode { langevin, descent };
enum class StatsKind { per_position, pooled };

struct JuleszLogRow {
  long step;
  double temperature;
  double sum_delta_sq;
};

struct JuleszTarget {
  StatsKind kind = StatsKind::pooled;
  // per_position: the full target stack; pooled: per-filter means in
  // target_pooled (target_stack carries only geometry).
  FeatureStack target_stack;
  std::vector<double> target_pooled;
};

struct JuleszResult {
  std::vector<Image> images;
  double final_sum_delta_sq = 0.0;
  std::vector<JuleszLogRow> log;
};

// Matches synthesized statistics to the target by annealed Langevin on
// sum(Delta^2)/T, or plain gradient descent (the T = 0 limit).
// Descent mode uses step eps^2/2 on sum(Delta^2).
JuleszResult julesz_synthesize(const JuleszTarget& target,
                               const FilterBank& bank, int height, int width,
                               const AnnealSchedule& schedule, double epsilon,
                               std::uint64_t master_seed, JuleszMode mode,
                               int n_images = 1);

JuleszTarget julesz_target_from_image(const FilterBank& bank,
                                      const Image& img, StatsKind kind);

}  // namespace frame
