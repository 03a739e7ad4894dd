#include "frame/sampler.hpp"

#include <cmath>
#include <thread>

#include "frame/errors.hpp"
#include "frame/numeric.hpp"

namespace frame {

ChainState init_chains(ChainInit mode, int n_chains, int height, int width,
                       int channels, double sigma_sq,
                       std::uint64_t master_seed) {
  if (n_chains < 1) throw InvalidArgument("need >= 1 chain");
  if (!(sigma_sq > 0.0)) throw InvalidArgument("sigma_sq must be > 0");
  ChainState state;
  state.master_seed = master_seed;
  state.images.reserve(n_chains);
  state.streams.reserve(n_chains);
  const double sigma = std::sqrt(sigma_sq);
  for (int m = 0; m < n_chains; ++m) {
    state.streams.emplace_back(master_seed, static_cast<std::uint64_t>(m));
    Image img(height, width, channels);
    if (mode == ChainInit::noise)
      for (double& v : img.data) v = sigma * state.streams.back().normal();
    state.images.push_back(std::move(img));
  }
  return state;
}

Image langevin_step(const Image& img, const EnergyModel& model, double epsilon,
                    PhiloxStream& noise) {
  if (epsilon < 0.0) throw InvalidArgument("epsilon must be >= 0");
  if (epsilon == 0.0) return img;
  const Image grad = model.grad_image(img);
  Image out = img;
  const double half_eps_sq = epsilon * epsilon / 2.0;
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data[i] += -half_eps_sq * grad.data[i] + epsilon * noise.normal();
  return out;
}

void run_chains(ChainState& state, const EnergyModel& model, double epsilon,
                int L, int threads) {
  if (L < 0) throw InvalidArgument("L must be >= 0");
  const int n = static_cast<int>(state.images.size());
  const auto advance = [&](int begin, int end) {
    for (int m = begin; m < end; ++m)
      for (int step = 0; step < L; ++step)
        state.images[m] =
            langevin_step(state.images[m], model, epsilon, state.streams[m]);
  };
  if (threads <= 1 || n <= 1) {
    advance(0, n);
  } else {
    const int workers = std::min(threads, n);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int t = 0; t < workers; ++t) {
      const int begin = n * t / workers;
      const int end = n * (t + 1) / workers;
      pool.emplace_back(advance, begin, end);
    }
    for (auto& th : pool) th.join();
  }
  state.steps_taken += L;
}

void AnnealSchedule::validate() const {
  if (!(T0 > 0.0) || !(decay > 0.0) || !(decay < 1.0) || floor < 0.0 ||
      steps_per_level < 1 || levels < 1)
    throw InvalidArgument("bad anneal schedule");
}

double AnnealSchedule::temperature(int level) const {
  const double t = T0 * std::pow(decay, level);
  return t < floor ? floor : t;
}

JuleszTarget julesz_target_from_image(const FilterBank& bank, const Image& img,
                                      StatsKind kind) {
  JuleszTarget target;
  target.kind = kind;
  target.target_stack = forward(bank, img);
  if (kind == StatsKind::pooled) {
    target.target_pooled = pooled_stats_of(target.target_stack);
    target.target_stack.data.assign(target.target_stack.size(), 0.0);
  }
  return target;
}

namespace {

// Statistics of the current image set, the discrepancy Delta, and per-image
// cotangents of sum(Delta^2).
struct DiscrepancyEval {
  double sum_delta_sq = 0.0;
  std::vector<FeatureStack> cotangents;
};

DiscrepancyEval eval_discrepancy(const JuleszTarget& target,
                                 const std::vector<FeatureStack>& stacks) {
  DiscrepancyEval ev;
  const int n = static_cast<int>(stacks.size());
  const double inv_n = 1.0 / n;
  if (target.kind == StatsKind::per_position) {
    FeatureStack mean = stacks[0];
    for (int m = 1; m < n; ++m)
      for (std::size_t i = 0; i < mean.size(); ++i)
        mean.data[i] += stacks[m].data[i];
    for (double& v : mean.data) v *= inv_n;
    FeatureStack delta = mean;
    for (std::size_t i = 0; i < delta.size(); ++i) {
      delta.data[i] -= target.target_stack.data[i];
      ev.sum_delta_sq += delta.data[i] * delta.data[i];
    }
    FeatureStack cot = delta;
    for (double& v : cot.data) v *= 2.0 * inv_n;
    ev.cotangents.assign(n, cot);
  } else {
    const double area =
        static_cast<double>(stacks[0].height) * stacks[0].width;
    std::vector<double> mean(stacks[0].maps, 0.0);
    for (int m = 0; m < n; ++m) {
      const auto pooled = pooled_stats_of(stacks[m]);
      for (std::size_t k = 0; k < pooled.size(); ++k) mean[k] += pooled[k];
    }
    for (double& v : mean) v *= inv_n;
    FeatureStack cot(stacks[0].maps, stacks[0].height, stacks[0].width);
    for (int k = 0; k < cot.maps; ++k) {
      const double delta = mean[k] - target.target_pooled[k];
      ev.sum_delta_sq += delta * delta;
      const double c = 2.0 * delta * inv_n / area;
      for (int y = 0; y < cot.height; ++y)
        for (int x = 0; x < cot.width; ++x) cot.at(k, y, x) = c;
    }
    ev.cotangents.assign(n, cot);
  }
  return ev;
}

}  // namespace

JuleszResult julesz_synthesize(const JuleszTarget& target,
                               const FilterBank& bank, int height, int width,
                               const AnnealSchedule& schedule, double epsilon,
                               std::uint64_t master_seed, JuleszMode mode,
                               int n_images) {
  schedule.validate();
  if (epsilon <= 0.0) throw InvalidArgument("epsilon must be > 0");
  const FeatureStack geom = output_geometry(bank, height, width);
  if (geom.maps != target.target_stack.maps ||
      (target.kind == StatsKind::per_position &&
       !geom.same_shape(target.target_stack)))
    throw GeometryError("target statistics geometry does not match bank");

  ChainState chains = init_chains(ChainInit::noise, n_images, height, width,
                                  bank.input_channels, 1.0, master_seed);
  JuleszResult res;
  const double half_eps_sq = epsilon * epsilon / 2.0;
  long step = 0;
  for (int level = 0; level < schedule.levels; ++level) {
    const double temp =
        mode == JuleszMode::descent ? 0.0 : schedule.temperature(level);
    const double noise_scale = epsilon * std::sqrt(temp);
    for (int s = 0; s < schedule.steps_per_level; ++s, ++step) {
      std::vector<FeatureStack> stacks;
      stacks.reserve(n_images);
      for (const Image& img : chains.images)
        stacks.push_back(forward(bank, img));
      DiscrepancyEval ev = eval_discrepancy(target, stacks);
      if (!std::isfinite(ev.sum_delta_sq))
        throw DivergenceError(
            "julesz: sum(Delta^2) became non-finite (step size too large?)");
      res.log.push_back({step, temp, ev.sum_delta_sq});
      res.final_sum_delta_sq = ev.sum_delta_sq;
      if (ev.sum_delta_sq == 0.0) {
        res.images = chains.images;
        return res;
      }
      for (int m = 0; m < n_images; ++m) {
        const Image grad =
            backward_image(bank, chains.images[m], ev.cotangents[m]);
        Image& img = chains.images[m];
        for (std::size_t i = 0; i < img.size(); ++i) {
          img.data[i] -= half_eps_sq * grad.data[i];
          if (noise_scale > 0.0)
            img.data[i] += noise_scale * chains.streams[m].normal();
        }
      }
    }
  }
  // Final discrepancy after the last update.
  std::vector<FeatureStack> stacks;
  for (const Image& img : chains.images) stacks.push_back(forward(bank, img));
  res.final_sum_delta_sq = eval_discrepancy(target, stacks).sum_delta_sq;
  res.log.push_back({step, mode == JuleszMode::descent ? 0.0 : schedule.floor,
                     res.final_sum_delta_sq});
  res.images = chains.images;
  return res;
}

}  // namespace frame
