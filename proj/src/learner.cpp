#include "frame/learner.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "frame/errors.hpp"
#include "frame/numeric.hpp"

namespace frame {

void LearnConfig::validate() const {
  if (!(gamma0 > 0.0) || !std::isfinite(gamma0))
    throw InvalidArgument("gamma0 must be finite and > 0");
  if (t0 < 1 || iterations < 1 || n_chains < 1 || threads < 1)
    throw InvalidArgument("counts must be >= 1");
  if (langevin_steps < 0) throw InvalidArgument("langevin_steps must be >= 0");
  if (epsilon < 0.0) throw InvalidArgument("epsilon must be >= 0");
  if (!(sigma_sq > 0.0)) throw InvalidArgument("sigma_sq must be > 0");
}

double gamma_at(const LearnConfig& config, int t) {
  if (config.schedule == Schedule::constant) return config.gamma0;
  return config.gamma0 / (1.0 + static_cast<double>(t) / config.t0);
}

double StatsSnapshot::max_abs_delta() const {
  double m = 0.0;
  for (double d : delta) m = std::max(m, std::fabs(d));
  return m;
}

FeatureStack observed_stats_object(const FilterBank& bank,
                                   const std::vector<Image>& images,
                                   FeatureStack* variance) {
  if (images.empty()) throw InvalidArgument("need >= 1 training image");
  for (const Image& img : images)
    if (!img.same_shape(images.front()))
      throw GeometryError("training images must share geometry");
  std::vector<FeatureStack> stacks;
  stacks.reserve(images.size());
  for (const Image& img : images) stacks.push_back(forward(bank, img));
  FeatureStack mean = stacks.front();
  for (std::size_t m = 1; m < stacks.size(); ++m)
    for (std::size_t i = 0; i < mean.size(); ++i)
      mean.data[i] += stacks[m].data[i];
  const double inv_m = 1.0 / static_cast<double>(stacks.size());
  for (double& v : mean.data) v *= inv_m;
  if (variance) {
    *variance = FeatureStack(mean.maps, mean.height, mean.width);
    for (const FeatureStack& s : stacks)
      for (std::size_t i = 0; i < s.size(); ++i) {
        const double d = s.data[i] - mean.data[i];
        variance->data[i] += d * d;
      }
    for (double& v : variance->data) v *= inv_m;
  }
  return mean;
}

std::vector<double> observed_stats_texture(const FilterBank& bank,
                                           const std::vector<Image>& images,
                                           std::vector<double>* variance) {
  if (images.empty()) throw InvalidArgument("need >= 1 training image");
  std::vector<std::vector<double>> pooled;
  pooled.reserve(images.size());
  for (const Image& img : images)
    pooled.push_back(pooled_stats_of(forward(bank, img)));
  std::vector<double> mean(pooled.front().size(), 0.0);
  for (const auto& p : pooled) {
    if (p.size() != mean.size())
      throw GeometryError("training images must share geometry");
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += p[k];
  }
  const double inv_m = 1.0 / static_cast<double>(pooled.size());
  for (double& v : mean) v *= inv_m;
  if (variance) {
    variance->assign(mean.size(), 0.0);
    for (const auto& p : pooled)
      for (std::size_t k = 0; k < mean.size(); ++k) {
        const double d = p[k] - mean[k];
        (*variance)[k] += d * d;
      }
    for (double& v : *variance) v *= inv_m;
  }
  return mean;
}

namespace {

std::vector<double> updated_weights(const std::vector<double>& w,
                                    const StatsSnapshot& snapshot,
                                    double gamma_t,
                                    const UpdateOptions& opts) {
  if (snapshot.delta.size() != w.size())
    throw GeometryError("snapshot geometry does not match model weights");
  if (!all_finite(snapshot.delta))
    throw DivergenceError("non-finite statistics in update");
  std::vector<double> out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    double rate = gamma_t;
    if (opts.variance_scaled)
      rate /= std::max(snapshot.obs_var[i], opts.v_floor);
    out[i] = w[i] + rate * snapshot.delta[i];
  }
  return out;
}

StatsSnapshot make_snapshot(std::vector<double> h_obs,
                            std::vector<double> h_syn,
                            std::vector<double> obs_var) {
  StatsSnapshot s;
  s.h_obs = std::move(h_obs);
  s.h_syn = std::move(h_syn);
  s.obs_var = std::move(obs_var);
  s.delta.resize(s.h_obs.size());
  for (std::size_t i = 0; i < s.h_obs.size(); ++i)
    s.delta[i] = s.h_obs[i] - s.h_syn[i];
  return s;
}

// Redraws chain images from white noise using the persistent per-chain
// streams (cold start).
void reinit_chains_noise(ChainState& chains, double sigma_sq) {
  const double sigma = std::sqrt(sigma_sq);
  for (std::size_t m = 0; m < chains.images.size(); ++m)
    for (double& v : chains.images[m].data)
      v = sigma * chains.streams[m].normal();
}

}  // namespace

NonStationaryFrame update_nonstationary(const NonStationaryFrame& model,
                                        const StatsSnapshot& snapshot,
                                        double gamma_t,
                                        const UpdateOptions& opts) {
  FeatureStack w = model.weights();
  w.data = updated_weights(w.data, snapshot, gamma_t, opts);
  return NonStationaryFrame(model.bank_ptr(), model.image_height(),
                            model.image_width(), model.sigma_sq(),
                            std::move(w));
}

StationaryFrame update_stationary(const StationaryFrame& model,
                                  const StatsSnapshot& snapshot,
                                  double gamma_t, const UpdateOptions& opts) {
  return StationaryFrame(
      model.bank_ptr(), model.image_height(), model.image_width(),
      model.sigma_sq(),
      updated_weights(model.weights(), snapshot, gamma_t, opts));
}

namespace {

template <typename Model, typename Result, typename SynFn, typename UpdateFn>
void fit_loop(Result& res, const LearnConfig& config,
              const std::vector<double>& h_obs,
              const std::vector<double>& obs_var, SynFn synthesized_stats,
              UpdateFn apply_update, const IterCallback& on_iteration) {
  const UpdateOptions opts{config.schedule == Schedule::variance_scaled,
                           config.v_floor};
  for (int t = 0; t < config.iterations; ++t) {
    if (config.start == StartMode::cold)
      reinit_chains_noise(res.chains, config.sigma_sq);
    run_chains(res.chains, res.model, config.epsilon, config.langevin_steps,
               config.threads);
    for (const Image& img : res.chains.images) {
      if (!all_finite(img.data)) {
        res.status = FitStatus::diverged;
        res.message = "chain image became non-finite at iteration " +
                      std::to_string(t);
        return;
      }
    }
    StatsSnapshot snap =
        make_snapshot(h_obs, synthesized_stats(res.chains), obs_var);
    const double gamma_t = gamma_at(config, t);
    try {
      apply_update(snap, gamma_t, opts);
    } catch (const DivergenceError& e) {
      res.status = FitStatus::diverged;
      res.message = e.what();
      return;
    }
    double mean_energy = 0.0;
    for (const Image& img : res.chains.images)
      mean_energy += res.model.energy(img).energy;
    mean_energy /= static_cast<double>(res.chains.images.size());
    res.log.push_back({t, snap.max_abs_delta(), mean_energy, gamma_t});
    if (on_iteration) on_iteration(t, res.chains);
    if (config.tol > 0.0 && snap.max_abs_delta() <= config.tol) {
      res.status = FitStatus::converged;
      return;
    }
  }
  res.status = FitStatus::max_iterations;
}

}  // namespace

ObjectFitResult fit_object(std::shared_ptr<const FilterBank> bank,
                           const std::vector<Image>& images,
                           const LearnConfig& config,
                           const IterCallback& on_iteration) {
  config.validate();
  FeatureStack var;
  const FeatureStack h_obs = observed_stats_object(*bank, images, &var);
  const Image& first = images.front();
  ObjectFitResult res{
      NonStationaryFrame(bank, first.height, first.width, config.sigma_sq),
      init_chains(ChainInit::zero, config.n_chains, first.height, first.width,
                  first.channels, config.sigma_sq, config.master_seed),
      {},
      FitStatus::max_iterations,
      ""};
  const auto syn_stats = [&](const ChainState& chains) {
    FeatureStack mean = forward(*bank, chains.images.front());
    for (std::size_t m = 1; m < chains.images.size(); ++m) {
      const FeatureStack s = forward(*bank, chains.images[m]);
      for (std::size_t i = 0; i < mean.size(); ++i)
        mean.data[i] += s.data[i];
    }
    const double inv = 1.0 / static_cast<double>(chains.images.size());
    for (double& v : mean.data) v *= inv;
    return mean.data;
  };
  const auto apply = [&](const StatsSnapshot& snap, double gamma_t,
                         const UpdateOptions& opts) {
    res.model = update_nonstationary(res.model, snap, gamma_t, opts);
  };
  fit_loop<NonStationaryFrame>(res, config, h_obs.data, var.data, syn_stats,
                               apply, on_iteration);
  return res;
}

TextureFitResult fit_texture(std::shared_ptr<const FilterBank> bank,
                             const std::vector<Image>& images,
                             const LearnConfig& config,
                             const IterCallback& on_iteration) {
  config.validate();
  std::vector<double> var;
  const std::vector<double> h_obs =
      observed_stats_texture(*bank, images, &var);
  const Image& first = images.front();
  TextureFitResult res{
      StationaryFrame(bank, first.height, first.width, config.sigma_sq),
      init_chains(ChainInit::zero, config.n_chains, first.height, first.width,
                  first.channels, config.sigma_sq, config.master_seed),
      {},
      FitStatus::max_iterations,
      ""};
  const auto syn_stats = [&](const ChainState& chains) {
    std::vector<double> mean(h_obs.size(), 0.0);
    for (const Image& img : chains.images) {
      const auto pooled = pooled_stats_of(forward(*bank, img));
      for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += pooled[k];
    }
    const double inv = 1.0 / static_cast<double>(chains.images.size());
    for (double& v : mean) v *= inv;
    return mean;
  };
  const auto apply = [&](const StatsSnapshot& snap, double gamma_t,
                         const UpdateOptions& opts) {
    res.model = update_stationary(res.model, snap, gamma_t, opts);
  };
  fit_loop<StationaryFrame>(res, config, h_obs, var, syn_stats, apply,
                            on_iteration);
  return res;
}

std::string learn_log_to_csv(const std::vector<LearnLogRow>& log) {
  std::ostringstream out;
  out << "iteration,max_abs_diff,mean_energy,gamma_t\n";
  out.precision(17);
  for (const auto& row : log)
    out << row.iteration << "," << row.max_abs_diff << "," << row.mean_energy
        << "," << row.gamma_t << "\n";
  return out.str();
}

void write_learn_log_csv(const std::vector<LearnLogRow>& log,
                         const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << learn_log_to_csv(log);
}

}  // namespace frame
