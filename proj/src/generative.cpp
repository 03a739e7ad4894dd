#include "frame/generative.hpp"

#include <algorithm>
#include <cmath>

#include "frame/errors.hpp"
#include "frame/numeric.hpp"
#include "frame/rng.hpp"

namespace frame {

void GenerativeLayer::validate() const {
  if (!base) throw InvalidArgument("generative layer needs a base bank");
  base->validate();
  if (n_experts < 1) throw InvalidArgument("need J >= 1 experts");
  if (kh < 1 || kw < 1) throw InvalidArgument("bad expert window");
  const std::size_t n_weights = static_cast<std::size_t>(n_experts) *
                                base->top_channels() * kh * kw;
  if (weights.size() != n_weights ||
      bias.size() != static_cast<std::size_t>(n_experts))
    throw GeometryError("expert weight/bias storage size mismatch");
  if (!all_finite(weights) || !all_finite(bias))
    throw InvalidArgument("expert parameters contain non-finite entries");
  if (!(sigma_sq > 0.0)) throw InvalidArgument("sigma_sq must be > 0");
}

FilterBank compose(const GenerativeLayer& layer) {
  layer.validate();
  FilterBank bank = *layer.base;
  ConvLayer top;
  top.out_channels = layer.n_experts;
  top.in_channels = layer.base->top_channels();
  top.kh = layer.kh;
  top.kw = layer.kw;
  top.stride = 1;
  top.padding = Padding::valid;
  top.activation = Activation::relu;
  top.kernels = layer.weights;
  top.bias = layer.bias;
  bank.layers.push_back(std::move(top));
  return bank;
}

namespace {

FeatureStack ones_cotangent(const FilterBank& bank, int h, int w) {
  FeatureStack cot = output_geometry(bank, h, w);
  cot.data.assign(cot.size(), 1.0);
  return cot;
}

}  // namespace

GenerativeModel::GenerativeModel(GenerativeLayer layer, int img_h, int img_w,
                                 bool force_detectors_on)
    : layer_(std::move(layer)),
      composed_(compose(layer_)),
      img_h_(img_h),
      img_w_(img_w),
      force_on_(force_detectors_on) {}

EnergyReport GenerativeModel::energy(const Image& img) const {
  const FeatureStack stack = forward(composed_, img);
  EnergyReport r;
  for (double v : stack.data) r.feature_term += v;
  r.gaussian_term = image_norm_sq(img) / (2.0 * layer_.sigma_sq);
  r.energy = r.gaussian_term - r.feature_term;
  return r;
}

Image GenerativeModel::grad_image(const Image& img) const {
  BackwardOptions opts;
  opts.force_top_activation_on = force_on_;
  Image g = backward_image(composed_, img,
                           ones_cotangent(composed_, img.height, img.width),
                           opts);
  for (double& v : g.data) v = -v;
  for (std::size_t i = 0; i < img.size(); ++i)
    g.data[i] += img.data[i] / layer_.sigma_sq;
  return g;
}

DetectorMap detect(const GenerativeLayer& layer,
                   const FeatureStack& base_stack) {
  layer.validate();
  const int base_k = layer.base->top_channels();
  if (base_stack.maps != base_k)
    throw GeometryError("base stack filter count does not match layer");
  if (base_stack.height < layer.kh || base_stack.width < layer.kw)
    throw GeometryError("base stack smaller than expert window");
  DetectorMap map;
  map.n_experts = layer.n_experts;
  map.height = base_stack.height - layer.kh + 1;
  map.width = base_stack.width - layer.kw + 1;
  map.on.assign(static_cast<std::size_t>(map.n_experts) * map.height *
                    map.width,
                0);
  std::size_t idx = 0;
  for (int j = 0; j < layer.n_experts; ++j) {
    for (int y = 0; y < map.height; ++y) {
      for (int x = 0; x < map.width; ++x, ++idx) {
        double pre = layer.bias[j];
        for (int k = 0; k < base_k; ++k)
          for (int dy = 0; dy < layer.kh; ++dy)
            for (int dx = 0; dx < layer.kw; ++dx)
              pre += layer.weight_at(j, k, dy, dx) *
                     base_stack.at(k, y + dy, x + dx);
        map.on[idx] = pre > 0.0 ? 1 : 0;
      }
    }
  }
  return map;
}

namespace {

void accumulate_detected(const GenerativeLayer& layer, const Image& img,
                         double scale, GenerativeGrads* grads) {
  const FeatureStack base_stack = forward(*layer.base, img);
  const DetectorMap map = detect(layer, base_stack);
  const int base_k = layer.base->top_channels();
  for (int j = 0; j < layer.n_experts; ++j) {
    for (int y = 0; y < map.height; ++y) {
      for (int x = 0; x < map.width; ++x) {
        if (!map.at(j, y, x)) continue;
        grads->bias[j] += scale;
        for (int k = 0; k < base_k; ++k)
          for (int dy = 0; dy < layer.kh; ++dy)
            for (int dx = 0; dx < layer.kw; ++dx)
              grads->weights[((static_cast<std::size_t>(j) * base_k + k) *
                                  layer.kh +
                              dy) *
                                 layer.kw +
                             dx] +=
                  scale * base_stack.at(k, y + dy, x + dx);
      }
    }
  }
}

}  // namespace

GenerativeGrads grad_generative_layer(const GenerativeLayer& layer,
                                      const std::vector<Image>& observed,
                                      const std::vector<Image>& synthesized) {
  layer.validate();
  if (observed.empty()) throw InvalidArgument("need >= 1 observed image");
  GenerativeGrads grads;
  grads.weights.assign(layer.weights.size(), 0.0);
  grads.bias.assign(layer.bias.size(), 0.0);
  const double obs_scale = 1.0 / static_cast<double>(observed.size());
  for (const Image& img : observed)
    accumulate_detected(layer, img, obs_scale, &grads);
  if (!synthesized.empty()) {
    const double syn_scale = -1.0 / static_cast<double>(synthesized.size());
    for (const Image& img : synthesized)
      accumulate_detected(layer, img, syn_scale, &grads);
  }
  return grads;
}

double bias_from_alpha(double alpha, double log_z) {
  if (!(alpha > 0.0) || !(alpha < 1.0))
    throw InvalidArgument("alpha must lie in (0, 1)");
  return std::log(alpha / (1.0 - alpha)) - log_z;
}

namespace {

struct LayerGradSet {
  BankGrads per_layer;  // over the composed bank

  void zero_like(const FilterBank& composed) {
    per_layer.assign(composed.layers.size(), {});
    for (std::size_t li = 0; li < composed.layers.size(); ++li) {
      per_layer[li].kernels.assign(composed.layers[li].kernel_count(), 0.0);
      per_layer[li].bias.assign(composed.layers[li].out_channels, 0.0);
    }
  }
  void add_scaled(const BankGrads& other, double scale) {
    for (std::size_t li = 0; li < per_layer.size(); ++li) {
      for (std::size_t i = 0; i < per_layer[li].kernels.size(); ++i)
        per_layer[li].kernels[i] += scale * other[li].kernels[i];
      for (std::size_t i = 0; i < per_layer[li].bias.size(); ++i)
        per_layer[li].bias[i] += scale * other[li].bias[i];
    }
  }
  void scale_all(double s) {
    for (auto& g : per_layer) {
      for (double& v : g.kernels) v *= s;
      for (double& v : g.bias) v *= s;
    }
  }
};

void reinit_noise(ChainState& chains, double sigma_sq) {
  const double sigma = std::sqrt(sigma_sq);
  for (std::size_t m = 0; m < chains.images.size(); ++m)
    for (double& v : chains.images[m].data)
      v = sigma * chains.streams[m].normal();
}

LayerFitResult run_layer_fit(GenerativeLayer layer,
                             const std::vector<Image>& images,
                             const LearnConfig& config,
                             std::vector<bool> trainable, bool learn_bias,
                             bool force_on, const IterCallback& on_iteration) {
  config.validate();
  layer.validate();
  if (images.empty()) throw InvalidArgument("need >= 1 training image");
  const Image& first = images.front();
  for (const Image& img : images)
    if (!img.same_shape(first))
      throw GeometryError("training images must share geometry");
  const std::size_t n_layers = layer.base->layers.size() + 1;
  if (trainable.empty()) trainable.assign(n_layers, true);
  if (trainable.size() != n_layers)
    throw InvalidArgument("trainable mask size must be base layers + 1");

  BackwardOptions bopts;
  bopts.force_top_activation_on = force_on;

  LayerFitResult res{std::move(layer),
                     init_chains(ChainInit::zero, config.n_chains,
                                 first.height, first.width, first.channels,
                                 config.sigma_sq, config.master_seed),
                     {},
                     FitStatus::max_iterations,
                     ""};

  for (int t = 0; t < config.iterations; ++t) {
    const FilterBank composed = compose(res.layer);
    const FeatureStack ones =
        ones_cotangent(composed, first.height, first.width);
    GenerativeModel model(res.layer, first.height, first.width, force_on);

    if (config.start == StartMode::cold)
      reinit_noise(res.chains, config.sigma_sq);
    run_chains(res.chains, model, config.epsilon, config.langevin_steps,
               config.threads);
    for (const Image& img : res.chains.images) {
      if (!all_finite(img.data)) {
        res.status = FitStatus::diverged;
        res.message = "chain image became non-finite at iteration " +
                      std::to_string(t);
        return res;
      }
    }

    LayerGradSet obs, syn;
    obs.zero_like(composed);
    syn.zero_like(composed);
    for (const Image& img : images)
      obs.add_scaled(backward_weights(composed, img, ones, bopts), 1.0);
    obs.scale_all(1.0 / static_cast<double>(images.size()));
    for (const Image& img : res.chains.images)
      syn.add_scaled(backward_weights(composed, img, ones, bopts), 1.0);
    syn.scale_all(1.0 / static_cast<double>(res.chains.images.size()));

    const double gamma_t = gamma_at(config, t);
    double max_abs = 0.0;
    bool finite = true;
    FilterBank base_copy = *res.layer.base;
    for (std::size_t li = 0; li < n_layers; ++li) {
      if (!trainable[li]) continue;
      const bool is_top = li == n_layers - 1;
      std::vector<double>& kernels =
          is_top ? res.layer.weights : base_copy.layers[li].kernels;
      std::vector<double>& biases =
          is_top ? res.layer.bias : base_copy.layers[li].bias;
      for (std::size_t i = 0; i < kernels.size(); ++i) {
        const double d =
            obs.per_layer[li].kernels[i] - syn.per_layer[li].kernels[i];
        max_abs = std::max(max_abs, std::fabs(d));
        kernels[i] += gamma_t * d;
        finite = finite && std::isfinite(kernels[i]);
      }
      if (!is_top || learn_bias) {
        for (std::size_t i = 0; i < biases.size(); ++i) {
          const double d =
              obs.per_layer[li].bias[i] - syn.per_layer[li].bias[i];
          max_abs = std::max(max_abs, std::fabs(d));
          biases[i] += gamma_t * d;
          finite = finite && std::isfinite(biases[i]);
        }
      }
    }
    res.layer.base = std::make_shared<const FilterBank>(std::move(base_copy));
    if (!finite || !all_finite(res.layer.weights)) {
      res.status = FitStatus::diverged;
      res.message =
          "weights became non-finite at iteration " + std::to_string(t);
      return res;
    }

    double mean_energy = 0.0;
    for (const Image& img : res.chains.images)
      mean_energy += model.energy(img).energy;
    mean_energy /= static_cast<double>(res.chains.images.size());
    res.log.push_back({t, max_abs, mean_energy, gamma_t});
    if (on_iteration) on_iteration(t, res.chains);
    if (config.tol > 0.0 && max_abs <= config.tol) {
      res.status = FitStatus::converged;
      return res;
    }
  }
  res.status = FitStatus::max_iterations;
  return res;
}

}  // namespace

LayerFitResult fit_layer(std::shared_ptr<const FilterBank> base,
                         const std::vector<Image>& images, int n_experts,
                         int window_h, int window_w, const LearnConfig& config,
                         const LayerFitOptions& opts,
                         const IterCallback& on_iteration) {
  if (!base) throw InvalidArgument("fit_layer needs a base bank");
  if (images.empty()) throw InvalidArgument("need >= 1 training image");
  GenerativeLayer layer;
  layer.base = std::move(base);
  layer.n_experts = n_experts;
  layer.kh = window_h;
  layer.kw = window_w;
  layer.sigma_sq = config.sigma_sq;
  const std::size_t n_weights = static_cast<std::size_t>(n_experts) *
                                layer.base->top_channels() * window_h *
                                window_w;
  layer.weights.resize(n_weights);
  // Small random init to break expert symmetry (w = 0 keeps all experts
  // identical forever).
  PhiloxStream rng(config.master_seed, 0x67656e);
  for (double& v : layer.weights)
    v = opts.init_scale * (2.0 * rng.uniform() - 1.0);
  layer.bias.assign(n_experts, 0.0);
  // Bias init from the activation-quantile rule: the configured fraction of
  // observed pre-activations starts positive.
  std::vector<std::vector<double>> scores(n_experts);
  for (const Image& img : images) {
    const FeatureStack stack = forward(*layer.base, img);
    if (stack.height < window_h || stack.width < window_w)
      throw GeometryError("expert window larger than base feature map");
    const int hy = stack.height - window_h + 1;
    const int wx = stack.width - window_w + 1;
    for (int j = 0; j < n_experts; ++j) {
      for (int y = 0; y < hy; ++y) {
        for (int x = 0; x < wx; ++x) {
          double s = 0.0;
          for (int k = 0; k < stack.maps; ++k)
            for (int dy = 0; dy < window_h; ++dy)
              for (int dx = 0; dx < window_w; ++dx)
                s += layer.weight_at(j, k, dy, dx) *
                     stack.at(k, y + dy, x + dx);
          scores[j].push_back(s);
        }
      }
    }
  }
  for (int j = 0; j < n_experts; ++j) {
    std::sort(scores[j].begin(), scores[j].end());
    const double q = 1.0 - opts.bias_quantile;
    const std::size_t idx = static_cast<std::size_t>(
        q * static_cast<double>(scores[j].size() - 1));
    layer.bias[j] = -scores[j][idx];
  }

  std::vector<bool> trainable(layer.base->layers.size() + 1, false);
  trainable.back() = true;
  return run_layer_fit(std::move(layer), images, config, std::move(trainable),
                       opts.learn_bias, opts.force_detectors_on, on_iteration);
}

LayerFitResult refine_all_layers(const GenerativeLayer& start,
                                 const std::vector<Image>& images,
                                 const LearnConfig& config,
                                 const RefineOptions& opts,
                                 const IterCallback& on_iteration) {
  return run_layer_fit(start, images, config, opts.trainable, opts.learn_bias,
                       opts.force_detectors_on, on_iteration);
}

}  // namespace frame
