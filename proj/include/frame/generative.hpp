#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "frame/learner.hpp"
#include "frame/model.hpp"

namespace frame {

// A layer of J new relu experts over a base bank: the j-th expert responds
// with relu(sum_{k,x} w^(j)_{k,x} [F_k*I](y+x) + b_j) at every position y.
struct GenerativeLayer {
  std::shared_ptr<const FilterBank> base;
  int n_experts = 0;  // J
  int kh = 0, kw = 0; // window over the base feature map
  std::vector<double> weights;  // [J][K][kh][kw]
  std::vector<double> bias;     // [J]
  double sigma_sq = 1.0;

  double& weight_at(int j, int k, int y, int x) {
    const int base_k = base->top_channels();
    return weights[((static_cast<std::size_t>(j) * base_k + k) * kh + y) * kw +
                   x];
  }
  double weight_at(int j, int k, int y, int x) const {
    const int base_k = base->top_channels();
    return weights[((static_cast<std::size_t>(j) * base_k + k) * kh + y) * kw +
                   x];
  }
  void validate() const;
};

// The layer as an ordinary bank: base layers plus one relu conv layer
// (stride 1, valid padding). Learning and sampling go through this form.
FilterBank compose(const GenerativeLayer& layer);

// Product-of-experts density p(I) ~ exp(sum_{j,y} [F_j*I](y)) q(I) as an
// energy model for the Langevin sampler.
class GenerativeModel : public EnergyModel {
 public:
  GenerativeModel(GenerativeLayer layer, int img_h, int img_w,
                  bool force_detectors_on = false);

  const GenerativeLayer& layer() const { return layer_; }
  const FilterBank& composed() const { return composed_; }

  EnergyReport energy(const Image& img) const override;
  Image grad_image(const Image& img) const override;
  int image_height() const override { return img_h_; }
  int image_width() const override { return img_w_; }
  int image_channels() const override { return layer_.base->input_channels; }

 private:
  GenerativeLayer layer_;
  FilterBank composed_;
  int img_h_, img_w_;
  bool force_on_;
};

// Binary on/off detector map: delta_{j,y} = 1 iff the pre-activation of
// expert j at y is strictly positive. Flat [J][Hy][Wy], row-major.
struct DetectorMap {
  int n_experts = 0, height = 0, width = 0;
  std::vector<std::uint8_t> on;
  std::uint8_t at(int j, int y, int x) const {
    return on[(static_cast<std::size_t>(j) * height + y) * width + x];
  }
};

DetectorMap detect(const GenerativeLayer& layer, const FeatureStack& base_stack);

struct GenerativeGrads {
  std::vector<double> weights;  // [J][K][kh][kw]
  std::vector<double> bias;     // [J]
};

// Detector-gated likelihood gradient (observed term minus synthesized term),
// computed directly from the detector formula rather than by backprop.
GenerativeGrads grad_generative_layer(const GenerativeLayer& layer,
                                      const std::vector<Image>& observed,
                                      const std::vector<Image>& synthesized);

struct LayerFitOptions {
  double init_scale = 0.001;   // i.i.d. uniform weight init half-range
  bool learn_bias = true;
  double bias_quantile = 0.9;  // this fraction of observed pre-activations
                               // starts positive
  bool force_detectors_on = false;
};

struct LayerFitResult {
  GenerativeLayer layer;
  ChainState chains;
  std::vector<LearnLogRow> log;
  FitStatus status = FitStatus::max_iterations;
  std::string message;
};

LayerFitResult fit_layer(std::shared_ptr<const FilterBank> base,
                         const std::vector<Image>& images, int n_experts,
                         int window_h, int window_w, const LearnConfig& config,
                         const LayerFitOptions& opts = {},
                         const IterCallback& on_iteration = {});

struct RefineOptions {
  // One flag per base layer plus one for the expert layer (last entry).
  // Empty means all layers trainable.
  std::vector<bool> trainable;
  bool learn_bias = true;
  bool force_detectors_on = false;
};

// Joint ascent over every trainable layer of the composed bank (observed
// backprop term minus the chain-averaged synthesized term).
LayerFitResult refine_all_layers(const GenerativeLayer& start,
                                 const std::vector<Image>& images,
                                 const LearnConfig& config,
                                 const RefineOptions& opts = {},
                                 const IterCallback& on_iteration = {});

// b = log(alpha/(1-alpha)) - log Z.
double bias_from_alpha(double alpha, double log_z);

}  // namespace frame
