#pragma once

#include <memory>
#include <vector>

#include "frame/filter_bank.hpp"
#include "frame/image.hpp"

namespace frame {

struct EnergyReport {
  double energy = 0.0;
  double feature_term = 0.0;
  double gaussian_term = 0.0;
};

// Anything a Langevin chain can sample from.
class EnergyModel {
 public:
  virtual ~EnergyModel() = default;
  virtual EnergyReport energy(const Image& img) const = 0;
  virtual Image grad_image(const Image& img) const = 0;
  virtual int image_height() const = 0;
  virtual int image_width() const = 0;
  virtual int image_channels() const = 0;
};

// Per-position weights w_{k,x} over the bank's top-layer geometry, with a
// Gaussian reference of variance sigma_sq.
class NonStationaryFrame : public EnergyModel {
 public:
  NonStationaryFrame(std::shared_ptr<const FilterBank> bank, int img_h,
                     int img_w, double sigma_sq);
  NonStationaryFrame(std::shared_ptr<const FilterBank> bank, int img_h,
                     int img_w, double sigma_sq, FeatureStack weights);

  const FilterBank& bank() const { return *bank_; }
  std::shared_ptr<const FilterBank> bank_ptr() const { return bank_; }
  const FeatureStack& weights() const { return weights_; }
  FeatureStack& mutable_weights() { return weights_; }
  double sigma_sq() const { return sigma_sq_; }

  EnergyReport energy(const Image& img) const override;
  Image grad_image(const Image& img) const override;
  int image_height() const override { return img_h_; }
  int image_width() const override { return img_w_; }
  int image_channels() const override { return bank_->input_channels; }

 private:
  std::shared_ptr<const FilterBank> bank_;
  int img_h_, img_w_;
  double sigma_sq_;
  FeatureStack weights_;
};

// One weight per filter, pooled across positions.
class StationaryFrame : public EnergyModel {
 public:
  StationaryFrame(std::shared_ptr<const FilterBank> bank, int img_h, int img_w,
                  double sigma_sq);
  StationaryFrame(std::shared_ptr<const FilterBank> bank, int img_h, int img_w,
                  double sigma_sq, std::vector<double> weights);

  const FilterBank& bank() const { return *bank_; }
  std::shared_ptr<const FilterBank> bank_ptr() const { return bank_; }
  const std::vector<double>& weights() const { return weights_; }
  std::vector<double>& mutable_weights() { return weights_; }
  double sigma_sq() const { return sigma_sq_; }

  EnergyReport energy(const Image& img) const override;
  Image grad_image(const Image& img) const override;
  int image_height() const override { return img_h_; }
  int image_width() const override { return img_w_; }
  int image_channels() const override { return bank_->input_channels; }

 private:
  std::shared_ptr<const FilterBank> bank_;
  int img_h_, img_w_;
  double sigma_sq_;
  std::vector<double> weights_;
};

EnergyReport energy(const NonStationaryFrame& model, const Image& img);
EnergyReport energy(const StationaryFrame& model, const Image& img);

Image grad_energy_image(const NonStationaryFrame& model, const Image& img);
Image grad_energy_image(const StationaryFrame& model, const Image& img);

// Unnormalized detection score sum_{k,x} w_{k,x} [F_k*I](x); log Z is not
// included.
double log_score(const NonStationaryFrame& model, const Image& img);

// Per-filter mean response over the feature map; bitwise invariant to
// position permutation (summed in sorted order).
std::vector<double> pooled_stats(const StationaryFrame& model,
                                 const Image& img);
std::vector<double> pooled_stats_of(const FeatureStack& stack);

}  // namespace frame
