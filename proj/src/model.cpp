#include "frame/model.hpp"

#include <cmath>

#include "frame/errors.hpp"
#include "frame/numeric.hpp"

namespace frame {
namespace {

void check_sigma(double sigma_sq) {
  if (!(sigma_sq > 0.0) || !std::isfinite(sigma_sq))
    throw InvalidArgument("sigma_sq must be finite and > 0");
}

void check_finite(std::span<const double> w, const char* what) {
  if (!all_finite(w))
    throw InvalidArgument(std::string(what) + " contains non-finite entries");
}

Image add_gaussian_grad(Image grad, const Image& img, double sigma_sq) {
  for (std::size_t i = 0; i < img.size(); ++i)
    grad.data[i] += img.data[i] / sigma_sq;
  return grad;
}

}  // namespace

NonStationaryFrame::NonStationaryFrame(std::shared_ptr<const FilterBank> bank,
                                       int img_h, int img_w, double sigma_sq)
    : bank_(std::move(bank)), img_h_(img_h), img_w_(img_w),
      sigma_sq_(sigma_sq) {
  check_sigma(sigma_sq);
  weights_ = output_geometry(*bank_, img_h, img_w);
}

NonStationaryFrame::NonStationaryFrame(std::shared_ptr<const FilterBank> bank,
                                       int img_h, int img_w, double sigma_sq,
                                       FeatureStack weights)
    : bank_(std::move(bank)), img_h_(img_h), img_w_(img_w),
      sigma_sq_(sigma_sq), weights_(std::move(weights)) {
  check_sigma(sigma_sq);
  const FeatureStack geom = output_geometry(*bank_, img_h, img_w);
  if (!weights_.same_shape(geom))
    throw GeometryError("weight geometry does not match bank output");
  check_finite(weights_.data, "weights");
}

StationaryFrame::StationaryFrame(std::shared_ptr<const FilterBank> bank,
                                 int img_h, int img_w, double sigma_sq)
    : bank_(std::move(bank)), img_h_(img_h), img_w_(img_w),
      sigma_sq_(sigma_sq),
      weights_(static_cast<std::size_t>(bank_->top_channels()), 0.0) {
  check_sigma(sigma_sq);
}

StationaryFrame::StationaryFrame(std::shared_ptr<const FilterBank> bank,
                                 int img_h, int img_w, double sigma_sq,
                                 std::vector<double> weights)
    : bank_(std::move(bank)), img_h_(img_h), img_w_(img_w),
      sigma_sq_(sigma_sq), weights_(std::move(weights)) {
  check_sigma(sigma_sq);
  if (weights_.size() != static_cast<std::size_t>(bank_->top_channels()))
    throw GeometryError("weight count does not match bank filter count");
  check_finite(weights_, "weights");
}

EnergyReport NonStationaryFrame::energy(const Image& img) const {
  return frame::energy(*this, img);
}
Image NonStationaryFrame::grad_image(const Image& img) const {
  return grad_energy_image(*this, img);
}
EnergyReport StationaryFrame::energy(const Image& img) const {
  return frame::energy(*this, img);
}
Image StationaryFrame::grad_image(const Image& img) const {
  return grad_energy_image(*this, img);
}

EnergyReport energy(const NonStationaryFrame& model, const Image& img) {
  const FeatureStack stack = forward(model.bank(), img);
  if (!stack.same_shape(model.weights()))
    throw GeometryError("image geometry does not match model weights");
  double feature = 0.0;
  for (std::size_t i = 0; i < stack.size(); ++i)
    feature += model.weights().data[i] * stack.data[i];
  EnergyReport r;
  r.feature_term = feature;
  r.gaussian_term = image_norm_sq(img) / (2.0 * model.sigma_sq());
  r.energy = r.gaussian_term - r.feature_term;
  return r;
}

EnergyReport energy(const StationaryFrame& model, const Image& img) {
  const std::vector<double> sums = pooled_stats(model, img);
  // pooled_stats returns means; rescale to position sums for Eq.-style energy.
  const FeatureStack geom =
      output_geometry(model.bank(), img.height, img.width);
  const double area = static_cast<double>(geom.height) * geom.width;
  double feature = 0.0;
  for (std::size_t k = 0; k < sums.size(); ++k)
    feature += model.weights()[k] * (sums[k] * area);
  EnergyReport r;
  r.feature_term = feature;
  r.gaussian_term = image_norm_sq(img) / (2.0 * model.sigma_sq());
  r.energy = r.gaussian_term - r.feature_term;
  return r;
}

Image grad_energy_image(const NonStationaryFrame& model, const Image& img) {
  Image g = backward_image(model.bank(), img, model.weights());
  for (double& v : g.data) v = -v;
  return add_gaussian_grad(std::move(g), img, model.sigma_sq());
}

Image grad_energy_image(const StationaryFrame& model, const Image& img) {
  FeatureStack cot = output_geometry(model.bank(), img.height, img.width);
  for (int k = 0; k < cot.maps; ++k)
    for (int y = 0; y < cot.height; ++y)
      for (int x = 0; x < cot.width; ++x) cot.at(k, y, x) = model.weights()[k];
  Image g = backward_image(model.bank(), img, cot);
  for (double& v : g.data) v = -v;
  return add_gaussian_grad(std::move(g), img, model.sigma_sq());
}

double log_score(const NonStationaryFrame& model, const Image& img) {
  const FeatureStack stack = forward(model.bank(), img);
  if (!stack.same_shape(model.weights()))
    throw GeometryError("image geometry does not match model weights");
  double score = 0.0;
  for (std::size_t i = 0; i < stack.size(); ++i)
    score += model.weights().data[i] * stack.data[i];
  return score;
}

std::vector<double> pooled_stats_of(const FeatureStack& stack) {
  std::vector<double> out(stack.maps);
  const std::size_t area =
      static_cast<std::size_t>(stack.height) * stack.width;
  for (int k = 0; k < stack.maps; ++k) {
    std::vector<double> vals(stack.data.begin() + k * area,
                             stack.data.begin() + (k + 1) * area);
    out[k] = permutation_invariant_sum(std::move(vals)) /
             static_cast<double>(area);
  }
  return out;
}

std::vector<double> pooled_stats(const StationaryFrame& model,
                                 const Image& img) {
  return pooled_stats_of(forward(model.bank(), img));
}

}  // namespace frame
