#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "frame/image.hpp"

namespace frame {

enum class Padding : std::uint32_t { valid = 0, zero = 1, circular = 2 };
enum class Activation : std::uint32_t { identity = 0, relu = 1, abs = 2 };

struct PoolSpec {
  int window = 2;
  int stride = 2;
};

// One convolution layer: correlation with [out][in][kh][kw] kernels, bias,
// pointwise activation, optional max pooling.
struct ConvLayer {
  int out_channels = 0;
  int in_channels = 0;
  int kh = 0;
  int kw = 0;
  int stride = 1;
  Padding padding = Padding::valid;
  Activation activation = Activation::identity;
  std::optional<PoolSpec> pool;
  std::vector<double> kernels;  // [out][in][kh][kw] row-major
  std::vector<double> bias;     // [out]

  double& kernel_at(int o, int i, int y, int x) {
    return kernels[((static_cast<std::size_t>(o) * in_channels + i) * kh + y) *
                       kw +
                   x];
  }
  double kernel_at(int o, int i, int y, int x) const {
    return kernels[((static_cast<std::size_t>(o) * in_channels + i) * kh + y) *
                       kw +
                   x];
  }
  std::size_t kernel_count() const {
    return static_cast<std::size_t>(out_channels) * in_channels * kh * kw;
  }
};

// Top-layer responses [K][H'][W'] with the geometry mapping map coordinates
// back to image coordinates: image_y = stride * map_y + offset.
struct FeatureStack {
  int maps = 0;
  int height = 0;
  int width = 0;
  bool rectified = false;
  int stride = 1;
  int offset_y = 0;
  int offset_x = 0;
  std::vector<double> data;

  FeatureStack() = default;
  FeatureStack(int k, int h, int w, double value = 0.0)
      : maps(k),
        height(h),
        width(w),
        data(static_cast<std::size_t>(k) * h * w, value) {}

  double& at(int k, int y, int x) {
    return data[(static_cast<std::size_t>(k) * height + y) * width + x];
  }
  double at(int k, int y, int x) const {
    return data[(static_cast<std::size_t>(k) * height + y) * width + x];
  }
  std::size_t size() const { return data.size(); }
  bool same_shape(const FeatureStack& o) const {
    return maps == o.maps && height == o.height && width == o.width;
  }
};

struct FilterBank {
  int input_channels = 1;
  std::vector<ConvLayer> layers;

  // Throws GeometryError on broken channel chaining or bad layer fields.
  void validate() const;
  int top_channels() const {
    return layers.empty() ? input_channels : layers.back().out_channels;
  }
};

struct LayerGrads {
  std::vector<double> kernels;
  std::vector<double> bias;
};
using BankGrads = std::vector<LayerGrads>;

struct BackwardOptions {
  // Treats the top layer's activation derivative as 1 everywhere (detectors
  // forced on); used by the generative-layer reduction path.
  bool force_top_activation_on = false;
};

// Shape of the top-layer output for an input of the given size.
FeatureStack output_geometry(const FilterBank& bank, int img_h, int img_w);

FeatureStack forward(const FilterBank& bank, const Image& img);

// Gradient of <cotangent, forward(bank, img)> with respect to the image.
// relu/abs subgradient is 0 at pre-activation exactly 0; max-pool ties route
// to the first maximal element in row-major scan order.
Image backward_image(const FilterBank& bank, const Image& img,
                     const FeatureStack& cotangent,
                     const BackwardOptions& opts = {});

// Gradient of <cotangent, forward(bank, img)> with respect to every kernel
// entry and bias.
BankGrads backward_weights(const FilterBank& bank, const Image& img,
                           const FeatureStack& cotangent,
                           const BackwardOptions& opts = {});

// Both gradients from one backward sweep.
struct BackwardResult {
  Image image_grad;
  BankGrads weight_grads;
};
BackwardResult backward(const FilterBank& bank, const Image& img,
                        const FeatureStack& cotangent, bool want_image,
                        bool want_weights, const BackwardOptions& opts = {});

// One-layer bank of L2-normalized Gabor sine/cosine pairs per
// (scale, orientation); activation abs, zero padding.
FilterBank make_gabor_bank(const std::vector<double>& scales, int orientations);

// One-layer bank of zero-sum, L2-normalized center-surround kernels.
FilterBank make_dog_bank(const std::vector<int>& sizes);

FilterBank make_random_bank(int in_channels, int filters, int ksize,
                            std::uint64_t seed,
                            Activation act = Activation::relu,
                            Padding pad = Padding::zero);

// FBK1 container (little-endian f32 payload).
void save_bank(const FilterBank& bank, const std::string& path);
FilterBank load_bank(const std::string& path);

// In-memory form of the container, reused by the model checkpoint format.
std::vector<unsigned char> serialize_bank(const FilterBank& bank);
FilterBank deserialize_bank(const unsigned char* data, std::size_t size);

}  // namespace frame
