#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace frame {

enum class NormalizePolicy {
  centered,  // byte v -> v/255 - 0.5
  raw,       // byte v -> v/255
};

// Real-valued H x W x C grid, row-major with channels last.
// mean_offset records the value subtracted at load so saving can round trip.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 1;
  double mean_offset = 0.0;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w, int c, double value = 0.0)
      : height(h),
        width(w),
        channels(c),
        data(static_cast<std::size_t>(h) * w * c, value) {}

  double& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  double at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::size_t size() const { return data.size(); }
  bool same_shape(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
};

// Reads an 8-bit grayscale/RGB PNG or binary PGM (P5).
Image load_image(const std::string& path,
                 NormalizePolicy policy = NormalizePolicy::centered);

// Writes PNG or PGM by extension; entries map back via
// (x + mean_offset) * 255, rounded half to even, clamped to [0, 255].
void save_image(const Image& img, const std::string& path);

// Sum of squared entries, invariant to pixel permutation (||I||^2 of the
// Gaussian reference).
double image_norm_sq(const Image& img);

// Circular translation by (dy, dx); shifted(y, x) = img(y - dy, x - dx).
Image circular_shift(const Image& img, int dy, int dx);

// Quantization used by save_image, exposed for tests.
unsigned char quantize_entry(double value, double mean_offset);

}  // namespace frame
