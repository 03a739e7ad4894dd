#include "frame/filter_bank.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>

#include "frame/errors.hpp"
#include "frame/rng.hpp"

namespace frame {
namespace {

// Channels-first working grid for layer inputs/outputs.
struct Grid {
  int c = 0, h = 0, w = 0;
  std::vector<double> v;

  Grid() = default;
  Grid(int c_, int h_, int w_, double value = 0.0)
      : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * h_ * w_, value) {}
  double& at(int ch, int y, int x) {
    return v[(static_cast<std::size_t>(ch) * h + y) * w + x];
  }
  double at(int ch, int y, int x) const {
    return v[(static_cast<std::size_t>(ch) * h + y) * w + x];
  }
};

int pad_of(const ConvLayer& l, bool horizontal) {
  if (l.padding == Padding::valid) return 0;
  return ((horizontal ? l.kw : l.kh) - 1) / 2;
}

void conv_out_dims(const ConvLayer& l, int h, int w, int* oh, int* ow) {
  if (l.padding == Padding::valid) {
    if (h < l.kh || w < l.kw)
      throw GeometryError("input smaller than receptive field in valid mode");
    *oh = (h - l.kh) / l.stride + 1;
    *ow = (w - l.kw) / l.stride + 1;
  } else {
    *oh = (h - 1) / l.stride + 1;
    *ow = (w - 1) / l.stride + 1;
  }
}

void pool_out_dims(const PoolSpec& p, int h, int w, int* oh, int* ow) {
  if (h < p.window || w < p.window)
    throw GeometryError("feature map smaller than pooling window");
  *oh = (h - p.window) / p.stride + 1;
  *ow = (w - p.window) / p.stride + 1;
}

double activate(Activation a, double r) {
  switch (a) {
    case Activation::identity:
      return r;
    case Activation::relu:
      return r > 0.0 ? r : 0.0;
    case Activation::abs:
      return std::fabs(r);
  }
  return r;
}

// Subgradient convention: h'(0) = 0 for both relu and abs.
double activation_deriv(Activation a, double pre) {
  switch (a) {
    case Activation::identity:
      return 1.0;
    case Activation::relu:
      return pre > 0.0 ? 1.0 : 0.0;
    case Activation::abs:
      return pre > 0.0 ? 1.0 : (pre < 0.0 ? -1.0 : 0.0);
  }
  return 1.0;
}

struct LayerTrace {
  Grid pre;                 // pre-activation conv output
  Grid act;                 // after activation
  Grid out;                 // after pooling (== act when no pool)
  std::vector<int> argmax;  // per pooled element, flat index into act
};

Grid image_to_grid(const Image& img) {
  Grid g(img.channels, img.height, img.width);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) g.at(c, y, x) = img.at(y, x, c);
  return g;
}

void conv_forward(const ConvLayer& l, const Grid& in, Grid* pre) {
  int oh, ow;
  conv_out_dims(l, in.h, in.w, &oh, &ow);
  *pre = Grid(l.out_channels, oh, ow);
  const int py = pad_of(l, false), px = pad_of(l, true);
  for (int o = 0; o < l.out_channels; ++o) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        double acc = l.bias[o];
        for (int i = 0; i < l.in_channels; ++i) {
          for (int ky = 0; ky < l.kh; ++ky) {
            int iy = y * l.stride + ky - py;
            if (l.padding == Padding::circular)
              iy = ((iy % in.h) + in.h) % in.h;
            else if (iy < 0 || iy >= in.h)
              continue;
            for (int kx = 0; kx < l.kw; ++kx) {
              int ix = x * l.stride + kx - px;
              if (l.padding == Padding::circular)
                ix = ((ix % in.w) + in.w) % in.w;
              else if (ix < 0 || ix >= in.w)
                continue;
              acc += l.kernel_at(o, i, ky, kx) * in.at(i, iy, ix);
            }
          }
        }
        pre->at(o, y, x) = acc;
      }
    }
  }
}

LayerTrace layer_forward(const ConvLayer& l, const Grid& in) {
  LayerTrace t;
  conv_forward(l, in, &t.pre);
  t.act = Grid(t.pre.c, t.pre.h, t.pre.w);
  for (std::size_t i = 0; i < t.pre.v.size(); ++i)
    t.act.v[i] = activate(l.activation, t.pre.v[i]);
  if (l.pool) {
    int ph, pw;
    pool_out_dims(*l.pool, t.act.h, t.act.w, &ph, &pw);
    t.out = Grid(t.act.c, ph, pw);
    t.argmax.resize(t.out.v.size());
    std::size_t idx = 0;
    for (int c = 0; c < t.act.c; ++c) {
      for (int y = 0; y < ph; ++y) {
        for (int x = 0; x < pw; ++x) {
          double best = -std::numeric_limits<double>::infinity();
          int best_flat = -1;
          for (int wy = 0; wy < l.pool->window; ++wy) {
            for (int wx = 0; wx < l.pool->window; ++wx) {
              const int ay = y * l.pool->stride + wy;
              const int ax = x * l.pool->stride + wx;
              const double v = t.act.at(c, ay, ax);
              if (v > best) {  // strict: first maximum wins on ties
                best = v;
                best_flat = (c * t.act.h + ay) * t.act.w + ax;
              }
            }
          }
          t.out.at(c, y, x) = best;
          t.argmax[idx++] = best_flat;
        }
      }
    }
  } else {
    t.out = t.act;
  }
  return t;
}

std::vector<LayerTrace> forward_all(const FilterBank& bank, const Image& img,
                                    Grid* input0) {
  bank.validate();
  if (img.channels != bank.input_channels)
    throw GeometryError("image channels do not match bank input channels");
  *input0 = image_to_grid(img);
  std::vector<LayerTrace> traces;
  traces.reserve(bank.layers.size());
  const Grid* cur = input0;
  for (const ConvLayer& l : bank.layers) {
    traces.push_back(layer_forward(l, *cur));
    cur = &traces.back().out;
  }
  return traces;
}

FeatureStack stack_from_grid(const FilterBank& bank, const Grid& g) {
  FeatureStack s(g.c, g.h, g.w);
  s.data = g.v;
  if (!bank.layers.empty()) {
    const Activation top = bank.layers.back().activation;
    s.rectified = top == Activation::relu || top == Activation::abs;
  }
  int stride = 1, off_y = 0, off_x = 0;
  for (const ConvLayer& l : bank.layers) {
    off_y -= pad_of(l, false) * stride;
    off_x -= pad_of(l, true) * stride;
    stride *= l.stride;
    if (l.pool) stride *= l.pool->stride;
  }
  s.stride = stride;
  s.offset_y = off_y;
  s.offset_x = off_x;
  return s;
}

}  // namespace

void FilterBank::validate() const {
  int ch = input_channels;
  if (ch != 1 && ch != 3)
    throw GeometryError("bank input_channels must be 1 or 3");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const ConvLayer& l = layers[i];
    if (l.in_channels != ch)
      throw GeometryError("layer " + std::to_string(i) +
                          ": in_channels breaks channel chaining");
    if (l.out_channels < 0 || l.kh < 1 || l.kw < 1 || l.stride < 1)
      throw GeometryError("layer " + std::to_string(i) + ": bad geometry");
    if (l.kernels.size() != l.kernel_count() ||
        l.bias.size() != static_cast<std::size_t>(l.out_channels))
      throw GeometryError("layer " + std::to_string(i) +
                          ": kernel/bias storage size mismatch");
    if (l.pool && (l.pool->window < 1 || l.pool->stride < 1))
      throw GeometryError("layer " + std::to_string(i) + ": bad pool spec");
    ch = l.out_channels;
  }
}

FeatureStack output_geometry(const FilterBank& bank, int img_h, int img_w) {
  bank.validate();
  int c = bank.input_channels, h = img_h, w = img_w;
  for (const ConvLayer& l : bank.layers) {
    int oh, ow;
    conv_out_dims(l, h, w, &oh, &ow);
    h = oh;
    w = ow;
    if (l.pool) {
      pool_out_dims(*l.pool, h, w, &oh, &ow);
      h = oh;
      w = ow;
    }
    c = l.out_channels;
  }
  return stack_from_grid(bank, Grid(c, h, w));
}

FeatureStack forward(const FilterBank& bank, const Image& img) {
  Grid input0;
  const auto traces = forward_all(bank, img, &input0);
  const Grid& top = traces.empty() ? input0 : traces.back().out;
  return stack_from_grid(bank, top);
}

BackwardResult backward(const FilterBank& bank, const Image& img,
                        const FeatureStack& cotangent, bool want_image,
                        bool want_weights, const BackwardOptions& opts) {
  Grid input0;
  const auto traces = forward_all(bank, img, &input0);
  const Grid& top = traces.empty() ? input0 : traces.back().out;
  if (cotangent.maps != top.c || cotangent.height != top.h ||
      cotangent.width != top.w)
    throw GeometryError("cotangent geometry does not match forward output");

  BackwardResult res;
  res.weight_grads.resize(bank.layers.size());

  Grid cot(top.c, top.h, top.w);
  cot.v = cotangent.data;

  for (int li = static_cast<int>(bank.layers.size()) - 1; li >= 0; --li) {
    const ConvLayer& l = bank.layers[li];
    const LayerTrace& t = traces[li];
    const Grid& in = li == 0 ? input0 : traces[li - 1].out;

    // Unpool: route each pooled cotangent to the recorded argmax.
    Grid cot_act(t.act.c, t.act.h, t.act.w);
    if (l.pool) {
      for (std::size_t i = 0; i < cot.v.size(); ++i)
        cot_act.v[t.argmax[i]] += cot.v[i];
    } else {
      cot_act = cot;
    }

    // Activation derivative.
    Grid cot_pre(t.pre.c, t.pre.h, t.pre.w);
    const bool force_on =
        opts.force_top_activation_on &&
        li == static_cast<int>(bank.layers.size()) - 1;
    for (std::size_t i = 0; i < cot_pre.v.size(); ++i)
      cot_pre.v[i] =
          cot_act.v[i] *
          (force_on ? 1.0 : activation_deriv(l.activation, t.pre.v[i]));

    // Convolution adjoint: kernel/bias grads and input cotangent.
    LayerGrads& g = res.weight_grads[li];
    if (want_weights) {
      g.kernels.assign(l.kernel_count(), 0.0);
      g.bias.assign(l.out_channels, 0.0);
    }
    Grid cot_in(in.c, in.h, in.w);
    const bool need_input_cot = want_image || li > 0;
    const int py = pad_of(l, false), px = pad_of(l, true);
    for (int o = 0; o < l.out_channels; ++o) {
      for (int y = 0; y < cot_pre.h; ++y) {
        for (int x = 0; x < cot_pre.w; ++x) {
          const double cv = cot_pre.at(o, y, x);
          if (cv == 0.0) continue;
          if (want_weights) g.bias[o] += cv;
          for (int i = 0; i < l.in_channels; ++i) {
            for (int ky = 0; ky < l.kh; ++ky) {
              int iy = y * l.stride + ky - py;
              if (l.padding == Padding::circular)
                iy = ((iy % in.h) + in.h) % in.h;
              else if (iy < 0 || iy >= in.h)
                continue;
              for (int kx = 0; kx < l.kw; ++kx) {
                int ix = x * l.stride + kx - px;
                if (l.padding == Padding::circular)
                  ix = ((ix % in.w) + in.w) % in.w;
                else if (ix < 0 || ix >= in.w)
                  continue;
                if (want_weights)
                  g.kernels[((static_cast<std::size_t>(o) * l.in_channels +
                              i) *
                                 l.kh +
                             ky) *
                                l.kw +
                            kx] += cv * in.at(i, iy, ix);
                if (need_input_cot)
                  cot_in.at(i, iy, ix) += cv * l.kernel_at(o, i, ky, kx);
              }
            }
          }
        }
      }
    }
    cot = std::move(cot_in);
  }

  if (want_image) {
    res.image_grad = Image(img.height, img.width, img.channels);
    for (int c = 0; c < img.channels; ++c)
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
          res.image_grad.at(y, x, c) = cot.at(c, y, x);
  }
  return res;
}

Image backward_image(const FilterBank& bank, const Image& img,
                     const FeatureStack& cotangent,
                     const BackwardOptions& opts) {
  return backward(bank, img, cotangent, true, false, opts).image_grad;
}

BankGrads backward_weights(const FilterBank& bank, const Image& img,
                           const FeatureStack& cotangent,
                           const BackwardOptions& opts) {
  return backward(bank, img, cotangent, false, true, opts).weight_grads;
}

namespace {

void l2_normalize(std::vector<double>& k) {
  double n = 0.0;
  for (double v : k) n += v * v;
  n = std::sqrt(n);
  if (n > 0.0)
    for (double& v : k) v /= n;
}

}  // namespace

FilterBank make_gabor_bank(const std::vector<double>& scales,
                           int orientations) {
  if (scales.empty()) throw InvalidArgument("gabor bank needs >= 1 scale");
  if (orientations < 1)
    throw InvalidArgument("gabor bank needs >= 1 orientation");
  FilterBank bank;
  bank.input_channels = 1;
  ConvLayer layer;
  layer.in_channels = 1;
  layer.stride = 1;
  layer.padding = Padding::zero;
  layer.activation = Activation::abs;

  // Wavelength 2*scale, envelope sigma = scale, aspect ratio 0.5.
  int max_half = 0;
  for (double s : scales)
    max_half = std::max(max_half, static_cast<int>(std::ceil(2.5 * s)));
  layer.kh = layer.kw = 2 * max_half + 1;

  for (double s : scales) {
    for (int oi = 0; oi < orientations; ++oi) {
      const double theta = std::numbers::pi * oi / orientations;
      const double lambda = 2.0 * s;
      const double sigma = s;
      const double gamma = 0.5;
      for (int phase = 0; phase < 2; ++phase) {
        std::vector<double> k(static_cast<std::size_t>(layer.kh) * layer.kw);
        std::size_t idx = 0;
        for (int y = -max_half; y <= max_half; ++y) {
          for (int x = -max_half; x <= max_half; ++x) {
            const double xr = x * std::cos(theta) + y * std::sin(theta);
            const double yr = -x * std::sin(theta) + y * std::cos(theta);
            const double env = std::exp(
                -(xr * xr + gamma * gamma * yr * yr) / (2.0 * sigma * sigma));
            const double carrier =
                phase == 0 ? std::cos(2.0 * std::numbers::pi * xr / lambda)
                           : std::sin(2.0 * std::numbers::pi * xr / lambda);
            k[idx++] = env * carrier;
          }
        }
        l2_normalize(k);
        layer.kernels.insert(layer.kernels.end(), k.begin(), k.end());
        layer.bias.push_back(0.0);
        ++layer.out_channels;
      }
    }
  }
  bank.layers.push_back(std::move(layer));
  bank.validate();
  return bank;
}

FilterBank make_dog_bank(const std::vector<int>& sizes) {
  if (sizes.empty()) throw InvalidArgument("dog bank needs >= 1 size");
  FilterBank bank;
  bank.input_channels = 1;
  ConvLayer layer;
  layer.in_channels = 1;
  layer.stride = 1;
  layer.padding = Padding::zero;
  layer.activation = Activation::abs;

  int max_half = 0;
  for (int n : sizes) {
    if (n < 3 || n % 2 == 0)
      throw InvalidArgument("dog sizes must be odd and >= 3");
    max_half = std::max(max_half, (n - 1) / 2);
  }
  layer.kh = layer.kw = 2 * max_half + 1;

  for (int n : sizes) {
    const int half = (n - 1) / 2;
    const double s1 = half / 2.5;
    const double s2 = 1.6 * s1;
    std::vector<double> k(static_cast<std::size_t>(layer.kh) * layer.kw, 0.0);
    double sum = 0.0;
    std::size_t count = 0;
    std::size_t idx = 0;
    for (int y = -max_half; y <= max_half; ++y) {
      for (int x = -max_half; x <= max_half; ++x, ++idx) {
        if (std::abs(y) > half || std::abs(x) > half) continue;
        const double r2 = static_cast<double>(x * x + y * y);
        const double g1 =
            std::exp(-r2 / (2.0 * s1 * s1)) / (2.0 * std::numbers::pi * s1 * s1);
        const double g2 =
            std::exp(-r2 / (2.0 * s2 * s2)) / (2.0 * std::numbers::pi * s2 * s2);
        k[idx] = g1 - g2;
        sum += k[idx];
        ++count;
      }
    }
    // Force the center-surround kernel to exact zero sum.
    const double mean = sum / static_cast<double>(count);
    idx = 0;
    for (int y = -max_half; y <= max_half; ++y)
      for (int x = -max_half; x <= max_half; ++x, ++idx)
        if (std::abs(y) <= half && std::abs(x) <= half) k[idx] -= mean;
    l2_normalize(k);
    layer.kernels.insert(layer.kernels.end(), k.begin(), k.end());
    layer.bias.push_back(0.0);
    ++layer.out_channels;
  }
  bank.layers.push_back(std::move(layer));
  bank.validate();
  return bank;
}

FilterBank make_random_bank(int in_channels, int filters, int ksize,
                            std::uint64_t seed, Activation act, Padding pad) {
  if (filters < 1 || ksize < 1)
    throw InvalidArgument("random bank needs filters >= 1, ksize >= 1");
  FilterBank bank;
  bank.input_channels = in_channels;
  ConvLayer layer;
  layer.in_channels = in_channels;
  layer.out_channels = filters;
  layer.kh = layer.kw = ksize;
  layer.stride = 1;
  layer.padding = pad;
  layer.activation = act;
  PhiloxStream rng(seed, 0);
  layer.kernels.resize(layer.kernel_count());
  for (double& v : layer.kernels)
    v = rng.normal() / std::sqrt(static_cast<double>(in_channels) * ksize *
                                 ksize);
  layer.bias.assign(filters, 0.0);
  bank.layers.push_back(std::move(layer));
  bank.validate();
  return bank;
}

namespace {

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v));
  out.push_back(static_cast<unsigned char>(v >> 8));
  out.push_back(static_cast<unsigned char>(v >> 16));
  out.push_back(static_cast<unsigned char>(v >> 24));
}

void put_f32(std::vector<unsigned char>& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

struct Reader {
  const unsigned char* p;
  std::size_t left;
  std::uint32_t u32() {
    if (left < 4) throw FormatError("FBK1: truncated payload");
    std::uint32_t v = static_cast<std::uint32_t>(p[0]) |
                      (static_cast<std::uint32_t>(p[1]) << 8) |
                      (static_cast<std::uint32_t>(p[2]) << 16) |
                      (static_cast<std::uint32_t>(p[3]) << 24);
    p += 4;
    left -= 4;
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }
};

constexpr std::uint32_t kLayerTypeConv = 0;

}  // namespace

std::vector<unsigned char> serialize_bank(const FilterBank& bank) {
  bank.validate();
  std::vector<unsigned char> out;
  out.insert(out.end(), {'F', 'B', 'K', '1'});
  put_u32(out, static_cast<std::uint32_t>(bank.input_channels));
  put_u32(out, static_cast<std::uint32_t>(bank.layers.size()));
  for (const ConvLayer& l : bank.layers) {
    put_u32(out, kLayerTypeConv);
    put_u32(out, static_cast<std::uint32_t>(l.out_channels));
    put_u32(out, static_cast<std::uint32_t>(l.in_channels));
    put_u32(out, static_cast<std::uint32_t>(l.kh));
    put_u32(out, static_cast<std::uint32_t>(l.kw));
    put_u32(out, static_cast<std::uint32_t>(l.stride));
    put_u32(out, static_cast<std::uint32_t>(l.padding));
    put_u32(out, static_cast<std::uint32_t>(l.activation));
    put_u32(out, l.pool ? 1u : 0u);
    put_u32(out, l.pool ? static_cast<std::uint32_t>(l.pool->window) : 0u);
    put_u32(out, l.pool ? static_cast<std::uint32_t>(l.pool->stride) : 0u);
    for (double v : l.kernels) put_f32(out, static_cast<float>(v));
    for (double v : l.bias) put_f32(out, static_cast<float>(v));
  }
  return out;
}

FilterBank deserialize_bank(const unsigned char* data, std::size_t size) {
  if (size < 4 || std::memcmp(data, "FBK1", 4) != 0)
    throw FormatError("FBK1: bad magic");
  Reader r{data + 4, size - 4};
  FilterBank bank;
  bank.input_channels = static_cast<int>(r.u32());
  const std::uint32_t n_layers = r.u32();
  for (std::uint32_t li = 0; li < n_layers; ++li) {
    if (r.u32() != kLayerTypeConv)
      throw FormatError("FBK1: unknown layer type code");
    ConvLayer l;
    l.out_channels = static_cast<int>(r.u32());
    l.in_channels = static_cast<int>(r.u32());
    l.kh = static_cast<int>(r.u32());
    l.kw = static_cast<int>(r.u32());
    l.stride = static_cast<int>(r.u32());
    const std::uint32_t pad = r.u32();
    if (pad > 2) throw FormatError("FBK1: bad padding code");
    l.padding = static_cast<Padding>(pad);
    const std::uint32_t act = r.u32();
    if (act > 2) throw FormatError("FBK1: bad activation code");
    l.activation = static_cast<Activation>(act);
    const std::uint32_t has_pool = r.u32();
    const std::uint32_t pw = r.u32();
    const std::uint32_t ps = r.u32();
    if (has_pool)
      l.pool = PoolSpec{static_cast<int>(pw), static_cast<int>(ps)};
    if (l.out_channels < 0 || l.in_channels < 1 || l.kh < 1 || l.kw < 1)
      throw FormatError("FBK1: bad layer geometry");
    l.kernels.resize(l.kernel_count());
    for (double& v : l.kernels) v = r.f32();
    l.bias.resize(l.out_channels);
    for (double& v : l.bias) v = r.f32();
    bank.layers.push_back(std::move(l));
  }
  try {
    bank.validate();
  } catch (const GeometryError& e) {
    throw FormatError(std::string("FBK1: inconsistent channel chaining: ") +
                      e.what());
  }
  return bank;
}

void save_bank(const FilterBank& bank, const std::string& path) {
  const auto bytes = serialize_bank(bank);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path);
}

FilterBank load_bank(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return deserialize_bank(bytes.data(), bytes.size());
}

}  // namespace frame
