#include "frame/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "frame/errors.hpp"

namespace frame {
namespace {

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v));
  out.push_back(static_cast<unsigned char>(v >> 8));
  out.push_back(static_cast<unsigned char>(v >> 16));
  out.push_back(static_cast<unsigned char>(v >> 24));
}

void put_f64(std::vector<unsigned char>& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<unsigned char>(bits >> (8 * i)));
}

struct Reader {
  const unsigned char* p;
  std::size_t left;
  std::uint32_t u32() {
    if (left < 4) throw FormatError("FRM1: truncated payload");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    p += 4;
    left -= 4;
    return v;
  }
  double f64() {
    if (left < 8) throw FormatError("FRM1: truncated payload");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    p += 8;
    left -= 8;
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  }
};

std::vector<unsigned char> header(std::uint32_t kind, double sigma_sq,
                                  int img_h, int img_w) {
  std::vector<unsigned char> out;
  out.insert(out.end(), {'F', 'R', 'M', '1'});
  put_u32(out, kind);
  put_f64(out, sigma_sq);
  put_u32(out, static_cast<std::uint32_t>(img_h));
  put_u32(out, static_cast<std::uint32_t>(img_w));
  return out;
}

void append_bank(std::vector<unsigned char>& out, const FilterBank& bank) {
  const auto blob = serialize_bank(bank);
  put_u32(out, static_cast<std::uint32_t>(blob.size()));
  out.insert(out.end(), blob.begin(), blob.end());
}

}  // namespace

std::vector<unsigned char> serialize_checkpoint(const NonStationaryFrame& m) {
  auto out = header(0, m.sigma_sq(), m.image_height(), m.image_width());
  const FeatureStack& w = m.weights();
  put_u32(out, static_cast<std::uint32_t>(w.maps));
  put_u32(out, static_cast<std::uint32_t>(w.height));
  put_u32(out, static_cast<std::uint32_t>(w.width));
  for (double v : w.data) put_f64(out, v);
  append_bank(out, m.bank());
  return out;
}

std::vector<unsigned char> serialize_checkpoint(const StationaryFrame& m) {
  auto out = header(1, m.sigma_sq(), m.image_height(), m.image_width());
  put_u32(out, static_cast<std::uint32_t>(m.weights().size()));
  for (double v : m.weights()) put_f64(out, v);
  append_bank(out, m.bank());
  return out;
}

std::vector<unsigned char> serialize_checkpoint(const GenerativeLayer& layer,
                                                int img_h, int img_w) {
  layer.validate();
  auto out = header(2, layer.sigma_sq, img_h, img_w);
  put_u32(out, static_cast<std::uint32_t>(layer.n_experts));
  put_u32(out, static_cast<std::uint32_t>(layer.base->top_channels()));
  put_u32(out, static_cast<std::uint32_t>(layer.kh));
  put_u32(out, static_cast<std::uint32_t>(layer.kw));
  for (double v : layer.bias) put_f64(out, v);
  for (double v : layer.weights) put_f64(out, v);
  append_bank(out, *layer.base);
  return out;
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "FRM1", 4) != 0)
    throw FormatError("FRM1: bad magic");
  Reader r{bytes.data() + 4, bytes.size() - 4};
  LoadedCheckpoint cp;
  cp.kind = static_cast<int>(r.u32());
  cp.sigma_sq = r.f64();
  cp.img_h = static_cast<int>(r.u32());
  cp.img_w = static_cast<int>(r.u32());
  if (cp.kind == 0) {
    const int k = static_cast<int>(r.u32());
    const int h = static_cast<int>(r.u32());
    const int w = static_cast<int>(r.u32());
    FeatureStack weights(k, h, w);
    for (double& v : weights.data) v = r.f64();
    const std::uint32_t blob = r.u32();
    if (r.left < blob) throw FormatError("FRM1: truncated bank blob");
    auto bank = std::make_shared<const FilterBank>(
        deserialize_bank(r.p, blob));
    // Pull geometry flags from the bank so same_shape comparisons hold.
    FeatureStack geom = output_geometry(*bank, cp.img_h, cp.img_w);
    geom.data = weights.data;
    if (geom.maps != k || geom.height != h || geom.width != w)
      throw FormatError("FRM1: weight geometry does not match bank");
    cp.nonstationary.emplace(bank, cp.img_h, cp.img_w, cp.sigma_sq,
                             std::move(geom));
  } else if (cp.kind == 1) {
    const std::uint32_t k = r.u32();
    std::vector<double> weights(k);
    for (double& v : weights) v = r.f64();
    const std::uint32_t blob = r.u32();
    if (r.left < blob) throw FormatError("FRM1: truncated bank blob");
    auto bank = std::make_shared<const FilterBank>(
        deserialize_bank(r.p, blob));
    cp.stationary.emplace(bank, cp.img_h, cp.img_w, cp.sigma_sq,
                          std::move(weights));
  } else if (cp.kind == 2) {
    GenerativeLayer layer;
    layer.sigma_sq = cp.sigma_sq;
    layer.n_experts = static_cast<int>(r.u32());
    const int base_k = static_cast<int>(r.u32());
    layer.kh = static_cast<int>(r.u32());
    layer.kw = static_cast<int>(r.u32());
    if (layer.n_experts < 1 || base_k < 1 || layer.kh < 1 || layer.kw < 1)
      throw FormatError("FRM1: bad generative layer geometry");
    layer.bias.resize(layer.n_experts);
    for (double& v : layer.bias) v = r.f64();
    layer.weights.resize(static_cast<std::size_t>(layer.n_experts) * base_k *
                         layer.kh * layer.kw);
    for (double& v : layer.weights) v = r.f64();
    const std::uint32_t blob = r.u32();
    if (r.left < blob) throw FormatError("FRM1: truncated bank blob");
    layer.base =
        std::make_shared<const FilterBank>(deserialize_bank(r.p, blob));
    if (layer.base->top_channels() != base_k)
      throw FormatError("FRM1: bank filter count does not match layer");
    cp.generative = std::move(layer);
  } else {
    throw FormatError("FRM1: unknown model kind code");
  }
  return cp;
}

void save_checkpoint(const NonStationaryFrame& model,
                     const std::string& path) {
  atomic_write_file(path, serialize_checkpoint(model));
}
void save_checkpoint(const StationaryFrame& model, const std::string& path) {
  atomic_write_file(path, serialize_checkpoint(model));
}
void save_checkpoint(const GenerativeLayer& layer, int img_h, int img_w,
                     const std::string& path) {
  atomic_write_file(path, serialize_checkpoint(layer, img_h, img_w));
}

void atomic_write_file(const std::string& path,
                       const std::vector<unsigned char>& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

void atomic_write_text(const std::string& path, const std::string& text) {
  atomic_write_file(path,
                    std::vector<unsigned char>(text.begin(), text.end()));
}

}  // namespace frame
