#include "frame/image.hpp"

#include <png.h>

#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>

#include "frame/errors.hpp"
#include "frame/numeric.hpp"

namespace frame {
namespace {

bool has_suffix(const std::string& s, const std::string& suf) {
  if (s.size() < suf.size()) return false;
  std::string tail = s.substr(s.size() - suf.size());
  for (auto& ch : tail) ch = static_cast<char>(std::tolower(ch));
  return tail == suf;
}

Image from_bytes(const std::vector<unsigned char>& bytes, int h, int w, int c,
                 NormalizePolicy policy) {
  Image img(h, w, c);
  img.mean_offset = policy == NormalizePolicy::centered ? 0.5 : 0.0;
  for (std::size_t i = 0; i < bytes.size(); ++i)
    img.data[i] = bytes[i] / 255.0 - img.mean_offset;
  return img;
}

std::vector<unsigned char> to_bytes(const Image& img) {
  std::vector<unsigned char> bytes(img.size());
  for (std::size_t i = 0; i < img.size(); ++i)
    bytes[i] = quantize_entry(img.data[i], img.mean_offset);
  return bytes;
}

int read_pgm_token(std::istream& in) {
  // Skips whitespace and '#' comments between header tokens.
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
    } else if (!std::isspace(ch)) {
      in.unget();
      break;
    }
  }
  int value;
  if (!(in >> value)) throw FormatError("malformed PGM header");
  return value;
}

Image load_pgm(const std::string& path, NormalizePolicy policy) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char p, five;
  in.get(p);
  in.get(five);
  if (p != 'P' || five != '5') throw FormatError(path + ": not a binary PGM (P5)");
  const int w = read_pgm_token(in);
  const int h = read_pgm_token(in);
  const int maxval = read_pgm_token(in);
  if (maxval != 255)
    throw FormatError(path + ": unsupported PGM maxval (only 8-bit supported)");
  in.get();  // single whitespace byte before the raster
  std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h);
  in.read(reinterpret_cast<char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw FormatError(path + ": truncated PGM raster");
  return from_bytes(bytes, h, w, 1, policy);
}

void save_pgm(const Image& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  const auto bytes = to_bytes(img);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path);
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

Image load_png(const std::string& path, NormalizePolicy policy) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path);
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8))
    throw FormatError(path + ": not a PNG file");

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialization failed");
  }
  std::vector<unsigned char> raster;
  std::vector<png_bytep> rows;
  int h = 0, w = 0, c = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(path + ": corrupt PNG data");
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (depth != 8 || (color != PNG_COLOR_TYPE_GRAY && color != PNG_COLOR_TYPE_RGB)) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(path + ": unsupported PNG (need 8-bit grayscale or RGB)");
  }
  h = static_cast<int>(png_get_image_height(png, info));
  w = static_cast<int>(png_get_image_width(png, info));
  c = color == PNG_COLOR_TYPE_GRAY ? 1 : 3;
  raster.resize(static_cast<std::size_t>(h) * w * c);
  rows.resize(h);
  for (int y = 0; y < h; ++y)
    rows[y] = raster.data() + static_cast<std::size_t>(y) * w * c;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return from_bytes(raster, h, w, c, policy);
}

void save_png(const Image& img, const std::string& path) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot write " + path);
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG write failed for " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.width, img.height, 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const auto bytes = to_bytes(img);
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(
                           bytes.data() + static_cast<std::size_t>(y) *
                                              img.width * img.channels));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

unsigned char quantize_entry(double value, double mean_offset) {
  // nearbyint under the default rounding mode rounds half to even.
  double v = std::nearbyint((value + mean_offset) * 255.0);
  if (v < 0.0) v = 0.0;
  if (v > 255.0) v = 255.0;
  return static_cast<unsigned char>(v);
}

Image load_image(const std::string& path, NormalizePolicy policy) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path);
  if (has_suffix(path, ".pgm")) return load_pgm(path, policy);
  if (has_suffix(path, ".png")) return load_png(path, policy);
  throw FormatError(path + ": unsupported image extension (png/pgm only)");
}

void save_image(const Image& img, const std::string& path) {
  if (img.height < 1 || img.width < 1 ||
      (img.channels != 1 && img.channels != 3))
    throw GeometryError("save_image: invalid image geometry");
  if (has_suffix(path, ".pgm")) {
    if (img.channels != 1)
      throw GeometryError("save_image: PGM supports one channel only");
    save_pgm(img, path);
  } else if (has_suffix(path, ".png")) {
    save_png(img, path);
  } else {
    throw FormatError(path + ": unsupported image extension (png/pgm only)");
  }
}

double image_norm_sq(const Image& img) {
  std::vector<double> sq(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) sq[i] = img.data[i] * img.data[i];
  return permutation_invariant_sum(std::move(sq));
}

Image circular_shift(const Image& img, int dy, int dx) {
  Image out(img.height, img.width, img.channels);
  out.mean_offset = img.mean_offset;
  const auto mod = [](int a, int n) { return ((a % n) + n) % n; };
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c)
        out.at(y, x, c) =
            img.at(mod(y - dy, img.height), mod(x - dx, img.width), c);
  return out;
}

}  // namespace frame
