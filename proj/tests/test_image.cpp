#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "frame/errors.hpp"
#include "frame/image.hpp"
#include "frame/rng.hpp"

using namespace frame;
namespace fs = std::filesystem;

namespace {

std::string tmp_path(const std::string& name) {
  return (fs::temp_directory_path() / name).string();
}

Image random_quantized(int h, int w, int c, std::uint64_t seed) {
  // Entries sit exactly on the byte grid so save/load round trips exactly.
  PhiloxStream rng(seed, 0);
  Image img(h, w, c);
  img.mean_offset = 0.5;
  for (double& v : img.data) {
    const int byte = static_cast<int>(rng.next_u32() % 256);
    v = byte / 255.0 - img.mean_offset;
  }
  return img;
}

}  // namespace

TEST_CASE("quantize_entry clamps and rounds half to even") {
  CHECK(quantize_entry(-1.0, 0.0) == 0);
  CHECK(quantize_entry(2.0, 0.0) == 255);
  CHECK(quantize_entry(0.0, 0.0) == 0);
  CHECK(quantize_entry(1.0, 0.0) == 255);
  CHECK(quantize_entry(0.0, 0.5) == 128);  // 127.5 rounds up to even 128
  CHECK(quantize_entry(0.5, 0.0) == 128);
  for (int b = 0; b < 256; ++b)
    CHECK(quantize_entry(b / 255.0 - 0.5, 0.5) == b);
}

TEST_CASE("pgm round trip is exact on the byte grid") {
  const Image img = random_quantized(9, 7, 1, 42);
  const std::string path = tmp_path("frame_test_rt.pgm");
  save_image(img, path);
  const Image back = load_image(path, NormalizePolicy::centered);
  REQUIRE(back.same_shape(img));
  CHECK(back.mean_offset == 0.5);
  for (std::size_t i = 0; i < img.size(); ++i)
    CHECK(back.data[i] == img.data[i]);
  fs::remove(path);
}

TEST_CASE("pgm header comments and raw policy") {
  const std::string path = tmp_path("frame_test_hdr.pgm");
  {
    std::ofstream out(path, std::ios::binary);
    out << "P5\n# a comment line\n3 2\n255\n";
    const unsigned char raster[6] = {0, 51, 102, 153, 204, 255};
    out.write(reinterpret_cast<const char*>(raster), 6);
  }
  const Image img = load_image(path, NormalizePolicy::raw);
  REQUIRE(img.height == 2);
  REQUIRE(img.width == 3);
  CHECK(img.mean_offset == 0.0);
  CHECK(img.at(0, 0, 0) == 0.0);
  CHECK(img.at(0, 1, 0) == 51.0 / 255.0);
  CHECK(img.at(1, 2, 0) == 1.0);
  fs::remove(path);
}

TEST_CASE("png round trip, grayscale and rgb") {
  for (int c : {1, 3}) {
    const Image img = random_quantized(8, 5, c, 7 + c);
    const std::string path = tmp_path("frame_test_rt.png");
    save_image(img, path);
    const Image back = load_image(path);
    REQUIRE(back.same_shape(img));
    for (std::size_t i = 0; i < img.size(); ++i)
      CHECK(back.data[i] == img.data[i]);
    fs::remove(path);
  }
}

TEST_CASE("load/save error taxonomy") {
  CHECK_THROWS_AS(load_image(tmp_path("frame_no_such_file.png")), IoError);
  CHECK_THROWS_AS(load_image(tmp_path("frame_no_such_file.tiff")), IoError);

  const std::string fake_png = tmp_path("frame_fake.png");
  { std::ofstream(fake_png) << "this is not a png"; }
  CHECK_THROWS_AS(load_image(fake_png), FormatError);
  fs::remove(fake_png);

  const std::string deep_pgm = tmp_path("frame_deep.pgm");
  { std::ofstream(deep_pgm, std::ios::binary) << "P5\n2 2\n65535\n"; }
  CHECK_THROWS_AS(load_image(deep_pgm), FormatError);
  fs::remove(deep_pgm);

  const std::string short_pgm = tmp_path("frame_short.pgm");
  { std::ofstream(short_pgm, std::ios::binary) << "P5\n4 4\n255\nab"; }
  CHECK_THROWS_AS(load_image(short_pgm), FormatError);
  fs::remove(short_pgm);

  Image bad(3, 3, 2);
  CHECK_THROWS_AS(save_image(bad, tmp_path("frame_bad.png")), GeometryError);
  Image gray3(3, 3, 3);
  CHECK_THROWS_AS(save_image(gray3, tmp_path("frame_bad.pgm")), GeometryError);
  Image ok(3, 3, 1);
  CHECK_THROWS_AS(save_image(ok, tmp_path("frame_bad.bmp")), FormatError);
}

TEST_CASE("image_norm_sq is exactly shift invariant") {
  PhiloxStream rng(11, 0);
  Image img(12, 10, 1);
  for (double& v : img.data) v = rng.normal();
  const double base = image_norm_sq(img);
  for (auto [dy, dx] : {std::pair{1, 0}, {0, 1}, {5, 7}, {-3, 4}}) {
    CHECK(image_norm_sq(circular_shift(img, dy, dx)) == base);
  }
  double naive = 0.0;
  for (double v : img.data) naive += v * v;
  CHECK(base == doctest::Approx(naive).epsilon(1e-13));
}

TEST_CASE("circular_shift composition and identity") {
  PhiloxStream rng(13, 0);
  Image img(6, 5, 3);
  for (double& v : img.data) v = rng.normal();

  const Image same = circular_shift(img, 0, 0);
  const Image wrap = circular_shift(img, 6, 5);
  for (std::size_t i = 0; i < img.size(); ++i) {
    CHECK(same.data[i] == img.data[i]);
    CHECK(wrap.data[i] == img.data[i]);
  }

  const Image two_step = circular_shift(circular_shift(img, 2, 1), 3, -2);
  const Image direct = circular_shift(img, 5, -1);
  for (std::size_t i = 0; i < img.size(); ++i)
    CHECK(two_step.data[i] == direct.data[i]);

  const Image shifted = circular_shift(img, 1, 2);
  CHECK(shifted.at(1, 2, 0) == img.at(0, 0, 0));
  CHECK(shifted.at(0, 0, 1) == img.at(5, 3, 1));
}
