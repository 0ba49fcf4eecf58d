#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "carve/error.hpp"
#include "carve/imaging.hpp"
#include "carve/oracle.hpp"
#include "oracles.hpp"

using namespace carve;
using namespace carve::imaging;

namespace {

ImageRGB step_image(int h, int w, int split) {
  ImageRGB img(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = split; x < w; ++x) img.at(y, x) = {255, 255, 255};
  }
  return img;
}

ImageRGB random_image(oracle::Rng& rng, int h, int w) {
  ImageRGB img(h, w);
  for (auto& p : img.pixels()) {
    p = {static_cast<std::uint8_t>(rng.uniform_int(0, 255)),
         static_cast<std::uint8_t>(rng.uniform_int(0, 255)),
         static_cast<std::uint8_t>(rng.uniform_int(0, 255))};
  }
  return img;
}

}  // namespace

TEST_CASE("hue bins") {
  CHECK(rgb_to_hue_bin({255, 0, 0}) == 0);
  CHECK(rgb_to_hue_bin({0, 255, 0}) == 60);
  CHECK(rgb_to_hue_bin({0, 0, 255}) == 120);
  CHECK(rgb_to_hue_bin({128, 128, 128}) == 0);
  CHECK(rgb_to_hue_bin({0, 0, 0}) == 0);
  // 359 degrees lands in the last bin, not back at zero.
  CHECK(rgb_to_hue_bin({255, 0, 4}) == 179);
}

TEST_CASE("image construction rejects bad shapes") {
  CHECK_THROWS_AS(ImageRGB(0, 4), ValidationError);
  CHECK_THROWS_AS(ImageRGB(2, 2, std::vector<Rgb>(3)), ValidationError);
}

TEST_CASE("canny on a constant image finds nothing") {
  const ImageRGB img(32, 32, {17, 99, 203});
  const auto e = canny_edges(img);
  CHECK(texture_complexity(e) == 0.0);
}

TEST_CASE("canny marks exactly the step column of an 8x8 step") {
  const auto img = step_image(8, 8, 4);
  const auto e = canny_edges(img);
  const auto ref = oracle_ref::reference_canny(img, 50, 150, 1.4);
  CHECK(e.bits == ref);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      CHECK_MESSAGE(e.at(y, x) == (x == 4 ? 1 : 0), "y=" << y << " x=" << x);
    }
  }
}

TEST_CASE("canny agrees with the brute-force reference on random images") {
  oracle::Rng rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    const int h = rng.uniform_int(3, 20);
    const int w = rng.uniform_int(3, 20);
    const auto img = random_image(rng, h, w);
    const double low = rng.uniform(10, 100);
    const double high = low + rng.uniform(0, 200);
    const double sigma = rng.uniform(0.5, 2.0);
    const auto e = canny_edges(img, {low, high, sigma});
    CHECK(e.bits == oracle_ref::reference_canny(img, low, high, sigma));
  }
}

TEST_CASE("faint noise below the low threshold yields no edges") {
  oracle::Rng rng(3);
  ImageRGB img(16, 16);
  for (auto& p : img.pixels()) {
    const auto v = static_cast<std::uint8_t>(120 + rng.uniform_int(0, 3));
    p = {v, v, v};
  }
  // Sobel of a blurred field varying by at most 3 stays below 8 * 3 = 24 < 50.
  CHECK(texture_complexity(canny_edges(img)) == 0.0);
}

TEST_CASE("canny parameter validation") {
  const ImageRGB img(8, 8);
  CHECK_THROWS_AS(canny_edges(img, {0, 10, 1}), ValidationError);
  CHECK_THROWS_AS(canny_edges(img, {20, 10, 1}), ValidationError);
  CHECK_THROWS_AS(canny_edges(img, {10, 20, 0}), ValidationError);
  CHECK_THROWS_AS(canny_edges(ImageRGB(2, 8)), ValidationError);
  CHECK_NOTHROW(canny_edges(ImageRGB(3, 3)));
}

TEST_CASE("texture complexity counts") {
  EdgeMap e{10, 10, std::vector<std::uint8_t>(100, 0)};
  CHECK(texture_complexity(e) == 0.0);
  for (int i = 0; i < 25; ++i) e.bits[i * 4] = 1;
  CHECK(texture_complexity(e) == doctest::Approx(0.25).epsilon(1e-15));
  std::fill(e.bits.begin(), e.bits.end(), 1);
  CHECK(texture_complexity(e) == 1.0);
}

TEST_CASE("color complexity") {
  CHECK(color_complexity(ImageRGB(5, 5, {10, 200, 30})) == 0.0);

  ImageRGB two(2, 4, {255, 0, 0});
  for (int y = 0; y < 2; ++y) {
    two.at(y, 2) = {0, 255, 0};
    two.at(y, 3) = {0, 255, 0};
  }
  CHECK(std::abs(color_complexity(two) - std::log(2.0) / std::log(180.0)) < 1e-12);
  CHECK(color_complexity(two) == doctest::Approx(0.13343).epsilon(1e-4));

  ImageRGB all(1, 180);
  for (int b = 0; b < 180; ++b) {
    // Hue at the centre of bin b on the red-to-yellow-to-green ... wheel.
    const double hue = 2.0 * b + 1.0;
    const double hp = hue / 60.0;
    const double x = 1.0 - std::abs(std::fmod(hp, 2.0) - 1.0);
    double r = 0, g = 0, bl = 0;
    switch (static_cast<int>(hp)) {
      case 0: r = 1; g = x; break;
      case 1: r = x; g = 1; break;
      case 2: g = 1; bl = x; break;
      case 3: g = x; bl = 1; break;
      case 4: r = x; bl = 1; break;
      default: r = 1; bl = x; break;
    }
    auto q = [](double v) { return static_cast<std::uint8_t>(std::lround(v * 255)); };
    all.at(0, b) = {q(r), q(g), q(bl)};
    REQUIRE(rgb_to_hue_bin(all.at(0, b)) == b);
  }
  CHECK(std::abs(color_complexity(all) - 1.0) < 1e-9);
}

TEST_CASE("achromatic exclusion") {
  ImageRGB img(1, 4, {50, 50, 50});
  img.at(0, 0) = {0, 255, 0};
  CHECK(color_complexity(img, false) > 0.0);
  CHECK(color_complexity(img, true) == 0.0);
  CHECK(color_complexity(ImageRGB(2, 2, {9, 9, 9}), true) == 0.0);
}

TEST_CASE("png round trip") {
  oracle::Rng rng(5);
  const auto img = random_image(rng, 7, 13);
  const auto bytes = encode_png(img);
  CHECK(decode_image(bytes) == img);
  const auto path = std::filesystem::temp_directory_path() / "carve_test_roundtrip.png";
  write_png(img, path);
  CHECK(read_image(path) == img);
  std::filesystem::remove(path);
}

TEST_CASE("image decoding errors") {
  const std::vector<std::uint8_t> junk{1, 2, 3, 4, 5};
  CHECK_THROWS_AS(decode_image(junk), ParseError);
  CHECK_THROWS_AS(read_image("/nonexistent/nowhere.png"), IoError);
}
