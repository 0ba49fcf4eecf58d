#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace carve::imaging {

struct Rgb {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;

  friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// Row-major 8-bit RGB image. Always at least 1x1.
class ImageRGB {
 public:
  ImageRGB(int height, int width, Rgb fill = {});
  ImageRGB(int height, int width, std::vector<Rgb> pixels);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return pixels_.size(); }

  Rgb& at(int y, int x) { return pixels_[index(y, x)]; }
  const Rgb& at(int y, int x) const { return pixels_[index(y, x)]; }

  std::span<Rgb> pixels() noexcept { return pixels_; }
  std::span<const Rgb> pixels() const noexcept { return pixels_; }

  friend bool operator==(const ImageRGB&, const ImageRGB&) = default;

 private:
  std::size_t index(int y, int x) const noexcept {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
  }

  int height_;
  int width_;
  std::vector<Rgb> pixels_;
};

/// Binary edge map with the dimensions of its source image.
struct EdgeMap {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;

  std::uint8_t at(int y, int x) const {
    return bits[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                static_cast<std::size_t>(x)];
  }
};

inline constexpr int kHueBins = 180;

struct HueHistogram {
  std::array<double, kHueBins> bins{};  // proportions
  std::size_t total_pixels = 0;
};

struct CannyParams {
  double low = 50.0;
  double high = 150.0;
  double sigma = 1.4;
};

/// Throws ValidationError unless 0 < low <= high and sigma > 0.
void validate(const CannyParams& params);

/// Half-degree hue bin in [0, 180). Achromatic pixels land in bin 0.
int rgb_to_hue_bin(Rgb pixel) noexcept;

/// Luma 0.299/0.587/0.114, on the 0..255 scale.
std::vector<double> to_grayscale(const ImageRGB& image);

/// Classic Canny: grayscale, Gaussian blur (replicated borders), Sobel,
/// 4-direction non-maximum suppression, double-threshold hysteresis with
/// 8-connectivity. Thresholds apply to the L2 Sobel magnitude.
///
/// Along the gradient direction a pixel survives suppression when it is
/// >= its predecessor and > its successor, so on a symmetric ramp the edge
/// lands on the later pixel (the first bright column of a dark-to-bright step).
EdgeMap canny_edges(const ImageRGB& image, const CannyParams& params = {});

double texture_complexity(const EdgeMap& edges) noexcept;

HueHistogram hue_histogram(const ImageRGB& image, bool exclude_achromatic = false);

/// Normalized Shannon entropy of a histogram's proportions, divided by ln(180).
/// Returns 0 for an empty histogram.
double histogram_entropy(const HueHistogram& hist) noexcept;

double color_complexity(const ImageRGB& image, bool exclude_achromatic = false);

// Image file I/O. PNG and JPEG are decoded to RGB; alpha is composited over black.
ImageRGB decode_image(std::span<const std::uint8_t> bytes);
ImageRGB read_image(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_png(const ImageRGB& image);
void write_png(const ImageRGB& image, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_gray_png(int height, int width,
                                          std::span<const std::uint8_t> gray);

}  // namespace carve::imaging
