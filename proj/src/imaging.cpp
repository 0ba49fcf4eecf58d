#include "carve/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "carve/error.hpp"

namespace carve::imaging {

ImageRGB::ImageRGB(int height, int width, Rgb fill) : height_(height), width_(width) {
  if (height < 1 || width < 1) {
    throw ValidationError("image dimensions must be at least 1x1");
  }
  pixels_.assign(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), fill);
}

ImageRGB::ImageRGB(int height, int width, std::vector<Rgb> pixels)
    : height_(height), width_(width), pixels_(std::move(pixels)) {
  if (height < 1 || width < 1) {
    throw ValidationError("image dimensions must be at least 1x1");
  }
  if (pixels_.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width)) {
    throw ValidationError("pixel count does not match image dimensions");
  }
}

int rgb_to_hue_bin(Rgb pixel) noexcept {
  const int r = pixel.r;
  const int g = pixel.g;
  const int b = pixel.b;
  const int mx = std::max({r, g, b});
  const int mn = std::min({r, g, b});
  const int delta = mx - mn;
  if (delta == 0) return 0;

  double hue = 0.0;
  if (mx == r) {
    hue = 60.0 * static_cast<double>(g - b) / delta;
  } else if (mx == g) {
    hue = 60.0 * (static_cast<double>(b - r) / delta + 2.0);
  } else {
    hue = 60.0 * (static_cast<double>(r - g) / delta + 4.0);
  }
  if (hue < 0.0) hue += 360.0;
  const int bin = static_cast<int>(std::floor(hue / 2.0));
  return std::clamp(bin, 0, kHueBins - 1);
}

std::vector<double> to_grayscale(const ImageRGB& image) {
  std::vector<double> gray(image.size());
  const auto px = image.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) {
    gray[i] = 0.299 * px[i].r + 0.587 * px[i].g + 0.114 * px[i].b;
  }
  return gray;
}

namespace {

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable blur with replicated borders.
std::vector<double> blur(const std::vector<double>& src, int h, int w, double sigma) {
  const auto kernel = gaussian_kernel(sigma);
  const int radius = static_cast<int>(kernel.size() / 2);
  std::vector<double> tmp(src.size());
  std::vector<double> out(src.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        const int xx = std::clamp(x + k, 0, w - 1);
        acc += kernel[k + radius] * src[static_cast<std::size_t>(y) * w + xx];
      }
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        const int yy = std::clamp(y + k, 0, h - 1);
        acc += kernel[k + radius] * tmp[static_cast<std::size_t>(yy) * w + x];
      }
      out[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  return out;
}

}  // namespace

void validate(const CannyParams& params) {
  if (!(params.low > 0.0) || !(params.low <= params.high)) {
    throw ValidationError("canny thresholds must satisfy 0 < low <= high");
  }
  if (!(params.sigma > 0.0)) {
    throw ValidationError("canny sigma must be positive");
  }
}

EdgeMap canny_edges(const ImageRGB& image, const CannyParams& params) {
  validate(params);
  const int h = image.height();
  const int w = image.width();
  if (h < 3 || w < 3) {
    throw ValidationError("canny requires an image of at least 3x3");
  }

  const auto smooth = blur(to_grayscale(image), h, w, params.sigma);
  auto px = [&](int y, int x) {
    return smooth[static_cast<std::size_t>(std::clamp(y, 0, h - 1)) * w + std::clamp(x, 0, w - 1)];
  };

  const std::size_t n = static_cast<std::size_t>(h) * w;
  std::vector<double> mag(n);
  std::vector<std::uint8_t> dir(n);  // 0: horizontal gradient, 1: 45deg, 2: vertical, 3: 135deg
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double gx = (px(y - 1, x + 1) + 2.0 * px(y, x + 1) + px(y + 1, x + 1)) -
                        (px(y - 1, x - 1) + 2.0 * px(y, x - 1) + px(y + 1, x - 1));
      const double gy = (px(y + 1, x - 1) + 2.0 * px(y + 1, x) + px(y + 1, x + 1)) -
                        (px(y - 1, x - 1) + 2.0 * px(y - 1, x) + px(y - 1, x + 1));
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      mag[i] = std::hypot(gx, gy);

      // Quantize the gradient angle into four sectors of 45 degrees.
      double angle = std::atan2(gy, gx) * 180.0 / M_PI;
      if (angle < 0.0) angle += 180.0;
      if (angle < 22.5 || angle >= 157.5) {
        dir[i] = 0;
      } else if (angle < 67.5) {
        dir[i] = 1;
      } else if (angle < 112.5) {
        dir[i] = 2;
      } else {
        dir[i] = 3;
      }
    }
  }

  auto mag_at = [&](int y, int x) -> double {
    if (y < 0 || y >= h || x < 0 || x >= w) return 0.0;
    return mag[static_cast<std::size_t>(y) * w + x];
  };

  std::vector<double> thin(n, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const double m = mag[i];
      if (m <= 0.0) continue;
      int dy = 0;
      int dx = 0;
      switch (dir[i]) {
        case 0: dx = 1; break;
        case 1: dy = 1; dx = 1; break;
        case 2: dy = 1; break;
        default: dy = 1; dx = -1; break;
      }
      const double prev = mag_at(y - dy, x - dx);
      const double next = mag_at(y + dy, x + dx);
      // Magnitudes equal up to rounding count as ties, so symmetric ramps
      // resolve the same way regardless of summation order.
      const double eps = 1e-9 * m;
      if (m >= prev - eps && m > next + eps) thin[i] = m;
    }
  }

  EdgeMap edges{h, w, std::vector<std::uint8_t>(n, 0)};
  std::vector<std::size_t> stack;
  for (std::size_t i = 0; i < n; ++i) {
    if (thin[i] >= params.high && !edges.bits[i]) {
      edges.bits[i] = 1;
      stack.push_back(i);
    }
  }
  while (!stack.empty()) {
    const std::size_t i = stack.back();
    stack.pop_back();
    const int y = static_cast<int>(i / w);
    const int x = static_cast<int>(i % w);
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int yy = y + dy;
        const int xx = x + dx;
        if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
        const std::size_t j = static_cast<std::size_t>(yy) * w + xx;
        if (!edges.bits[j] && thin[j] >= params.low) {
          edges.bits[j] = 1;
          stack.push_back(j);
        }
      }
    }
  }
  return edges;
}

double texture_complexity(const EdgeMap& edges) noexcept {
  if (edges.bits.empty()) return 0.0;
  std::size_t count = 0;
  for (auto b : edges.bits) count += (b != 0);
  return static_cast<double>(count) / static_cast<double>(edges.bits.size());
}

HueHistogram hue_histogram(const ImageRGB& image, bool exclude_achromatic) {
  std::array<std::size_t, kHueBins> counts{};
  std::size_t total = 0;
  for (const Rgb& p : image.pixels()) {
    if (exclude_achromatic && p.r == p.g && p.g == p.b) continue;
    ++counts[rgb_to_hue_bin(p)];
    ++total;
  }
  HueHistogram hist;
  hist.total_pixels = total;
  if (total == 0) return hist;
  for (int b = 0; b < kHueBins; ++b) {
    hist.bins[b] = static_cast<double>(counts[b]) / static_cast<double>(total);
  }
  return hist;
}

double histogram_entropy(const HueHistogram& hist) noexcept {
  if (hist.total_pixels == 0) return 0.0;
  double h = 0.0;
  for (double rho : hist.bins) {
    if (rho > 0.0) h -= rho * std::log(rho);
  }
  const double c = h / std::log(static_cast<double>(kHueBins));
  return std::clamp(c, 0.0, 1.0);
}

double color_complexity(const ImageRGB& image, bool exclude_achromatic) {
  return histogram_entropy(hue_histogram(image, exclude_achromatic));
}

}  // namespace carve::imaging
