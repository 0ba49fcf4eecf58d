#pragma once

// Independent reference implementations used to check the library.
// They favour obviousness over speed and share no code with src/.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "carve/imaging.hpp"

namespace oracle_ref {

// Labels connected components by recursive flood fill. Returns one label per
// pixel (0 = background, labels start at 1 in raster order of first pixel).
inline std::vector<int> flood_fill_labels(const std::vector<std::uint8_t>& bits, int h, int w,
                                          int connectivity) {
  std::vector<int> label(bits.size(), 0);
  int next = 0;
  std::function<void(int, int)> fill = [&](int y, int x) {
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        if (dy == 0 && dx == 0) continue;
        if (connectivity == 4 && dy != 0 && dx != 0) continue;
        const int yy = y + dy;
        const int xx = x + dx;
        if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
        const int j = yy * w + xx;
        if (bits[j] && label[j] == 0) {
          label[j] = label[y * w + x];
          fill(yy, xx);
        }
      }
    }
  };
  for (int i = 0; i < h * w; ++i) {
    if (bits[i] && label[i] == 0) {
      label[i] = ++next;
      fill(i / w, i % w);
    }
  }
  return label;
}

// Pixel sets of each component, as sorted index lists, sorted among themselves.
inline std::vector<std::vector<std::uint32_t>> flood_fill_components(
    const std::vector<std::uint8_t>& bits, int h, int w, int connectivity) {
  const auto label = flood_fill_labels(bits, h, w, connectivity);
  const int n = label.empty() ? 0 : *std::max_element(label.begin(), label.end());
  std::vector<std::vector<std::uint32_t>> sets(n);
  for (int i = 0; i < h * w; ++i) {
    if (label[i]) sets[label[i] - 1].push_back(static_cast<std::uint32_t>(i));
  }
  std::sort(sets.begin(), sets.end());
  return sets;
}

// Nearest-rank threshold by full sort: value at position ceil(p n) - 1 in
// descending order.
inline double sorted_threshold(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end(), std::greater<>());
  auto k = static_cast<std::size_t>(std::ceil(p * static_cast<double>(v.size()) - 1e-9));
  k = std::clamp<std::size_t>(k, 1, v.size());
  return v[k - 1];
}

inline double entropy_nats(const std::vector<double>& p) {
  double h = 0.0;
  for (double x : p) {
    if (x > 0.0) h += x * std::log(1.0 / x);
  }
  return h;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
}

// Brute-force Canny: full 2-D Gaussian, direct Sobel, angle-based
// suppression, iterative hysteresis until no change.
inline std::vector<std::uint8_t> reference_canny(const carve::imaging::ImageRGB& img, double low,
                                                 double high, double sigma) {
  const int h = img.height();
  const int w = img.width();
  auto clampi = [](int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); };
  std::vector<double> gray(h * w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto p = img.at(y, x);
      gray[y * w + x] = 0.299 * p.r + 0.587 * p.g + 0.114 * p.b;
    }
  }
  const int r = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
  std::vector<double> k1(2 * r + 1);
  double total1 = 0;
  for (int i = -r; i <= r; ++i) total1 += (k1[i + r] = std::exp(-(i * i) / (2 * sigma * sigma)));
  std::vector<double> smooth(h * w, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int a = -r; a <= r; ++a) {
        for (int b = -r; b <= r; ++b) {
          acc += k1[a + r] * k1[b + r] / (total1 * total1) *
                 gray[clampi(y + a, 0, h - 1) * w + clampi(x + b, 0, w - 1)];
        }
      }
      smooth[y * w + x] = acc;
    }
  }
  auto s = [&](int y, int x) { return smooth[clampi(y, 0, h - 1) * w + clampi(x, 0, w - 1)]; };
  const int kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
  const int ky[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
  std::vector<double> mag(h * w), ang(h * w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double gx = 0, gy = 0;
      for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) {
          gx += kx[a][b] * s(y + a - 1, x + b - 1);
          gy += ky[a][b] * s(y + a - 1, x + b - 1);
        }
      }
      mag[y * w + x] = std::sqrt(gx * gx + gy * gy);
      double deg = std::atan2(gy, gx) * 180.0 / M_PI;
      if (deg < 0) deg += 180.0;
      ang[y * w + x] = deg;
    }
  }
  auto m = [&](int y, int x) { return (y < 0 || y >= h || x < 0 || x >= w) ? 0.0 : mag[y * w + x]; };
  std::vector<double> keep(h * w, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double v = mag[y * w + x];
      if (v <= 0) continue;
      const double a = ang[y * w + x];
      int dy, dx;
      if (a < 22.5 || a >= 157.5) { dy = 0; dx = 1; }
      else if (a < 67.5) { dy = 1; dx = 1; }
      else if (a < 112.5) { dy = 1; dx = 0; }
      else { dy = 1; dx = -1; }
      const double before = m(y - dy, x - dx);
      const double after = m(y + dy, x + dx);
      const double tol = 1e-9 * v;
      if (v + tol >= before && v > after + tol) keep[y * w + x] = v;
    }
  }
  std::vector<std::uint8_t> out(h * w, 0);
  for (int i = 0; i < h * w; ++i) out[i] = keep[i] >= high;
  bool changed = true;
  while (changed) {
    changed = false;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (out[y * w + x] || keep[y * w + x] < low) continue;
        for (int a = -1; a <= 1 && !out[y * w + x]; ++a) {
          for (int b = -1; b <= 1; ++b) {
            const int yy = y + a, xx = x + b;
            if (yy >= 0 && yy < h && xx >= 0 && xx < w && out[yy * w + xx]) {
              out[y * w + x] = 1;
              changed = true;
              break;
            }
          }
        }
      }
    }
  }
  return out;
}

}  // namespace oracle_ref
