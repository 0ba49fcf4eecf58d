#include "carve/maskgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/core.h>
#include <json.hpp>

#include "carve/error.hpp"

namespace carve::maskgen {

using imaging::ImageRGB;
using imaging::Rgb;

const char* to_string(ResizePolicy policy) noexcept {
  return policy == ResizePolicy::Stretch ? "stretch" : "fit_pad";
}

const char* to_string(Interpolation interp) noexcept {
  return interp == Interpolation::Nearest ? "nearest" : "bilinear";
}

ResizePolicy resize_policy_from_string(const std::string& s) {
  if (s == "stretch") return ResizePolicy::Stretch;
  if (s == "fit_pad") return ResizePolicy::FitPad;
  throw ValidationError("unknown resize policy: " + s);
}

Interpolation interpolation_from_string(const std::string& s) {
  if (s == "nearest") return Interpolation::Nearest;
  if (s == "bilinear") return Interpolation::Bilinear;
  throw ValidationError("unknown interpolation: " + s);
}

void CarveConfig::validate() const {
  if (!(p > 0.0 && p <= 1.0)) throw ValidationError(fmt::format("p must be in (0, 1], got {}", p));
  if (k < 1) throw ValidationError(fmt::format("K must be at least 1, got {}", k));
  if (connectivity != 4 && connectivity != 8) {
    throw ValidationError(fmt::format("connectivity must be 4 or 8, got {}", connectivity));
  }
  if (!(lambda > 0.0) || !std::isfinite(lambda)) {
    throw ValidationError(fmt::format("lambda must be positive, got {}", lambda));
  }
  if (layer_start < 0 || layer_start > layer_end) {
    throw ValidationError(fmt::format("invalid layer range [{}, {}]", layer_start, layer_end));
  }
}

double percentile_threshold(std::span<const double> values, double p) {
  if (!(p > 0.0 && p <= 1.0)) throw ValidationError(fmt::format("p must be in (0, 1], got {}", p));
  if (values.empty()) throw ValidationError("cannot threshold an empty map");
  const std::size_t n = values.size();
  // The small offset keeps p * n = 3.0000000000000004 from rounding up to 4.
  auto k = static_cast<std::size_t>(std::ceil(p * static_cast<double>(n) - 1e-9));
  k = std::clamp<std::size_t>(k, 1, n);
  std::vector<double> sorted(values.begin(), values.end());
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k - 1), sorted.end(),
                   std::greater<>());
  return sorted[k - 1];
}

BinaryMask threshold_mask(const contrast::Saliency& s, double tau) {
  BinaryMask m{s.height, s.width, std::vector<std::uint8_t>(s.values.size())};
  for (std::size_t i = 0; i < s.values.size(); ++i) m.bits[i] = s.values[i] >= tau ? 1 : 0;
  return m;
}

namespace {

struct DisjointSets {
  std::vector<std::uint32_t> parent;

  std::uint32_t make() {
    parent.push_back(static_cast<std::uint32_t>(parent.size()));
    return parent.back();
  }
  std::uint32_t find(std::uint32_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  void unite(std::uint32_t a, std::uint32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (a < b) std::swap(a, b);
    parent[a] = b;
  }
};

}  // namespace

std::vector<Region> connected_components(const BinaryMask& mask, int connectivity,
                                         const contrast::Saliency* s) {
  if (connectivity != 4 && connectivity != 8) {
    throw ValidationError(fmt::format("connectivity must be 4 or 8, got {}", connectivity));
  }
  const int h = mask.height;
  const int w = mask.width;
  if (mask.bits.size() != static_cast<std::size_t>(h) * static_cast<std::size_t>(w)) {
    throw ValidationError("mask does not match its dimensions");
  }
  if (s != nullptr && (s->height != h || s->width != w)) {
    throw ValidationError("saliency and mask dimensions differ");
  }

  constexpr std::uint32_t kNone = ~0u;
  std::vector<std::uint32_t> label(mask.bits.size(), kNone);
  DisjointSets sets;

  // First pass: provisional labels from already-visited neighbours.
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      if (!mask.bits[i]) continue;
      std::uint32_t current = kNone;
      auto visit = [&](int yy, int xx) {
        if (yy < 0 || xx < 0 || xx >= w) return;
        const std::uint32_t l = label[static_cast<std::size_t>(yy) * w + xx];
        if (l == kNone) return;
        if (current == kNone) {
          current = l;
        } else {
          sets.unite(current, l);
        }
      };
      visit(y, x - 1);
      visit(y - 1, x);
      if (connectivity == 8) {
        visit(y - 1, x - 1);
        visit(y - 1, x + 1);
      }
      label[i] = current == kNone ? sets.make() : current;
    }
  }

  // Second pass: gather pixels per root in raster order.
  std::vector<std::uint32_t> region_of(sets.parent.size(), kNone);
  std::vector<Region> regions;
  for (std::size_t i = 0; i < label.size(); ++i) {
    if (label[i] == kNone) continue;
    const std::uint32_t root = sets.find(label[i]);
    if (region_of[root] == kNone) {
      region_of[root] = static_cast<std::uint32_t>(regions.size());
      const int y = static_cast<int>(i / w);
      const int x = static_cast<int>(i % w);
      regions.push_back(Region{{}, 0.0, BBox{y, x, y, x}});
    }
    Region& r = regions[region_of[root]];
    const int y = static_cast<int>(i / w);
    const int x = static_cast<int>(i % w);
    r.pixels.push_back(static_cast<std::uint32_t>(i));
    r.bbox.top = std::min(r.bbox.top, y);
    r.bbox.bottom = std::max(r.bbox.bottom, y);
    r.bbox.left = std::min(r.bbox.left, x);
    r.bbox.right = std::max(r.bbox.right, x);
    if (s != nullptr) r.cumulative_score += s->values[i];
  }

  std::stable_sort(regions.begin(), regions.end(), [](const Region& a, const Region& b) {
    if (a.bbox.top != b.bbox.top) return a.bbox.top < b.bbox.top;
    if (a.bbox.left != b.bbox.left) return a.bbox.left < b.bbox.left;
    return a.pixels.front() < b.pixels.front();
  });
  return regions;
}

CarveMask select_regions(const std::vector<Region>& regions, int height, int width, int k) {
  if (k < 1) throw ValidationError(fmt::format("K must be at least 1, got {}", k));
  CarveMask mask{height, width,
                 std::vector<std::uint8_t>(static_cast<std::size_t>(height) * width, 0), {}};
  std::vector<std::size_t> order(regions.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return regions[a].cumulative_score > regions[b].cumulative_score;
  });
  const std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(k), regions.size());
  for (std::size_t j = 0; j < keep; ++j) {
    const Region& r = regions[order[j]];
    for (std::uint32_t px : r.pixels) mask.bits[px] = 1;
    mask.regions_kept.push_back(r);
  }
  return mask;
}

ImageRGB resize(const ImageRGB& src, int height, int width, Interpolation interp) {
  ImageRGB out(height, width);
  const int sh = src.height();
  const int sw = src.width();
  if (interp == Interpolation::Nearest) {
    for (int y = 0; y < height; ++y) {
      const int sy = static_cast<int>(static_cast<long long>(y) * sh / height);
      for (int x = 0; x < width; ++x) {
        const int sx = static_cast<int>(static_cast<long long>(x) * sw / width);
        out.at(y, x) = src.at(sy, sx);
      }
    }
    return out;
  }
  auto lerp_channel = [](double a, double b, double t) { return a + (b - a) * t; };
  for (int y = 0; y < height; ++y) {
    const double fyf = std::clamp((y + 0.5) * sh / height - 0.5, 0.0, sh - 1.0);
    const int y0 = static_cast<int>(std::floor(fyf));
    const int y1 = std::min(y0 + 1, sh - 1);
    const double fy = fyf - y0;
    for (int x = 0; x < width; ++x) {
      const double fxf = std::clamp((x + 0.5) * sw / width - 0.5, 0.0, sw - 1.0);
      const int x0 = static_cast<int>(std::floor(fxf));
      const int x1 = std::min(x0 + 1, sw - 1);
      const double fx = fxf - x0;
      const Rgb& a = src.at(y0, x0);
      const Rgb& b = src.at(y0, x1);
      const Rgb& c = src.at(y1, x0);
      const Rgb& d = src.at(y1, x1);
      auto blend = [&](std::uint8_t Rgb::*ch) {
        const double top = lerp_channel(a.*ch, b.*ch, fx);
        const double bottom = lerp_channel(c.*ch, d.*ch, fx);
        const double v = lerp_channel(top, bottom, fy);
        return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      };
      out.at(y, x) = Rgb{blend(&Rgb::r), blend(&Rgb::g), blend(&Rgb::b)};
    }
  }
  return out;
}

ExtractResult extract(const ImageRGB& image, const CarveMask& mask, const CarveConfig& cfg) {
  const int h = image.height();
  const int w = image.width();
  if (mask.height != h || mask.width != w) {
    throw ValidationError(fmt::format("mask {}x{} does not match image {}x{}", mask.height,
                                      mask.width, h, w));
  }
  if (mask.empty()) return ExtractResult{image, true, BBox{0, 0, h - 1, w - 1}};

  BBox box = mask.regions_kept.front().bbox;
  for (const Region& r : mask.regions_kept) {
    box.top = std::min(box.top, r.bbox.top);
    box.left = std::min(box.left, r.bbox.left);
    box.bottom = std::max(box.bottom, r.bbox.bottom);
    box.right = std::max(box.right, r.bbox.right);
  }

  ImageRGB crop(box.height(), box.width());
  for (int y = box.top; y <= box.bottom; ++y) {
    for (int x = box.left; x <= box.right; ++x) {
      const bool keep = mask.bits[static_cast<std::size_t>(y) * w + x] != 0;
      crop.at(y - box.top, x - box.left) = keep ? image.at(y, x) : cfg.fill;
    }
  }

  if (cfg.resize_policy == ResizePolicy::Stretch) {
    return ExtractResult{resize(crop, h, w, cfg.resize_interp), false, box};
  }

  const double scale = std::min(static_cast<double>(h) / crop.height(),
                                static_cast<double>(w) / crop.width());
  const int nh = std::clamp(static_cast<int>(std::lround(crop.height() * scale)), 1, h);
  const int nw = std::clamp(static_cast<int>(std::lround(crop.width() * scale)), 1, w);
  const ImageRGB scaled = resize(crop, nh, nw, cfg.resize_interp);
  ImageRGB out(h, w, cfg.fill);
  const int oy = (h - nh) / 2;
  const int ox = (w - nw) / 2;
  for (int y = 0; y < nh; ++y) {
    for (int x = 0; x < nw; ++x) out.at(oy + y, ox + x) = scaled.at(y, x);
  }
  return ExtractResult{std::move(out), false, box};
}

ImageRGB progressive_mask(const ImageRGB& image, const contrast::Saliency& s, double ratio, Rgb fill) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) {
    throw ValidationError(fmt::format("mask ratio must be in [0, 1], got {}", ratio));
  }
  if (s.height != image.height() || s.width != image.width()) {
    throw ValidationError("saliency and image dimensions differ");
  }
  const std::size_t n = image.size();
  auto count = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
  count = std::min(count, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return s.values[a] < s.values[b]; });
  ImageRGB out = image;
  auto px = out.pixels();
  for (std::size_t j = 0; j < count; ++j) px[order[j]] = fill;
  return out;
}

namespace {

std::vector<int> layer_range(const CarveConfig& cfg) {
  std::vector<int> layers;
  for (int l = cfg.layer_start; l <= cfg.layer_end; ++l) layers.push_back(l);
  return layers;
}

void require_layers(const attention::AttentionStack& stack, std::span<const int> layers,
                    const char* which) {
  for (int l : layers) {
    if (!stack.has_layer(l)) {
      throw ValidationError(fmt::format("{} stack lacks layer {}", which, l));
    }
  }
}

}  // namespace

contrast::Saliency fused_saliency(const attention::AttentionStack& q,
                                  const attention::AttentionStack& g, int height, int width,
                                  const CarveConfig& cfg) {
  cfg.validate();
  if (q.grid_h() != g.grid_h() || q.grid_w() != g.grid_w()) {
    throw ValidationError(fmt::format("question grid {}x{} differs from general grid {}x{}",
                                      q.grid_h(), q.grid_w(), g.grid_h(), g.grid_w()));
  }
  const auto layers = layer_range(cfg);
  require_layers(q, layers, "question");
  require_layers(g, layers, "general");
  const auto steps = contrast::select_steps(q, cfg.steps);
  for (int t : steps) {
    if (!g.has_step(t)) throw ValidationError(fmt::format("general stack lacks step {}", t));
  }
  const auto refined = contrast::refine_stacks(q, g, layers, steps, contrast::ContrastConfig{cfg.lambda});
  return contrast::fuse(refined, layers, steps, height, width, cfg.reshape);
}

PipelineResult carve_pipeline(const ImageRGB& image, const attention::AttentionStack& q,
                              const attention::AttentionStack& g, const CarveConfig& cfg) {
  auto saliency = fused_saliency(q, g, image.height(), image.width(), cfg);
  const double tau = percentile_threshold(saliency.values, cfg.p);
  const BinaryMask retained = threshold_mask(saliency, tau);
  auto regions = connected_components(retained, cfg.connectivity, &saliency);
  CarveMask mask = select_regions(regions, image.height(), image.width(), cfg.k);
  ExtractResult extracted = extract(image, mask, cfg);

  Diagnostics d;
  d.tau = tau;
  d.retained_pixels = static_cast<std::size_t>(std::count(retained.bits.begin(), retained.bits.end(), 1));
  std::vector<std::size_t> order(regions.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return regions[a].cumulative_score > regions[b].cumulative_score;
  });
  order.resize(std::min<std::size_t>(order.size(), static_cast<std::size_t>(cfg.k)));
  d.kept = std::move(order);
  d.regions = std::move(regions);
  d.fallback = extracted.fallback;
  d.crop = extracted.crop;
  d.layers = layer_range(cfg);
  d.steps = contrast::select_steps(q, cfg.steps);
  for (int l : d.layers) {
    d.question_entropies.push_back(attention::map_entropy(q.map(l, q.t_end())));
    d.general_entropies.push_back(attention::map_entropy(g.map(l, g.t_end())));
  }
  d.question_overall_entropy = attention::overall_entropy(q, cfg.layer_start, cfg.layer_end, q.t_end());
  d.general_overall_entropy = attention::overall_entropy(g, cfg.layer_start, cfg.layer_end, g.t_end());

  return PipelineResult{std::move(extracted.image), std::move(saliency), std::move(mask), std::move(d)};
}

std::string diagnostics_json(const Diagnostics& d, const CarveConfig& cfg) {
  using nlohmann::json;
  auto box = [](const BBox& b) {
    return json{{"top", b.top}, {"left", b.left}, {"bottom", b.bottom}, {"right", b.right}};
  };
  json regions = json::array();
  for (const Region& r : d.regions) {
    regions.push_back(json{{"bbox", box(r.bbox)},
                           {"pixels", r.pixels.size()},
                           {"score", r.cumulative_score}});
  }
  json j{
      {"tau", d.tau},
      {"retained_pixels", d.retained_pixels},
      {"regions", regions},
      {"kept", d.kept},
      {"fallback", d.fallback},
      {"crop", box(d.crop)},
      {"layers", d.layers},
      {"steps", d.steps},
      {"entropy",
       json{{"question_per_layer", d.question_entropies},
            {"general_per_layer", d.general_entropies},
            {"question_overall", d.question_overall_entropy},
            {"general_overall", d.general_overall_entropy}}},
      {"config",
       json{{"p", cfg.p},
            {"k", cfg.k},
            {"lambda", cfg.lambda},
            {"connectivity", cfg.connectivity},
            {"fill", json::array({cfg.fill.r, cfg.fill.g, cfg.fill.b})},
            {"resize_policy", to_string(cfg.resize_policy)},
            {"resize_interp", to_string(cfg.resize_interp)},
            {"reshape", contrast::to_string(cfg.reshape)},
            {"steps", contrast::to_string(cfg.steps)},
            {"layer_start", cfg.layer_start},
            {"layer_end", cfg.layer_end}}},
  };
  return j.dump(2);
}

}  // namespace carve::maskgen
