#include "carve/contrast.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/core.h>

#include "carve/error.hpp"

namespace carve::contrast {

const char* to_string(ReshapeMode mode) noexcept {
  return mode == ReshapeMode::Nearest ? "nearest" : "bilinear";
}

const char* to_string(StepSelector selector) noexcept {
  switch (selector) {
    case StepSelector::Start: return "start";
    case StepSelector::End: return "end";
    case StepSelector::Full: return "full";
  }
  return "full";
}

ReshapeMode reshape_mode_from_string(const std::string& s) {
  if (s == "nearest") return ReshapeMode::Nearest;
  if (s == "bilinear") return ReshapeMode::Bilinear;
  throw ValidationError("unknown reshape mode: " + s);
}

StepSelector step_selector_from_string(const std::string& s) {
  if (s == "start") return StepSelector::Start;
  if (s == "end") return StepSelector::End;
  if (s == "full") return StepSelector::Full;
  throw ValidationError("unknown step selector: " + s);
}

std::vector<double> contrast_refine(std::span<const double> a_q, std::span<const double> a_g,
                                    const ContrastConfig& cfg) {
  if (a_q.size() != a_g.size()) {
    throw ValidationError(
        fmt::format("attention size mismatch: {} vs {}", a_q.size(), a_g.size()));
  }
  if (!std::isfinite(cfg.lambda) || cfg.lambda < 0.0) {
    throw ValidationError("lambda must be a finite non-negative number");
  }
  std::vector<double> out(a_q.size());
  for (std::size_t i = 0; i < a_q.size(); ++i) {
    if (!(a_g[i] >= 0.0) || !(a_q[i] >= 0.0)) {
      throw ValidationError("attention weights must be non-negative");
    }
    const double denom = a_g[i] + cfg.lambda;
    if (!(denom > 0.0)) {
      throw ValidationError(fmt::format("lambda = 0 with zero general attention at token {}", i));
    }
    out[i] = a_q[i] / denom;
  }
  return out;
}

std::vector<double> contrast_refine(const attention::AttentionMap& a_q,
                                    const attention::AttentionMap& a_g, const ContrastConfig& cfg) {
  if (a_q.grid_h != a_g.grid_h || a_q.grid_w != a_g.grid_w) {
    throw ValidationError(fmt::format("grid mismatch: {}x{} vs {}x{}", a_q.grid_h, a_q.grid_w,
                                      a_g.grid_h, a_g.grid_w));
  }
  const std::vector<double> q(a_q.weights.begin(), a_q.weights.end());
  const std::vector<double> g(a_g.weights.begin(), a_g.weights.end());
  return contrast_refine(q, g, cfg);
}

Saliency spatial_reshape(std::span<const double> grid, int grid_h, int grid_w, int target_h,
                         int target_w, ReshapeMode mode) {
  if (grid_h < 1 || grid_w < 1 ||
      grid.size() != static_cast<std::size_t>(grid_h) * static_cast<std::size_t>(grid_w)) {
    throw ValidationError("token grid does not match its dimensions");
  }
  if (target_h < grid_h || target_w < grid_w) {
    throw ValidationError(fmt::format("target {}x{} is smaller than token grid {}x{}", target_h,
                                      target_w, grid_h, grid_w));
  }
  Saliency out{target_h, target_w,
               std::vector<double>(static_cast<std::size_t>(target_h) * target_w)};
  auto token = [&](int r, int c) { return grid[static_cast<std::size_t>(r) * grid_w + c]; };

  if (mode == ReshapeMode::Nearest) {
    for (int y = 0; y < target_h; ++y) {
      const int r = static_cast<int>(static_cast<long long>(y) * grid_h / target_h);
      for (int x = 0; x < target_w; ++x) {
        const int c = static_cast<int>(static_cast<long long>(x) * grid_w / target_w);
        out.values[static_cast<std::size_t>(y) * target_w + x] = token(r, c);
      }
    }
    return out;
  }

  for (int y = 0; y < target_h; ++y) {
    const double sy = std::clamp((y + 0.5) * grid_h / target_h - 0.5, 0.0, grid_h - 1.0);
    const int r0 = static_cast<int>(std::floor(sy));
    const int r1 = std::min(r0 + 1, grid_h - 1);
    const double fy = sy - r0;
    for (int x = 0; x < target_w; ++x) {
      const double sx = std::clamp((x + 0.5) * grid_w / target_w - 0.5, 0.0, grid_w - 1.0);
      const int c0 = static_cast<int>(std::floor(sx));
      const int c1 = std::min(c0 + 1, grid_w - 1);
      const double fx = sx - c0;
      const double top = token(r0, c0) * (1.0 - fx) + token(r0, c1) * fx;
      const double bottom = token(r1, c0) * (1.0 - fx) + token(r1, c1) * fx;
      out.values[static_cast<std::size_t>(y) * target_w + x] = top * (1.0 - fy) + bottom * fy;
    }
  }
  return out;
}

const std::vector<double>& RefinedSet::get(int layer, int step) const {
  const auto li = std::find(layers.begin(), layers.end(), layer);
  const auto si = std::find(steps.begin(), steps.end(), step);
  if (li == layers.end() || si == steps.end()) {
    throw ValidationError(fmt::format("refined map (layer {}, step {}) missing", layer, step));
  }
  return maps[static_cast<std::size_t>(si - steps.begin()) * layers.size() +
              static_cast<std::size_t>(li - layers.begin())];
}

Saliency fuse(const RefinedSet& refined, std::span<const int> layers, std::span<const int> steps,
              int target_h, int target_w, ReshapeMode mode) {
  if (layers.empty() || steps.empty()) throw ValidationError("fusion needs at least one layer and step");
  const int t_start = *std::min_element(steps.begin(), steps.end());
  Saliency sum{target_h, target_w,
               std::vector<double>(static_cast<std::size_t>(target_h) * target_w, 0.0)};
  for (int t : steps) {
    const double weight = static_cast<double>(t - t_start + 1);
    for (int l : layers) {
      const auto field =
          spatial_reshape(refined.get(l, t), refined.grid_h, refined.grid_w, target_h, target_w, mode);
      for (std::size_t i = 0; i < sum.values.size(); ++i) sum.values[i] += weight * field.values[i];
    }
  }
  return sum;
}

std::vector<int> select_steps(const attention::AttentionStack& stack, StepSelector selector) {
  switch (selector) {
    case StepSelector::Start: return {stack.t_start()};
    case StepSelector::End: return {stack.t_end()};
    case StepSelector::Full: return stack.steps();
  }
  return stack.steps();
}

RefinedSet refine_stacks(const attention::AttentionStack& q, const attention::AttentionStack& g,
                         std::span<const int> layers, std::span<const int> steps,
                         const ContrastConfig& cfg) {
  if (q.grid_h() != g.grid_h() || q.grid_w() != g.grid_w()) {
    throw ValidationError(fmt::format("question grid {}x{} differs from general grid {}x{}",
                                      q.grid_h(), q.grid_w(), g.grid_h(), g.grid_w()));
  }
  RefinedSet out;
  out.grid_h = q.grid_h();
  out.grid_w = q.grid_w();
  out.layers.assign(layers.begin(), layers.end());
  out.steps.assign(steps.begin(), steps.end());
  out.maps.reserve(layers.size() * steps.size());
  for (int t : steps) {
    for (int l : layers) out.maps.push_back(contrast_refine(q.map(l, t), g.map(l, t), cfg));
  }
  return out;
}

}  // namespace carve::contrast
