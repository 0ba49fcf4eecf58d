#pragma once

#include <span>
#include <vector>

#include "carve/attention.hpp"

namespace carve::contrast {

struct ContrastConfig {
  double lambda = 0.05;
};

/// Dense H x W non-negative field. Row-major.
struct Saliency {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  double at(int y, int x) const {
    return values[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                  static_cast<std::size_t>(x)];
  }
};

enum class ReshapeMode { Nearest, Bilinear };

/// Which generation steps enter the fusion.
enum class StepSelector { Start, End, Full };

const char* to_string(ReshapeMode mode) noexcept;
const char* to_string(StepSelector selector) noexcept;
ReshapeMode reshape_mode_from_string(const std::string& s);
StepSelector step_selector_from_string(const std::string& s);

/// Element-wise a_q / (a_g + lambda): the unique minimizer of
///   sum_i (x_i a_g_i - a_q_i)^2 + lambda sum_i x_i^2 a_g_i.
/// lambda == 0 is accepted only when every a_g entry is strictly positive.
std::vector<double> contrast_refine(std::span<const double> a_q, std::span<const double> a_g,
                                    const ContrastConfig& cfg);
std::vector<double> contrast_refine(const attention::AttentionMap& a_q,
                                    const attention::AttentionMap& a_g, const ContrastConfig& cfg);

/// Lays a row-major token grid onto target_h x target_w pixels.
/// Nearest assigns each pixel the token that covers it; bilinear samples token
/// centers with edge clamping.
Saliency spatial_reshape(std::span<const double> grid, int grid_h, int grid_w, int target_h,
                         int target_w, ReshapeMode mode = ReshapeMode::Nearest);

/// Refined token maps for a set of (layer, step) pairs, all on one grid.
struct RefinedSet {
  int grid_h = 0;
  int grid_w = 0;
  std::vector<int> layers;
  std::vector<int> steps;
  // maps[step_index * layers.size() + layer_index]
  std::vector<std::vector<double>> maps;

  const std::vector<double>& get(int layer, int step) const;
};

/// S = sum_t w_t sum_l reshape(refined(l, t)), w_t = t - min(steps) + 1.
/// Sums run step-outer, layer-inner in the given order.
Saliency fuse(const RefinedSet& refined, std::span<const int> layers, std::span<const int> steps,
              int target_h, int target_w, ReshapeMode mode = ReshapeMode::Nearest);

/// Resolve a step selector against a stack's step list.
std::vector<int> select_steps(const attention::AttentionStack& stack, StepSelector selector);

/// Contrast every (l, t) in layers x steps between two stacks on the same grid.
RefinedSet refine_stacks(const attention::AttentionStack& q, const attention::AttentionStack& g,
                         std::span<const int> layers, std::span<const int> steps,
                         const ContrastConfig& cfg);

}  // namespace carve::contrast
