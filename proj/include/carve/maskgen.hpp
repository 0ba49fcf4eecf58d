#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "carve/attention.hpp"
#include "carve/contrast.hpp"
#include "carve/imaging.hpp"

namespace carve::maskgen {

/// Inclusive pixel bounding box.
struct BBox {
  int top = 0;
  int left = 0;
  int bottom = 0;
  int right = 0;

  int height() const noexcept { return bottom - top + 1; }
  int width() const noexcept { return right - left + 1; }
  friend bool operator==(const BBox&, const BBox&) = default;
};

struct Region {
  std::vector<std::uint32_t> pixels;  // row-major indices, ascending
  double cumulative_score = 0.0;
  BBox bbox;
};

/// Row-major binary H x W mask.
struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;
};

struct CarveMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;
  std::vector<Region> regions_kept;

  bool empty() const noexcept { return regions_kept.empty(); }
};

enum class ResizePolicy { Stretch, FitPad };
enum class Interpolation { Nearest, Bilinear };

const char* to_string(ResizePolicy policy) noexcept;
const char* to_string(Interpolation interp) noexcept;
ResizePolicy resize_policy_from_string(const std::string& s);
Interpolation interpolation_from_string(const std::string& s);

struct CarveConfig {
  double p = 0.4;
  int k = 2;
  int connectivity = 8;
  imaging::Rgb fill{0, 0, 0};
  ResizePolicy resize_policy = ResizePolicy::FitPad;
  Interpolation resize_interp = Interpolation::Bilinear;
  double lambda = 0.05;
  int layer_start = 20;
  int layer_end = 25;
  contrast::StepSelector steps = contrast::StepSelector::Full;
  contrast::ReshapeMode reshape = contrast::ReshapeMode::Nearest;

  /// Throws ValidationError naming the first offending field.
  void validate() const;
};

/// Nearest-rank threshold: the k-th largest value with k = ceil(p * H * W).
/// Every pixel >= the returned value is retained, ties included.
double percentile_threshold(std::span<const double> values, double p);

BinaryMask threshold_mask(const contrast::Saliency& s, double tau);

/// Maximal connected sets of set pixels, ordered by (bbox.top, bbox.left,
/// first pixel). Scores are summed from `s` when given, else zero.
std::vector<Region> connected_components(const BinaryMask& mask, int connectivity,
                                         const contrast::Saliency* s = nullptr);

/// Keeps the top min(k, |regions|) regions by score; equal scores keep the
/// earlier region in component order.
CarveMask select_regions(const std::vector<Region>& regions, int height, int width, int k);

struct ExtractResult {
  imaging::ImageRGB image;
  bool fallback = false;  // empty mask, original returned
  BBox crop{};
};

/// Fills pixels outside the mask, crops to the mask's tight box, and resizes
/// back to the original dimensions.
ExtractResult extract(const imaging::ImageRGB& image, const CarveMask& mask, const CarveConfig& cfg);

/// Resize an image to exactly (height, width).
imaging::ImageRGB resize(const imaging::ImageRGB& src, int height, int width, Interpolation interp);

/// Fills the floor(ratio * H * W) lowest-saliency pixels. Ties keep raster order.
imaging::ImageRGB progressive_mask(const imaging::ImageRGB& image, const contrast::Saliency& s,
                                   double ratio, imaging::Rgb fill);

struct Diagnostics {
  double tau = 0.0;
  std::size_t retained_pixels = 0;
  std::vector<Region> regions;  // all thresholded regions, component order
  std::vector<std::size_t> kept;  // indices into regions, selection order
  bool fallback = false;
  BBox crop{};
  std::vector<int> layers;
  std::vector<int> steps;
  std::vector<double> question_entropies;  // per layer at t_end
  std::vector<double> general_entropies;
  double question_overall_entropy = 0.0;
  double general_overall_entropy = 0.0;
};

struct PipelineResult {
  imaging::ImageRGB image;
  contrast::Saliency saliency;
  CarveMask mask;
  Diagnostics diagnostics;
};

/// Fused saliency at the image's resolution for the configured layers/steps.
contrast::Saliency fused_saliency(const attention::AttentionStack& q,
                                  const attention::AttentionStack& g, int height, int width,
                                  const CarveConfig& cfg);

/// contrast -> reshape -> fuse -> threshold -> components -> select -> extract.
PipelineResult carve_pipeline(const imaging::ImageRGB& image, const attention::AttentionStack& q,
                              const attention::AttentionStack& g, const CarveConfig& cfg);

/// Deterministic JSON (sorted keys) for a diagnostics sidecar.
std::string diagnostics_json(const Diagnostics& d, const CarveConfig& cfg);

}  // namespace carve::maskgen
