#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "carve/attention.hpp"
#include "carve/imaging.hpp"

namespace carve::oracle {

/// Small deterministic generator. Output is identical across platforms and
/// standard libraries, unlike the std distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() noexcept;
  double uniform() noexcept;  // [0, 1)
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  int uniform_int(int lo, int hi) noexcept;  // inclusive
  double normal() noexcept;

 private:
  std::uint64_t state_;
  std::optional<double> spare_;
};

/// Token-grid rectangle, in token units.
struct TokenBlock {
  int row = 0;
  int col = 0;
  int rows = 1;
  int cols = 1;
};

/// Raw factors of one synthetic decomposition:
///   A_q = f_vis * f_sem, A_g = f_vis * (1 + epsilon), |epsilon| <= delta.
struct DecompositionSpec {
  int grid_h = 0;
  int grid_w = 0;
  std::vector<double> f_vis;
  std::vector<double> f_sem;
  std::vector<double> epsilon;
  double delta = 0.0;

  int n_v() const noexcept { return grid_h * grid_w; }
};

struct SynthOptions {
  std::uint64_t seed = 0;
  int grid_h = 16;
  int grid_w = 16;
  std::vector<int> layers{20, 21, 22, 23, 24, 25};
  int steps = 10;
  double vis_roughness = 0.5;      // [0, 1]
  double sem_concentration = 1.0;  // [0, 1]
  double delta = 0.0;              // [0, 1)
  std::optional<TokenBlock> sem_block;  // semantic peak shape; a bump when absent
  std::string model_id = "synthetic";
};

struct SynthResult {
  attention::AttentionStack question;
  attention::AttentionStack general;
  DecompositionSpec spec;
};

/// Draws the factors only.
///
/// The visual factor is log-normal: a smooth hot spot whose sharpness falls
/// with roughness plus token noise whose log-std is 0.5 * roughness, so
/// rougher scenes spread attention more. The semantic factor is
/// 1 + 9 * concentration on a Gaussian bump (or on `sem_block`).
DecompositionSpec synth_spec(const SynthOptions& options);

/// Raw (unnormalized) compositions of a spec.
std::pair<std::vector<double>, std::vector<double>> compose(const DecompositionSpec& spec);

/// Normalized question/general stacks over options.layers x [0, steps).
/// Deeper layers sharpen the visual factor (f_vis^(1 + 0.1 * index)).
SynthResult synth_decomposition(const SynthOptions& options);

/// Scene whose clutter (rectangle count and palette) grows with roughness.
imaging::ImageRGB synth_image(std::uint64_t seed, int height, int width, double roughness);

/// sum_i (x_i g_i - q_i)^2 + lambda sum_i x_i^2 g_i
double objective(std::span<const double> x, std::span<const double> a_q,
                 std::span<const double> a_g, double lambda);

/// Per-coordinate golden-section minimization of the objective; does not use
/// the closed form. Coordinates with a_g == 0 return 0.
std::vector<double> solve_numeric(std::span<const double> a_q, std::span<const double> a_g,
                                  double lambda, double tolerance = 1e-9);

double recovery_error_bound(double delta, double f_sem_max);

struct LambdaStats {
  double mu = 1.0;
  double sigma2 = 0.0;
};

struct OptimalLambda {
  double exact = 0.0;
  double approx = 0.0;
};

OptimalLambda optimal_lambda(const LambdaStats& stats);

struct ConditionBound {
  double bound = 0.0;
  double exact = 0.0;
};

ConditionBound condition_bound(std::span<const double> a_g, double lambda);

struct CostParams {
  double alpha = 25.0 / 28.0;  // l_end / l_total
  double rho = 0.3;            // cache hit rate
  int n_layers = 5;
  int n_steps = 10;
  int n_v = 1024;
  static constexpr int kBytesPerElement = 4;

  static double alpha_from_layers(int l_end, int l_total);
};

struct CostResult {
  double eta1 = 0.0;
  double s_cache = 0.0;
  double s_combined = 0.0;
  std::uint64_t memory_bytes = 0;
};

CostResult cost_model(const CostParams& params);

/// Adjacent pairs (a, b) in order where H(b) > H(a) + 1e-9.
std::vector<std::pair<int, int>> entropy_monotonicity_report(std::span<const int> layers,
                                                             std::span<const double> entropies);
std::vector<std::pair<int, int>> entropy_monotonicity_report(const attention::AttentionStack& stack,
                                                             int step);

struct RecoveryTrial {
  std::uint64_t seed = 0;
  double delta = 0.0;
  double lambda = 0.0;
  double observed_error = 0.0;
  double bound = 0.0;        // delta * max f_sem / (1 - delta)
  double f_sem_max = 0.0;
};

/// One trial per seed in [base_seed, base_seed + trials): lambda is set to
/// lambda_scale * min f_vis.
std::vector<RecoveryTrial> recovery_experiment(std::uint64_t base_seed, int trials, double delta,
                                               double lambda_scale = 1e-3, int grid = 16);

/// CSV with header seed,delta,lambda,observed_error,bound.
void write_recovery_csv(std::span<const RecoveryTrial> trials, const std::filesystem::path& path);

}  // namespace carve::oracle
