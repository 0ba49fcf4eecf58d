#include "carve/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <fmt/core.h>

#include "carve/contrast.hpp"
#include "carve/error.hpp"

namespace carve::oracle {

// splitmix64
std::uint64_t Rng::next() noexcept {
  std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

double Rng::uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

int Rng::uniform_int(int lo, int hi) noexcept {
  const auto span = static_cast<std::uint64_t>(hi - lo + 1);
  return lo + static_cast<int>(next() % span);
}

double Rng::normal() noexcept {
  if (spare_) {
    const double v = *spare_;
    spare_.reset();
    return v;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  spare_ = r * std::sin(2.0 * M_PI * u2);
  return r * std::cos(2.0 * M_PI * u2);
}

namespace {

void check_unit(double v, const char* name) {
  if (!(v >= 0.0 && v <= 1.0)) throw ValidationError(fmt::format("{} must be in [0, 1], got {}", name, v));
}

}  // namespace

DecompositionSpec synth_spec(const SynthOptions& o) {
  if (o.grid_h < 1 || o.grid_w < 1) throw ValidationError("synthetic grid must be at least 1x1");
  check_unit(o.vis_roughness, "roughness");
  check_unit(o.sem_concentration, "concentration");
  if (!(o.delta >= 0.0 && o.delta < 1.0)) throw ValidationError("delta must be in [0, 1)");
  if (o.sem_block) {
    const TokenBlock& b = *o.sem_block;
    if (b.rows < 1 || b.cols < 1 || b.row < 0 || b.col < 0 || b.row + b.rows > o.grid_h ||
        b.col + b.cols > o.grid_w) {
      throw ValidationError("semantic block lies outside the token grid");
    }
  }

  Rng rng(o.seed);
  DecompositionSpec spec;
  spec.grid_h = o.grid_h;
  spec.grid_w = o.grid_w;
  spec.delta = o.delta;
  const auto n = static_cast<std::size_t>(spec.n_v());
  spec.f_vis.resize(n);
  spec.f_sem.resize(n);
  spec.epsilon.resize(n);

  const double vis_cy = rng.uniform(0.2, 0.8);
  const double vis_cx = rng.uniform(0.2, 0.8);
  const double sharpness = 40.0 * (1.0 - o.vis_roughness);
  const double noise = 0.5 * o.vis_roughness;
  const double sem_cy = rng.uniform(0.15, 0.85);
  const double sem_cx = rng.uniform(0.15, 0.85);
  constexpr double kSemWidth = 0.12;
  constexpr double kSemPeak = 9.0;

  for (int r = 0; r < o.grid_h; ++r) {
    for (int c = 0; c < o.grid_w; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * o.grid_w + c;
      const double v = (r + 0.5) / o.grid_h;
      const double u = (c + 0.5) / o.grid_w;
      const double dv = (v - vis_cy) * (v - vis_cy) + (u - vis_cx) * (u - vis_cx);
      spec.f_vis[i] = std::exp(-sharpness * dv + noise * rng.normal());

      double bump = 0.0;
      if (o.sem_block) {
        const TokenBlock& b = *o.sem_block;
        bump = (r >= b.row && r < b.row + b.rows && c >= b.col && c < b.col + b.cols) ? 1.0 : 0.0;
      } else {
        const double ds = (v - sem_cy) * (v - sem_cy) + (u - sem_cx) * (u - sem_cx);
        bump = std::exp(-ds / (2.0 * kSemWidth * kSemWidth));
      }
      spec.f_sem[i] = 1.0 + kSemPeak * o.sem_concentration * bump;
      spec.epsilon[i] = o.delta > 0.0 ? rng.uniform(-o.delta, o.delta) : 0.0;
    }
  }
  return spec;
}

std::pair<std::vector<double>, std::vector<double>> compose(const DecompositionSpec& spec) {
  std::vector<double> q(spec.f_vis.size());
  std::vector<double> g(spec.f_vis.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    q[i] = spec.f_vis[i] * spec.f_sem[i];
    g[i] = spec.f_vis[i] * (1.0 + spec.epsilon[i]);
  }
  return {std::move(q), std::move(g)};
}

SynthResult synth_decomposition(const SynthOptions& o) {
  if (o.layers.empty() || o.steps < 1) throw ValidationError("synthetic stacks need layers and steps");
  DecompositionSpec spec = synth_spec(o);
  const auto n = static_cast<std::size_t>(spec.n_v());

  attention::AttentionStack::Header hq;
  hq.model_id = o.model_id;
  hq.grid_h = o.grid_h;
  hq.grid_w = o.grid_w;
  hq.layers = o.layers;
  for (int t = 0; t < o.steps; ++t) {
    hq.steps.push_back(t);
    hq.generated_tokens.push_back(fmt::format("tok{}", t));
  }
  attention::AttentionStack::Header hg = hq;
  hq.prompt_kind = attention::PromptKind::Question;
  hq.prompt_text = "synthetic question";
  hg.prompt_kind = attention::PromptKind::General;
  hg.prompt_text = attention::kGeneralInstruction;

  std::vector<float> pq;
  std::vector<float> pg;
  pq.reserve(o.layers.size() * o.steps * n);
  pg.reserve(o.layers.size() * o.steps * n);
  std::vector<double> q(n);
  std::vector<double> g(n);
  for (std::size_t li = 0; li < o.layers.size(); ++li) {
    const double gamma = 1.0 + 0.1 * static_cast<double>(li);
    double sq = 0.0;
    double sg = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double vis = std::pow(spec.f_vis[i], gamma);
      q[i] = vis * spec.f_sem[i];
      g[i] = vis * (1.0 + spec.epsilon[i]);
      sq += q[i];
      sg += g[i];
    }
    for (int t = 0; t < o.steps; ++t) {
      for (std::size_t i = 0; i < n; ++i) {
        pq.push_back(static_cast<float>(q[i] / sq));
        pg.push_back(static_cast<float>(g[i] / sg));
      }
    }
  }
  return SynthResult{attention::AttentionStack(std::move(hq), std::move(pq)),
                     attention::AttentionStack(std::move(hg), std::move(pg)), std::move(spec)};
}

imaging::ImageRGB synth_image(std::uint64_t seed, int height, int width, double roughness) {
  check_unit(roughness, "roughness");
  Rng rng(seed ^ 0xA5A5A5A5DEADBEEFull);
  const auto base_hue = rng.uniform(0.0, 360.0);
  auto hsv = [](double hue, double sat, double val) {
    const double c = val * sat;
    const double hp = std::fmod(hue, 360.0) / 60.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1) { r = c; g = x; }
    else if (hp < 2) { r = x; g = c; }
    else if (hp < 3) { g = c; b = x; }
    else if (hp < 4) { g = x; b = c; }
    else if (hp < 5) { r = x; b = c; }
    else { r = c; b = x; }
    const double m = val - c;
    auto q = [](double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L)); };
    return imaging::Rgb{q(r + m), q(g + m), q(b + m)};
  };

  imaging::ImageRGB img(height, width, hsv(base_hue, 0.35, 0.6));
  const int rects = static_cast<int>(std::lround(roughness * 80.0));
  const double hue_spread = 20.0 + 340.0 * roughness;
  for (int k = 0; k < rects; ++k) {
    const int rh = std::max(2, static_cast<int>(height * rng.uniform(0.04, 0.2)));
    const int rw = std::max(2, static_cast<int>(width * rng.uniform(0.04, 0.2)));
    const int y0 = rng.uniform_int(0, std::max(0, height - rh));
    const int x0 = rng.uniform_int(0, std::max(0, width - rw));
    const auto color = hsv(base_hue + rng.uniform(0.0, hue_spread), rng.uniform(0.5, 1.0),
                           rng.uniform(0.3, 1.0));
    for (int y = y0; y < std::min(height, y0 + rh); ++y) {
      for (int x = x0; x < std::min(width, x0 + rw); ++x) img.at(y, x) = color;
    }
  }
  return img;
}

double objective(std::span<const double> x, std::span<const double> a_q,
                 std::span<const double> a_g, double lambda) {
  double j = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = x[i] * a_g[i] - a_q[i];
    j += r * r + lambda * x[i] * x[i] * a_g[i];
  }
  return j;
}

std::vector<double> solve_numeric(std::span<const double> a_q, std::span<const double> a_g,
                                  double lambda, double tolerance) {
  if (a_q.size() != a_g.size()) throw ValidationError("attention size mismatch");
  if (!(lambda > 0.0)) throw ValidationError("lambda must be positive");
  constexpr double kInvPhi = 0.6180339887498949;
  std::vector<double> out(a_q.size(), 0.0);
  for (std::size_t i = 0; i < a_q.size(); ++i) {
    const double q = a_q[i];
    const double g = a_g[i];
    if (g < 0.0) throw ValidationError("general attention must be non-negative");
    if (g == 0.0) continue;
    // f(x) = a x^2 - 2 q g x + q^2 with a = g^2 + lambda g. Golden section
    // only needs the sign of f(u) - f(v) = (u - v)(a (u + v) - 2 q g); taking
    // it in this factored form avoids the cancellation of q^2 that would
    // otherwise cap the resolution at about sqrt(machine epsilon) * |x|.
    const double a = g * g + lambda * g;
    auto lower = [&](double u, double v) { return (u - v) * (a * (u + v) - 2.0 * q * g) < 0.0; };
    // The minimizer is non-negative and no larger than q / g.
    double lo = std::min(0.0, q / g) - 1.0;
    double hi = std::max(0.0, q / g) + 1.0;
    double c = hi - kInvPhi * (hi - lo);
    double d = lo + kInvPhi * (hi - lo);
    while (hi - lo > tolerance * std::max(1.0, std::abs(hi))) {
      if (lower(c, d)) {
        hi = d;
        d = c;
        c = hi - kInvPhi * (hi - lo);
      } else {
        lo = c;
        c = d;
        d = lo + kInvPhi * (hi - lo);
      }
    }
    out[i] = 0.5 * (lo + hi);
  }
  return out;
}

double recovery_error_bound(double delta, double f_sem_max) {
  if (!(delta >= 0.0 && delta < 1.0)) throw ValidationError("delta must be in [0, 1)");
  return delta * f_sem_max / (1.0 - delta);
}

OptimalLambda optimal_lambda(const LambdaStats& s) {
  if (!(s.mu > 0.0)) throw ValidationError("mu must be positive");
  if (!(s.sigma2 >= 0.0)) throw ValidationError("sigma2 must be non-negative");
  return OptimalLambda{s.mu * (std::sqrt(1.0 + 2.0 * s.sigma2 / (s.mu * s.mu)) - 1.0),
                       s.sigma2 / s.mu};
}

ConditionBound condition_bound(std::span<const double> a_g, double lambda) {
  if (!(lambda > 0.0)) throw ValidationError("lambda must be positive");
  if (a_g.empty()) throw ValidationError("general attention is empty");
  const auto [mn, mx] = std::minmax_element(a_g.begin(), a_g.end());
  if (*mn < 0.0) throw ValidationError("general attention must be non-negative");
  ConditionBound cb{(*mx + lambda) / lambda, (*mx + lambda) / (*mn + lambda)};
  if (cb.exact > cb.bound * (1.0 + 1e-12)) {
    throw std::logic_error("condition number exceeds its bound");
  }
  return cb;
}

double CostParams::alpha_from_layers(int l_end, int l_total) {
  if (l_total < 1 || l_end < 1 || l_end > l_total) {
    throw ValidationError(fmt::format("need 1 <= l_end <= l_total, got {} / {}", l_end, l_total));
  }
  return static_cast<double>(l_end) / static_cast<double>(l_total);
}

CostResult cost_model(const CostParams& p) {
  if (!(p.alpha > 0.0 && p.alpha <= 1.0)) throw ValidationError("alpha must be in (0, 1]");
  if (!(p.rho >= 0.0 && p.rho <= 1.0)) throw ValidationError("rho must be in [0, 1]");
  if (p.n_layers < 1 || p.n_steps < 1 || p.n_v < 1) {
    throw ValidationError("layer, step and token counts must be positive");
  }
  CostResult r;
  r.eta1 = 2.0 * (1.0 - p.alpha) / 3.0;
  r.s_cache = 3.0 / (1.0 + p.alpha);
  r.s_combined = 3.0 / ((2.0 - p.rho) * p.alpha + 1.0);
  r.memory_bytes = static_cast<std::uint64_t>(p.n_layers) * static_cast<std::uint64_t>(p.n_steps) *
                   static_cast<std::uint64_t>(p.n_v) * CostParams::kBytesPerElement;
  return r;
}

std::vector<std::pair<int, int>> entropy_monotonicity_report(std::span<const int> layers,
                                                             std::span<const double> entropies) {
  if (layers.size() != entropies.size()) throw ValidationError("layer and entropy counts differ");
  std::vector<std::pair<int, int>> out;
  for (std::size_t i = 1; i < entropies.size(); ++i) {
    if (entropies[i] > entropies[i - 1] + 1e-9) out.emplace_back(layers[i - 1], layers[i]);
  }
  return out;
}

std::vector<std::pair<int, int>> entropy_monotonicity_report(const attention::AttentionStack& stack,
                                                             int step) {
  const auto h = attention::layer_entropies(stack, step);
  return entropy_monotonicity_report(stack.layers(), h);
}

std::vector<RecoveryTrial> recovery_experiment(std::uint64_t base_seed, int trials, double delta,
                                               double lambda_scale, int grid) {
  if (trials < 1) throw ValidationError("trial count must be at least 1");
  std::vector<RecoveryTrial> out;
  out.reserve(static_cast<std::size_t>(trials));
  for (int k = 0; k < trials; ++k) {
    const std::uint64_t seed = base_seed + static_cast<std::uint64_t>(k);
    Rng knobs(seed * 7919u + 17u);
    SynthOptions o;
    o.seed = seed;
    o.grid_h = grid;
    o.grid_w = grid;
    o.delta = delta;
    o.vis_roughness = knobs.uniform();
    o.sem_concentration = knobs.uniform();
    const DecompositionSpec spec = synth_spec(o);
    const auto [q, g] = compose(spec);
    const double lambda = lambda_scale * *std::min_element(spec.f_vis.begin(), spec.f_vis.end());
    const auto refined = contrast::contrast_refine(q, g, contrast::ContrastConfig{lambda});
    double err = 0.0;
    for (std::size_t i = 0; i < refined.size(); ++i) {
      err = std::max(err, std::abs(refined[i] - spec.f_sem[i]));
    }
    const double f_sem_max = *std::max_element(spec.f_sem.begin(), spec.f_sem.end());
    out.push_back(RecoveryTrial{seed, delta, lambda, err, recovery_error_bound(delta, f_sem_max),
                                f_sem_max});
  }
  return out;
}

void write_recovery_csv(std::span<const RecoveryTrial> trials, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << "seed,delta,lambda,observed_error,bound\n";
  for (const auto& t : trials) {
    out << fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g}\n", t.seed, t.delta, t.lambda,
                       t.observed_error, t.bound);
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace carve::oracle
