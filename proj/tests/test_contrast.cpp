#include <doctest.h>

#include "carve/contrast.hpp"
#include "carve/error.hpp"
#include "carve/oracle.hpp"

using namespace carve;
using namespace carve::contrast;

namespace {

attention::AttentionStack constant_stack(int gh, int gw, std::vector<int> layers,
                                         std::vector<int> steps,
                                         attention::PromptKind kind = attention::PromptKind::Question) {
  attention::AttentionStack::Header h;
  h.prompt_kind = kind;
  h.grid_h = gh;
  h.grid_w = gw;
  h.layers = std::move(layers);
  h.steps = std::move(steps);
  h.generated_tokens.assign(h.steps.size(), "x");
  const std::size_t n = static_cast<std::size_t>(gh) * gw;
  std::vector<float> payload(n * h.layers.size() * h.steps.size(), 1.0f / static_cast<float>(n));
  return attention::AttentionStack(std::move(h), std::move(payload));
}

}  // namespace

TEST_CASE("contrast refine closed form") {
  const std::vector<double> q{0.2};
  const std::vector<double> g{0.1};
  CHECK(contrast_refine(q, g, {0.05})[0] == doctest::Approx(0.2 / 0.15));
  CHECK(contrast_refine(q, g, {0.05})[0] == doctest::Approx(1.3333).epsilon(1e-4));
}

TEST_CASE("identical maps refine to one as lambda vanishes") {
  const std::vector<double> a{0.1, 0.2, 0.3, 0.4};
  for (double v : contrast_refine(a, a, {1e-12})) CHECK(v == doctest::Approx(1.0).epsilon(1e-9));
  for (double v : contrast_refine(a, a, {0.0})) CHECK(v == 1.0);
}

TEST_CASE("contrast refine validation") {
  const std::vector<double> a{0.5, 0.5};
  const std::vector<double> b{0.25, 0.25, 0.5};
  const std::vector<double> z{0.0, 1.0};
  CHECK_THROWS_AS(contrast_refine(a, b, {}), ValidationError);
  CHECK_THROWS_AS(contrast_refine(a, a, {-0.1}), ValidationError);
  CHECK_THROWS_AS(contrast_refine(a, z, {0.0}), ValidationError);
  CHECK_NOTHROW(contrast_refine(a, z, {0.01}));
}

TEST_CASE("map-level contrast rejects mismatched grids") {
  const auto s14 = constant_stack(14, 14, {0}, {0});
  const auto s16 = constant_stack(16, 16, {0}, {0});
  CHECK_THROWS_AS(contrast_refine(s14.map(0, 0), s16.map(0, 0), {}), ValidationError);
}

TEST_CASE("contrast matches the numerical minimizer") {
  oracle::Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = rng.uniform_int(1, 64);
    std::vector<double> q(n), g(n);
    for (int i = 0; i < n; ++i) {
      q[i] = rng.uniform();
      g[i] = rng.uniform();
    }
    const double lambda = rng.uniform(1e-3, 1.0);
    const auto closed = contrast_refine(q, g, {lambda});
    const auto numeric = oracle::solve_numeric(q, g, lambda);
    for (int i = 0; i < n; ++i) CHECK(std::abs(closed[i] - numeric[i]) < 1e-6);
  }
}

TEST_CASE("spatial reshape") {
  const std::vector<double> one{7.5};
  const auto c = spatial_reshape(one, 1, 1, 3, 5);
  CHECK(c.height == 3);
  CHECK(c.width == 5);
  for (double v : c.values) CHECK(v == 7.5);
  const auto cb = spatial_reshape(one, 1, 1, 3, 5, ReshapeMode::Bilinear);
  for (double v : cb.values) CHECK(v == 7.5);

  const std::vector<double> g{1, 2, 3, 4};
  const auto s = spatial_reshape(g, 2, 2, 4, 4);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) CHECK(s.at(y, x) == g[(y / 2) * 2 + x / 2]);
  }
  CHECK_THROWS_AS(spatial_reshape(g, 2, 2, 1, 1), ValidationError);
  CHECK_THROWS_AS(spatial_reshape(g, 2, 3, 4, 4), ValidationError);
}

TEST_CASE("bilinear reshape interpolates between token centres") {
  const std::vector<double> g{0, 4};
  const auto s = spatial_reshape(g, 1, 2, 1, 4, ReshapeMode::Bilinear);
  // token centres sit at pixel centres 0.5 and 2.5 of a 4-wide row.
  CHECK(s.at(0, 0) == doctest::Approx(0.0));
  CHECK(s.at(0, 1) == doctest::Approx(1.0));
  CHECK(s.at(0, 2) == doctest::Approx(3.0));
  CHECK(s.at(0, 3) == doctest::Approx(4.0));
}

TEST_CASE("fuse weights steps linearly from the first selected step") {
  RefinedSet r;
  r.grid_h = 1;
  r.grid_w = 1;
  r.layers = {20, 21};
  r.steps = {4, 5};
  const double u = 0.3;
  const double v = 0.7;
  r.maps = {{u}, {u}, {v}, {v}};
  const std::vector<int> layers{20, 21};
  const std::vector<int> steps{4, 5};
  const auto s = fuse(r, layers, steps, 2, 2);
  for (double x : s.values) CHECK(x == doctest::Approx(2 * (1 * u + 2 * v)));

  const std::vector<int> last{5};
  for (double x : fuse(r, layers, last, 2, 2).values) CHECK(x == doctest::Approx(2 * v));

  const std::vector<int> one_layer{21};
  const auto single = fuse(r, one_layer, last, 1, 1);
  CHECK(single.values[0] == v);
}

TEST_CASE("fuse is linear in its inputs") {
  oracle::Rng rng(4);
  RefinedSet r;
  r.grid_h = 3;
  r.grid_w = 2;
  r.layers = {0, 1, 2};
  r.steps = {0, 1};
  for (int i = 0; i < 6; ++i) {
    std::vector<double> m(6);
    for (auto& x : m) x = rng.uniform();
    r.maps.push_back(m);
  }
  RefinedSet scaled = r;
  for (auto& m : scaled.maps) {
    for (auto& x : m) x *= 3.0;
  }
  const std::vector<int> steps{0, 1};
  const auto a = fuse(r, r.layers, steps, 6, 4);
  const auto b = fuse(scaled, r.layers, steps, 6, 4);
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    CHECK(b.values[i] == doctest::Approx(3.0 * a.values[i]).epsilon(1e-12));
  }
}

TEST_CASE("step selection") {
  const auto s = constant_stack(2, 2, {0}, {3, 4, 5});
  CHECK(select_steps(s, StepSelector::Start) == std::vector<int>{3});
  CHECK(select_steps(s, StepSelector::End) == std::vector<int>{5});
  CHECK(select_steps(s, StepSelector::Full) == std::vector<int>{3, 4, 5});
  CHECK(step_selector_from_string("full") == StepSelector::Full);
  CHECK_THROWS_AS(step_selector_from_string("middle"), ValidationError);
  CHECK_THROWS_AS(reshape_mode_from_string("cubic"), ValidationError);
}

TEST_CASE("refine stacks requires shared grid, layers and steps") {
  const auto q = constant_stack(2, 2, {0, 1}, {0, 1});
  const auto g = constant_stack(2, 2, {0, 1}, {0, 1}, attention::PromptKind::General);
  const std::vector<int> layers{0, 1};
  const std::vector<int> steps{0, 1};
  const auto r = refine_stacks(q, g, layers, steps, {0.05});
  CHECK(r.maps.size() == 4);
  CHECK(r.get(1, 1)[0] == doctest::Approx(0.25 / 0.3));

  const auto other = constant_stack(3, 2, {0, 1}, {0, 1});
  CHECK_THROWS_AS(refine_stacks(q, other, layers, steps, {}), ValidationError);
  const std::vector<int> missing{2};
  CHECK_THROWS_AS(refine_stacks(q, g, missing, steps, {}), ValidationError);
}
