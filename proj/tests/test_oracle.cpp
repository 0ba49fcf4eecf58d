#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "carve/attention.hpp"
#include "carve/contrast.hpp"
#include "carve/error.hpp"
#include "carve/oracle.hpp"

using namespace carve;
using namespace carve::oracle;

TEST_CASE("rng is deterministic and in range") {
  Rng a(99);
  Rng b(99);
  for (int i = 0; i < 1000; ++i) {
    const double u = a.uniform();
    CHECK(u == b.uniform());
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  Rng c(1);
  for (int i = 0; i < 1000; ++i) {
    const int v = c.uniform_int(-2, 3);
    CHECK(v >= -2);
    CHECK(v <= 3);
  }
}

TEST_CASE("synthetic stacks are deterministic per seed") {
  SynthOptions o;
  o.seed = 17;
  const auto a = synth_decomposition(o);
  const auto b = synth_decomposition(o);
  CHECK(attention::write_dump(a.question) == attention::write_dump(b.question));
  CHECK(attention::write_dump(a.general) == attention::write_dump(b.general));
  o.seed = 18;
  CHECK(attention::write_dump(synth_decomposition(o).question) !=
        attention::write_dump(a.question));
}

TEST_CASE("zero concentration makes question attention proportional to general") {
  SynthOptions o;
  o.seed = 2;
  o.sem_concentration = 0.0;
  const auto s = synth_decomposition(o);
  const auto q = s.question.map(22, 3);
  const auto g = s.general.map(22, 3);
  for (std::size_t i = 0; i < q.weights.size(); ++i) CHECK(q.weights[i] == g.weights[i]);
}

TEST_CASE("rougher scenes spread general attention") {
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SynthOptions rough;
    rough.seed = seed;
    rough.vis_roughness = 0.8;
    SynthOptions smooth = rough;
    smooth.vis_roughness = 0.1;
    const auto hr = attention::overall_entropy(synth_decomposition(rough).general, 20, 25, 9);
    const auto hs = attention::overall_entropy(synth_decomposition(smooth).general, 20, 25, 9);
    wins += hr > hs;
  }
  CHECK(wins == 10);
}

TEST_CASE("synthetic option validation") {
  SynthOptions o;
  o.vis_roughness = 1.5;
  CHECK_THROWS_AS(synth_decomposition(o), ValidationError);
  o = {};
  o.delta = 1.0;
  CHECK_THROWS_AS(synth_decomposition(o), ValidationError);
  o = {};
  o.sem_block = TokenBlock{10, 10, 10, 10};
  CHECK_THROWS_AS(synth_decomposition(o), ValidationError);
}

TEST_CASE("numeric solver") {
  const std::vector<double> q{0.3, 0.2, 0.5};
  const std::vector<double> g{0.0, 0.4, 0.6};
  const auto x = solve_numeric(q, g, 0.05);
  CHECK(x[0] == 0.0);
  CHECK(x[1] == doctest::Approx(0.2 / 0.45).epsilon(1e-8));
  // Huge lambda drives the minimizer to q / lambda.
  const auto big = solve_numeric(q, g, 1e6);
  CHECK(big[1] == doctest::Approx(0.2 / (0.4 + 1e6)).epsilon(1e-6));
  CHECK(big[2] < 1e-6);

  // The minimizer beats nearby points on the objective.
  const auto best = objective(x, q, g, 0.05);
  auto nudged = x;
  nudged[2] += 1e-3;
  CHECK(objective(nudged, q, g, 0.05) > best);
}

TEST_CASE("recovery bound") {
  CHECK(recovery_error_bound(0.0, 3.0) == 0.0);
  CHECK(recovery_error_bound(0.05, 2.0) == doctest::Approx(0.105263).epsilon(1e-6));
  CHECK_THROWS_AS(recovery_error_bound(1.0, 2.0), ValidationError);
  CHECK_THROWS_AS(recovery_error_bound(-0.1, 2.0), ValidationError);
}

TEST_CASE("optimal lambda") {
  auto r = optimal_lambda({1.0, 0.0});
  CHECK(r.exact == 0.0);
  CHECK(r.approx == 0.0);
  r = optimal_lambda({1.0, 0.5});
  CHECK(r.exact == doctest::Approx(std::sqrt(2.0) - 1.0).epsilon(1e-12));
  r = optimal_lambda({2.0, 0.04});  // sigma^2 / mu^2 = 0.01
  CHECK(std::abs(r.exact - r.approx) / r.approx < 0.01);
  CHECK_THROWS_AS(optimal_lambda({0.0, 1.0}), ValidationError);
}

TEST_CASE("condition bound") {
  const std::vector<double> g{0.9, 0.0, 0.3};
  const auto c = condition_bound(g, 0.1);
  CHECK(c.bound == doctest::Approx(10.0));
  CHECK(c.exact == doctest::Approx(10.0));
  const auto big = condition_bound(g, 1e9);
  CHECK(big.bound == doctest::Approx(1.0));
  CHECK(big.exact == doctest::Approx(1.0));
  CHECK_THROWS_AS(condition_bound(g, 0.0), ValidationError);
}

TEST_CASE("cost model") {
  CostParams p;
  p.alpha = 1.0;
  CHECK(cost_model(p).eta1 == 0.0);
  p.alpha = 0.89;
  CHECK(cost_model(p).s_cache == doctest::Approx(1.5873).epsilon(1e-4));
  p = {};
  CHECK(cost_model(p).eta1 == doctest::Approx(0.0714286).epsilon(1e-6));
  CHECK(cost_model(p).memory_bytes == 204800u);
  p.rho = 1.0;
  CHECK(cost_model(p).s_combined == doctest::Approx(3.0 / (p.alpha + 1.0)));
  CHECK(CostParams::alpha_from_layers(25, 28) == doctest::Approx(25.0 / 28.0));
  CHECK_THROWS_AS(CostParams::alpha_from_layers(29, 28), ValidationError);
  p = {};
  p.alpha = 0.0;
  CHECK_THROWS_AS(cost_model(p), ValidationError);
  p = {};
  p.rho = 1.2;
  CHECK_THROWS_AS(cost_model(p), ValidationError);
}

TEST_CASE("entropy monotonicity report") {
  const std::vector<int> layers{1, 2, 3};
  CHECK(entropy_monotonicity_report(layers, std::vector<double>{3, 2, 1}).empty());
  const std::vector<int> two{1, 2};
  const auto v = entropy_monotonicity_report(two, std::vector<double>{1, 2});
  REQUIRE(v.size() == 1);
  CHECK(v[0] == std::pair<int, int>{1, 2});
  const std::vector<int> one{4};
  CHECK(entropy_monotonicity_report(one, std::vector<double>{5}).empty());

  SynthOptions o;
  const auto s = synth_decomposition(o);
  CHECK(entropy_monotonicity_report(s.general, 0).empty());
}

TEST_CASE("recovery experiment and csv") {
  const auto trials = recovery_experiment(100, 5, 0.05);
  REQUIRE(trials.size() == 5);
  for (const auto& t : trials) {
    CHECK(t.observed_error <= t.bound + 1e-2 * t.f_sem_max);
    CHECK(t.bound == doctest::Approx(0.05 * t.f_sem_max / 0.95));
  }
  const auto path = std::filesystem::temp_directory_path() / "carve_recovery_test.csv";
  write_recovery_csv(trials, path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "seed,delta,lambda,observed_error,bound");
  int rows = 0;
  while (std::getline(in, line)) rows += !line.empty();
  CHECK(rows == 5);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(recovery_experiment(0, 0, 0.05), ValidationError);
}
