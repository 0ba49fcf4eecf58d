#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>

#include <json.hpp>

#include "carve/attention.hpp"
#include "carve/error.hpp"
#include "carve/oracle.hpp"
#include "oracles.hpp"

using namespace carve;
using namespace carve::attention;

namespace {

AttentionStack::Header header(int gh, int gw, std::vector<int> layers, std::vector<int> steps) {
  AttentionStack::Header h;
  h.model_id = "test";
  h.prompt_text = "what is this?";
  h.grid_h = gh;
  h.grid_w = gw;
  h.layers = std::move(layers);
  h.steps = std::move(steps);
  for (std::size_t i = 0; i < h.steps.size(); ++i) h.generated_tokens.push_back("t");
  return h;
}

AttentionStack random_stack(std::uint64_t seed, int gh, int gw, std::vector<int> layers,
                            std::vector<int> steps) {
  oracle::Rng rng(seed);
  const std::size_t n = static_cast<std::size_t>(gh) * gw;
  const std::size_t maps = layers.size() * steps.size();
  std::vector<float> payload;
  for (std::size_t m = 0; m < maps; ++m) {
    std::vector<double> raw(n);
    double sum = 0;
    for (auto& v : raw) sum += (v = rng.uniform() + 1e-3);
    for (double v : raw) payload.push_back(static_cast<float>(v / sum));
  }
  return AttentionStack(header(gh, gw, std::move(layers), std::move(steps)), std::move(payload));
}

// Assembles CATT bytes by hand.
std::vector<std::uint8_t> catt(const nlohmann::json& hdr, const std::vector<float>& payload,
                               std::uint32_t version = 1, const char* magic = "CATT") {
  std::vector<std::uint8_t> out(magic, magic + 4);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(version >> (8 * i)));
  const std::string text = hdr.dump();
  const std::uint64_t len = text.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(len >> (8 * i)));
  out.insert(out.end(), text.begin(), text.end());
  for (float f : payload) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  return out;
}

nlohmann::json json_header(std::vector<int> steps = {0, 1}) {
  std::vector<std::string> toks(steps.size(), "a");
  return {{"model_id", "m"},       {"prompt_kind", "question"}, {"prompt_text", "q"},
          {"grid_h", 2},           {"grid_w", 2},               {"layers", {3}},
          {"steps", steps},        {"generated_tokens", toks},  {"head_aggregation", "mean"},
          {"payload_dtype", "float32"}};
}

ParseErrorKind parse_kind(const std::vector<std::uint8_t>& bytes) {
  try {
    (void)read_dump(bytes);
  } catch (const ParseError& e) {
    return e.kind();
  }
  FAIL("expected a parse error");
  return ParseErrorKind::BadCsv;
}

}  // namespace

TEST_CASE("normalize") {
  const std::vector<double> a{2, 2};
  CHECK(normalize(std::span<const double>(a)) == std::vector<double>{0.5, 0.5});
  const std::vector<double> b{1, 3};
  CHECK(normalize(std::span<const double>(b)) == std::vector<double>{0.25, 0.75});
  const std::vector<double> zero{0, 0};
  CHECK_THROWS_AS(normalize(std::span<const double>(zero)), ValidationError);
  const std::vector<double> neg{1, -1, 2};
  CHECK_THROWS_AS(normalize(std::span<const double>(neg)), ValidationError);
  const std::vector<double> nan{1, std::numeric_limits<double>::quiet_NaN()};
  CHECK_THROWS_AS(normalize(std::span<const double>(nan)), ValidationError);
}

TEST_CASE("shannon entropy") {
  CHECK(shannon_entropy(std::vector<double>{0, 1, 0}) == 0.0);
  CHECK(shannon_entropy(std::vector<double>(4, 0.25)) == doctest::Approx(std::log(4.0)));
  CHECK(shannon_entropy(std::vector<double>{0.5, 0.25, 0.25}) ==
        doctest::Approx(1.03972).epsilon(1e-5));
  CHECK_THROWS_AS(shannon_entropy(std::vector<double>{0.5, 0.4}), ValidationError);

  oracle::Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> p(rng.uniform_int(1, 100));
    double s = 0;
    for (auto& v : p) s += (v = rng.uniform());
    for (auto& v : p) v /= s;
    const double h = shannon_entropy(p);
    CHECK(h == doctest::Approx(oracle_ref::entropy_nats(p)).epsilon(1e-12));
    CHECK(h >= 0.0);
    CHECK(h <= std::log(static_cast<double>(p.size())) + 1e-12);
  }
}

TEST_CASE("stack construction invariants") {
  const std::vector<float> ok(4 * 2, 0.25f);
  CHECK_NOTHROW(AttentionStack(header(2, 2, {3}, {0, 1}), ok));
  CHECK_THROWS_AS(AttentionStack(header(2, 2, {3}, {0, 2}), ok), ValidationError);
  CHECK_THROWS_AS(AttentionStack(header(2, 2, {4, 3}, {0}), ok), ValidationError);
  CHECK_THROWS_AS(AttentionStack(header(2, 2, {3}, {0, 1}), std::vector<float>(7, 0.25f)),
                  ValidationError);
  std::vector<float> zero = ok;
  std::fill(zero.begin(), zero.begin() + 4, 0.0f);
  CHECK_THROWS(AttentionStack(header(2, 2, {3}, {0, 1}), zero));
}

TEST_CASE("map lookup") {
  const auto s = random_stack(1, 3, 4, {20, 21}, {5, 6, 7});
  CHECK(s.t_start() == 5);
  CHECK(s.t_end() == 7);
  const auto m = s.map(21, 6);
  CHECK(m.layer == 21);
  CHECK(m.step == 6);
  CHECK(m.weights.size() == 12);
  // layer-major then step-major layout
  CHECK(m.weights.data() == s.payload().data() + (1 * 3 + 1) * 12);
  CHECK_THROWS_AS(s.map(22, 6), ValidationError);
  CHECK_THROWS_AS(s.map(20, 8), ValidationError);
}

TEST_CASE("overall entropy") {
  // Two layers: a uniform map over e^... choose maps with entropies 1.0 and 3.0
  // indirectly: use one-hot (0) and uniform over 4 (ln 4).
  std::vector<float> payload(8, 0.0f);
  payload[0] = 1.0f;
  for (int i = 4; i < 8; ++i) payload[i] = 0.25f;
  const AttentionStack s(header(2, 2, {20, 21}, {0}), payload);
  CHECK(overall_entropy(s, 20, 20, 0) == 0.0);
  CHECK(overall_entropy(s, 21, 21, 0) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  const double mean = (layer_entropies(s, 0)[0] + layer_entropies(s, 0)[1]) / 2.0;
  CHECK(overall_entropy(s, 20, 21, 0) == mean);

  const auto gap = random_stack(2, 2, 2, {20, 21, 22, 24, 25}, {0});
  CHECK_THROWS_AS(overall_entropy(gap, 20, 25, 0), ValidationError);
  CHECK_THROWS_AS(overall_entropy(gap, 22, 21, 0), ValidationError);
  CHECK_THROWS_AS(overall_entropy(gap, 20, 21, 3), ValidationError);
}

TEST_CASE("dump round trip is bit identical") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto s = random_stack(seed, 4, 5, {1, 2, 7}, {3, 4});
    const auto bytes = write_dump(s);
    const auto back = read_dump(bytes);
    CHECK(back.warnings.empty());
    REQUIRE(back.stack.payload().size() == s.payload().size());
    CHECK(std::memcmp(back.stack.payload().data(), s.payload().data(),
                      s.payload().size() * sizeof(float)) == 0);
    CHECK(back.stack.layers() == s.layers());
    CHECK(back.stack.steps() == s.steps());
    CHECK(write_dump(back.stack) == bytes);
  }
}

TEST_CASE("dump parse errors") {
  const std::vector<float> payload(8, 0.25f);
  CHECK_NOTHROW(read_dump(catt(json_header(), payload)));

  auto shortp = payload;
  shortp.pop_back();
  CHECK(parse_kind(catt(json_header(), shortp)) == ParseErrorKind::Truncated);

  auto longp = payload;
  longp.push_back(0.0f);
  CHECK(parse_kind(catt(json_header(), longp)) == ParseErrorKind::TrailingBytes);

  CHECK(parse_kind(catt(json_header({0, 2}), payload)) == ParseErrorKind::NonContiguousSteps);
  CHECK(parse_kind(catt(json_header(), payload, 1, "CATX")) == ParseErrorKind::BadMagic);
  CHECK(parse_kind(catt(json_header(), payload, 2)) == ParseErrorKind::UnsupportedVersion);

  auto nan = payload;
  nan[3] = std::numeric_limits<float>::quiet_NaN();
  CHECK(parse_kind(catt(json_header(), nan)) == ParseErrorKind::InvalidWeight);
  auto neg = payload;
  neg[1] = -0.25f;
  CHECK(parse_kind(catt(json_header(), neg)) == ParseErrorKind::InvalidWeight);
  auto zero = payload;
  std::fill(zero.begin() + 4, zero.end(), 0.0f);
  CHECK(parse_kind(catt(json_header(), zero)) == ParseErrorKind::ZeroMap);

  auto bad = json_header();
  bad["payload_dtype"] = "float16";
  CHECK(parse_kind(catt(bad, payload)) == ParseErrorKind::BadHeader);
  auto missing = json_header();
  missing.erase("grid_w");
  CHECK(parse_kind(catt(missing, payload)) == ParseErrorKind::BadHeader);

  CHECK(parse_kind({'C', 'A', 'T'}) == ParseErrorKind::Truncated);
}

TEST_CASE("dump duplicate header keys are rejected") {
  const std::string text =
      R"({"model_id":"m","model_id":"n","prompt_kind":"question","prompt_text":"q","grid_h":1,)"
      R"("grid_w":1,"layers":[0],"steps":[0],"generated_tokens":["a"],"head_aggregation":"mean",)"
      R"("payload_dtype":"float32"})";
  std::vector<std::uint8_t> bytes{'C', 'A', 'T', 'T', 1, 0, 0, 0};
  const std::uint64_t len = text.size();
  for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::uint8_t>(len >> (8 * i)));
  bytes.insert(bytes.end(), text.begin(), text.end());
  const float one = 1.0f;
  const auto* p = reinterpret_cast<const std::uint8_t*>(&one);
  bytes.insert(bytes.end(), p, p + 4);
  CHECK(parse_kind(bytes) == ParseErrorKind::DuplicateKey);
}

TEST_CASE("dump maps off by more than the tolerance are renormalized with a warning") {
  std::vector<float> payload(8, 0.25f);
  payload[0] = 0.5f;  // first map sums to 1.25
  const auto r = read_dump(catt(json_header(), payload));
  CHECK(r.warnings.size() == 1);
  const auto m = r.stack.map(3, 0);
  double sum = 0;
  for (float v : m.weights) sum += v;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(m.weights[0] == doctest::Approx(0.4));

  std::vector<float> slight(8, 0.25f);
  slight[0] = 0.2502f;
  CHECK(read_dump(catt(json_header(), slight)).warnings.empty());
}

TEST_CASE("dump file errors") {
  CHECK_THROWS_AS(read_dump_file("/nonexistent/x.catt"), IoError);
}
