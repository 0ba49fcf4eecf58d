#include "carve/attention.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>
#include <set>
#include <string>

#include <fmt/core.h>
#include <json.hpp>

#include "carve/error.hpp"

namespace carve::attention {

static_assert(std::endian::native == std::endian::little, "CATT I/O assumes a little-endian host");

const char* to_string(PromptKind kind) noexcept {
  return kind == PromptKind::General ? "general" : "question";
}

PromptKind prompt_kind_from_string(const std::string& s) {
  if (s == "general") return PromptKind::General;
  if (s == "question") return PromptKind::Question;
  throw ValidationError("unknown prompt kind: " + s);
}

namespace {

struct Problem {
  ParseErrorKind kind;
  std::string message;
};

std::optional<Problem> check_header(const AttentionStack::Header& h) {
  if (h.grid_h < 1 || h.grid_w < 1) {
    return Problem{ParseErrorKind::BadHeader, "grid dimensions must be positive"};
  }
  if (h.layers.empty() || h.steps.empty()) {
    return Problem{ParseErrorKind::BadHeader, "layer and step lists must be non-empty"};
  }
  for (std::size_t i = 1; i < h.layers.size(); ++i) {
    if (h.layers[i] <= h.layers[i - 1]) {
      return Problem{ParseErrorKind::DuplicateKey,
                     fmt::format("layer list must be strictly increasing (at {})", h.layers[i])};
    }
  }
  for (std::size_t i = 1; i < h.steps.size(); ++i) {
    if (h.steps[i] == h.steps[i - 1]) {
      return Problem{ParseErrorKind::DuplicateKey, fmt::format("duplicate step {}", h.steps[i])};
    }
    if (h.steps[i] != h.steps[i - 1] + 1) {
      return Problem{ParseErrorKind::NonContiguousSteps,
                     fmt::format("step {} follows {}", h.steps[i], h.steps[i - 1])};
    }
  }
  if (h.layers.front() < 0 || h.steps.front() < 0) {
    return Problem{ParseErrorKind::BadHeader, "layer and step indices must be non-negative"};
  }
  return std::nullopt;
}

std::size_t expected_payload(const AttentionStack::Header& h) {
  return h.layers.size() * h.steps.size() * static_cast<std::size_t>(h.grid_h) *
         static_cast<std::size_t>(h.grid_w);
}

std::optional<Problem> check_payload(const AttentionStack::Header& h, std::span<const float> payload) {
  if (payload.size() != expected_payload(h)) {
    return Problem{payload.size() < expected_payload(h) ? ParseErrorKind::Truncated
                                                        : ParseErrorKind::TrailingBytes,
                   fmt::format("payload has {} floats, header implies {}", payload.size(),
                               expected_payload(h))};
  }
  const std::size_t n = static_cast<std::size_t>(h.grid_h) * static_cast<std::size_t>(h.grid_w);
  for (std::size_t m = 0; m * n < payload.size(); ++m) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const float v = payload[m * n + i];
      if (!std::isfinite(v) || v < 0.0f) {
        return Problem{ParseErrorKind::InvalidWeight,
                       fmt::format("map {} token {} has weight {}", m, i, v)};
      }
      sum += v;
    }
    if (!(sum > 0.0)) {
      return Problem{ParseErrorKind::ZeroMap, fmt::format("map {} is all zero", m)};
    }
  }
  return std::nullopt;
}

}  // namespace

AttentionStack::AttentionStack(Header header, std::vector<float> payload)
    : header_(std::move(header)), payload_(std::move(payload)) {
  if (auto p = check_header(header_)) throw ValidationError(p->message);
  if (auto p = check_payload(header_, payload_)) throw ValidationError(p->message);
}

bool AttentionStack::has_layer(int layer) const noexcept {
  return std::binary_search(header_.layers.begin(), header_.layers.end(), layer);
}

bool AttentionStack::has_step(int step) const noexcept {
  return step >= t_start() && step <= t_end();
}

std::size_t AttentionStack::offset(std::size_t layer_index, std::size_t step_index) const noexcept {
  return (layer_index * header_.steps.size() + step_index) * static_cast<std::size_t>(token_count());
}

AttentionMap AttentionStack::map(int layer, int step) const {
  const auto it = std::lower_bound(header_.layers.begin(), header_.layers.end(), layer);
  if (it == header_.layers.end() || *it != layer) {
    throw ValidationError(fmt::format("layer {} not present in stack", layer));
  }
  if (!has_step(step)) throw ValidationError(fmt::format("step {} not present in stack", step));
  const auto li = static_cast<std::size_t>(it - header_.layers.begin());
  const auto si = static_cast<std::size_t>(step - t_start());
  return AttentionMap{layer, step, grid_h(), grid_w(),
                      std::span<const float>(payload_).subspan(offset(li, si), token_count())};
}

namespace {

template <typename T>
std::vector<double> normalize_impl(std::span<const T> weights) {
  if (weights.empty()) throw ValidationError("cannot normalize an empty array");
  double sum = 0.0;
  for (T v : weights) {
    if (!std::isfinite(static_cast<double>(v)) || v < 0) {
      throw ValidationError("weights must be finite and non-negative");
    }
    sum += v;
  }
  if (!(sum > 0.0)) throw ValidationError("cannot normalize an all-zero array");
  std::vector<double> out(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) out[i] = static_cast<double>(weights[i]) / sum;
  return out;
}

}  // namespace

std::vector<double> normalize(std::span<const double> weights) { return normalize_impl(weights); }
std::vector<double> normalize(std::span<const float> weights) { return normalize_impl(weights); }

double shannon_entropy(std::span<const double> probabilities) {
  double sum = 0.0;
  for (double p : probabilities) {
    if (!std::isfinite(p) || p < 0.0) throw ValidationError("probabilities must be non-negative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    throw ValidationError(fmt::format("probabilities sum to {}, not 1", sum));
  }
  double h = 0.0;
  for (double p : probabilities) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return std::max(h, 0.0);
}

double map_entropy(const AttentionMap& map) { return shannon_entropy(normalize(map.weights)); }

double overall_entropy(const AttentionStack& stack, int layer_start, int layer_end, int step) {
  if (layer_start > layer_end) {
    throw ValidationError(fmt::format("empty layer range [{}, {}]", layer_start, layer_end));
  }
  double sum = 0.0;
  for (int l = layer_start; l <= layer_end; ++l) {
    sum += map_entropy(stack.map(l, step));
  }
  return sum / static_cast<double>(layer_end - layer_start + 1);
}

std::vector<double> layer_entropies(const AttentionStack& stack, int step) {
  std::vector<double> out;
  out.reserve(stack.layers().size());
  for (int l : stack.layers()) out.push_back(map_entropy(stack.map(l, step)));
  return out;
}

// ---------------------------------------------------------------------------
// CATT I/O

namespace {

constexpr char kMagic[4] = {'C', 'A', 'T', 'T'};
constexpr std::size_t kPrefixSize = 4 + 4 + 8;

template <typename T>
T read_le(const std::uint8_t* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

template <typename T>
void append_le(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

AttentionStack::Header header_from_json(const nlohmann::json& j) {
  AttentionStack::Header h;
  try {
    h.model_id = j.at("model_id").get<std::string>();
    h.prompt_kind = prompt_kind_from_string(j.at("prompt_kind").get<std::string>());
    h.prompt_text = j.at("prompt_text").get<std::string>();
    h.grid_h = j.at("grid_h").get<int>();
    h.grid_w = j.at("grid_w").get<int>();
    h.layers = j.at("layers").get<std::vector<int>>();
    h.steps = j.at("steps").get<std::vector<int>>();
    h.generated_tokens = j.value("generated_tokens", std::vector<std::string>{});
    h.head_aggregation = j.value("head_aggregation", std::string("mean"));
    const auto dtype = j.value("payload_dtype", std::string("float32"));
    if (dtype != "float32") {
      throw ParseError(ParseErrorKind::BadHeader, "unsupported payload_dtype " + dtype);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(ParseErrorKind::BadHeader, e.what());
  } catch (const ValidationError& e) {
    throw ParseError(ParseErrorKind::BadHeader, e.what());
  }
  return h;
}

nlohmann::json header_to_json(const AttentionStack::Header& h) {
  return nlohmann::json{
      {"model_id", h.model_id},
      {"prompt_kind", to_string(h.prompt_kind)},
      {"prompt_text", h.prompt_text},
      {"grid_h", h.grid_h},
      {"grid_w", h.grid_w},
      {"layers", h.layers},
      {"steps", h.steps},
      {"generated_tokens", h.generated_tokens},
      {"head_aggregation", h.head_aggregation},
      {"payload_dtype", "float32"},
  };
}

}  // namespace

ReadResult read_dump(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 && std::memcmp(bytes.data(), kMagic, bytes.size()) == 0) {
    throw ParseError(ParseErrorKind::Truncated, "input ends inside the magic");
  }
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw ParseError(ParseErrorKind::BadMagic, "missing CATT magic");
  }
  if (bytes.size() < kPrefixSize) throw ParseError(ParseErrorKind::Truncated, "prefix cut short");
  const auto version = read_le<std::uint32_t>(bytes.data() + 4);
  if (version != kDumpVersion) {
    throw ParseError(ParseErrorKind::UnsupportedVersion, fmt::format("version {}", version));
  }
  const auto header_len = read_le<std::uint64_t>(bytes.data() + 8);
  if (header_len > bytes.size() - kPrefixSize) {
    throw ParseError(ParseErrorKind::Truncated, "header extends past end of input");
  }
  const auto* header_begin = reinterpret_cast<const char*>(bytes.data() + kPrefixSize);
  // The JSON library keeps the last of repeated keys; track them to reject.
  std::vector<std::set<std::string>> seen;
  std::string duplicate;
  const nlohmann::json::parser_callback_t track = [&](int, nlohmann::json::parse_event_t event,
                                                      nlohmann::json& parsed) {
    using E = nlohmann::json::parse_event_t;
    if (event == E::object_start) {
      seen.emplace_back();
    } else if (event == E::object_end) {
      seen.pop_back();
    } else if (event == E::key && !seen.empty()) {
      const auto key = parsed.get<std::string>();
      if (!seen.back().insert(key).second && duplicate.empty()) duplicate = key;
    }
    return true;
  };
  const auto j = nlohmann::json::parse(header_begin, header_begin + header_len, track, false);
  if (j.is_discarded() || !j.is_object()) {
    throw ParseError(ParseErrorKind::BadHeader, "header is not a JSON object");
  }
  if (!duplicate.empty()) {
    throw ParseError(ParseErrorKind::DuplicateKey, fmt::format("header key '{}' repeated", duplicate));
  }
  auto header = header_from_json(j);
  if (auto p = check_header(header)) throw ParseError(p->kind, p->message);

  const std::size_t payload_bytes = bytes.size() - kPrefixSize - static_cast<std::size_t>(header_len);
  const std::size_t expected = expected_payload(header);
  if (payload_bytes < expected * sizeof(float)) {
    throw ParseError(ParseErrorKind::Truncated,
                     fmt::format("payload has {} bytes, header implies {}", payload_bytes,
                                 expected * sizeof(float)));
  }
  if (payload_bytes > expected * sizeof(float)) {
    throw ParseError(ParseErrorKind::TrailingBytes,
                     fmt::format("payload has {} bytes, header implies {}", payload_bytes,
                                 expected * sizeof(float)));
  }
  std::vector<float> payload(expected);
  std::memcpy(payload.data(), bytes.data() + kPrefixSize + header_len, expected * sizeof(float));
  if (auto p = check_payload(header, payload)) throw ParseError(p->kind, p->message);

  std::vector<std::string> warnings;
  const std::size_t n = static_cast<std::size_t>(header.grid_h) * static_cast<std::size_t>(header.grid_w);
  for (std::size_t m = 0; m < expected / n; ++m) {
    const std::span<float> w(payload.data() + m * n, n);
    double sum = 0.0;
    for (float v : w) sum += v;
    if (std::abs(sum - 1.0) > kRenormalizeTolerance) {
      const std::size_t li = m / header.steps.size();
      const std::size_t si = m % header.steps.size();
      warnings.push_back(fmt::format("map (layer {}, step {}) sums to {:.6g}; renormalized",
                                     header.layers[li], header.steps[si], sum));
      for (float& v : w) v = static_cast<float>(v / sum);
    }
  }
  return ReadResult{AttentionStack(std::move(header), std::move(payload)), std::move(warnings)};
}

ReadResult read_dump_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dump: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return read_dump(bytes);
}

std::vector<std::uint8_t> write_dump(const AttentionStack& stack) {
  const std::string header = header_to_json(stack.header()).dump();
  std::vector<std::uint8_t> out;
  out.reserve(kPrefixSize + header.size() + stack.payload().size_bytes());
  out.insert(out.end(), kMagic, kMagic + 4);
  append_le<std::uint32_t>(out, kDumpVersion);
  append_le<std::uint64_t>(out, header.size());
  out.insert(out.end(), header.begin(), header.end());
  const auto* p = reinterpret_cast<const std::uint8_t*>(stack.payload().data());
  out.insert(out.end(), p, p + stack.payload().size_bytes());
  return out;
}

void write_dump_file(const AttentionStack& stack, const std::filesystem::path& path) {
  const auto bytes = write_dump(stack);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace carve::attention
