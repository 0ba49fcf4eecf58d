#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace carve::attention {

enum class PromptKind { General, Question };

const char* to_string(PromptKind kind) noexcept;
PromptKind prompt_kind_from_string(const std::string& s);

/// Instruction used to elicit noise-dominated attention.
inline constexpr const char* kGeneralInstruction = "Write a general description of the image.";

/// One head-averaged attention distribution over the visual token grid.
struct AttentionMap {
  int layer = 0;
  int step = 0;
  int grid_h = 0;
  int grid_w = 0;
  std::span<const float> weights;
};

/// Per-layer, per-step visual attention for one prompt. Immutable once built.
///
/// Weights are stored layer-major, then step-major, then row-major over the
/// token grid, which is also the CATT payload order.
class AttentionStack {
 public:
  struct Header {
    PromptKind prompt_kind = PromptKind::Question;
    std::string prompt_text;
    std::string model_id;
    int grid_h = 0;
    int grid_w = 0;
    std::vector<int> layers;  // strictly increasing
    std::vector<int> steps;   // strictly increasing by exactly 1
    std::vector<std::string> generated_tokens;
    std::string head_aggregation = "mean";
  };

  /// Validates the header invariants and the payload (length, finiteness,
  /// non-negativity, no all-zero map). Does not renormalize.
  AttentionStack(Header header, std::vector<float> payload);

  const Header& header() const noexcept { return header_; }
  int grid_h() const noexcept { return header_.grid_h; }
  int grid_w() const noexcept { return header_.grid_w; }
  int token_count() const noexcept { return header_.grid_h * header_.grid_w; }
  const std::vector<int>& layers() const noexcept { return header_.layers; }
  const std::vector<int>& steps() const noexcept { return header_.steps; }
  int t_start() const noexcept { return header_.steps.front(); }
  int t_end() const noexcept { return header_.steps.back(); }

  bool has_layer(int layer) const noexcept;
  bool has_step(int step) const noexcept;

  /// Throws ValidationError when (layer, step) is absent.
  AttentionMap map(int layer, int step) const;

  std::span<const float> payload() const noexcept { return payload_; }

 private:
  std::size_t offset(std::size_t layer_index, std::size_t step_index) const noexcept;

  Header header_;
  std::vector<float> payload_;
};

/// Divides by the sum. Rejects negative, non-finite, or all-zero input.
std::vector<double> normalize(std::span<const double> weights);
std::vector<double> normalize(std::span<const float> weights);

/// -sum p ln p in nats, with 0 ln 0 = 0. Input must sum to 1 within 1e-6.
double shannon_entropy(std::span<const double> probabilities);

/// Entropy of a stored map after exact renormalization in double precision.
double map_entropy(const AttentionMap& map);

/// Mean of per-layer entropies over every layer in [layer_start, layer_end]
/// at the given step. Each integer layer in the range must be present.
double overall_entropy(const AttentionStack& stack, int layer_start, int layer_end, int step);

/// Per-layer entropies at one step, in stack layer order.
std::vector<double> layer_entropies(const AttentionStack& stack, int step);

// CATT container: "CATT", u32 LE version, u64 LE header length, JSON header,
// float32 LE payload.
inline constexpr std::uint32_t kDumpVersion = 1;
inline constexpr double kRenormalizeTolerance = 1e-3;

struct ReadResult {
  AttentionStack stack;
  std::vector<std::string> warnings;
};

ReadResult read_dump(std::span<const std::uint8_t> bytes);
ReadResult read_dump_file(const std::filesystem::path& path);
std::vector<std::uint8_t> write_dump(const AttentionStack& stack);
void write_dump_file(const AttentionStack& stack, const std::filesystem::path& path);

}  // namespace carve::attention
