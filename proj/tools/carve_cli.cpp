// carve: command-line front end. Everything goes through the C API.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "carve/carve.h"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitValidation = 2;
constexpr int kExitParse = 3;

// Thrown out of a subcommand to unwind with a particular exit code.
struct Exit {
  int code;
};

int exit_code_for(carve_status status) {
  switch (status) {
    case CARVE_OK: return kExitOk;
    case CARVE_ERR_INVALID_ARGUMENT:
    case CARVE_ERR_VALIDATION: return kExitValidation;
    case CARVE_ERR_PARSE:
    case CARVE_ERR_IO: return kExitParse;
    default: return kExitInternal;
  }
}

void check(carve_status status, const std::string& what) {
  if (status == CARVE_OK) return;
  std::cerr << "carve: " << what << ": " << carve_last_error() << "\n";
  throw Exit{exit_code_for(status)};
}

[[noreturn]] void invalid(const std::string& message) {
  std::cerr << "carve: " << message << "\n";
  throw Exit{kExitValidation};
}

struct ImageDeleter {
  void operator()(carve_image* p) const { carve_image_free(p); }
};
struct StackDeleter {
  void operator()(carve_stack* p) const { carve_stack_free(p); }
};
struct SaliencyDeleter {
  void operator()(carve_saliency* p) const { carve_saliency_free(p); }
};
using ImagePtr = std::unique_ptr<carve_image, ImageDeleter>;
using StackPtr = std::unique_ptr<carve_stack, StackDeleter>;
using SaliencyPtr = std::unique_ptr<carve_saliency, SaliencyDeleter>;

std::string take(char* s) {
  std::string out = s ? s : "";
  carve_string_free(s);
  return out;
}

ImagePtr load_image(const std::string& path) {
  carve_image* img = nullptr;
  check(carve_image_load(path.c_str(), &img), "cannot load image " + path);
  return ImagePtr(img);
}

StackPtr load_stack(const std::string& path) {
  carve_stack* s = nullptr;
  int warnings = 0;
  check(carve_stack_read(path.c_str(), &s, &warnings), "cannot read dump " + path);
  if (warnings > 0) {
    std::cerr << "carve: " << path << ": renormalized " << warnings << " map(s)\n";
  }
  return StackPtr(s);
}

void write_text(const fs::path& path, const std::string& text) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) {
    std::cerr << "carve: cannot write " << path.string() << "\n";
    throw Exit{kExitParse};
  }
  std::fwrite(text.data(), 1, text.size(), f);
  std::fclose(f);
}

const std::map<std::string, carve_resize_policy> kResizePolicies{
    {"stretch", CARVE_RESIZE_STRETCH}, {"fit_pad", CARVE_RESIZE_FIT_PAD}};
const std::map<std::string, carve_interp> kInterps{{"nearest", CARVE_INTERP_NEAREST},
                                                   {"bilinear", CARVE_INTERP_BILINEAR}};
const std::map<std::string, carve_steps> kSteps{
    {"start", CARVE_STEPS_START}, {"end", CARVE_STEPS_END}, {"full", CARVE_STEPS_FULL}};

// Parses "r,g,b".
void parse_fill(const std::string& text, uint8_t out[3]) {
  std::stringstream ss(text);
  std::string part;
  int i = 0;
  while (std::getline(ss, part, ',')) {
    if (i >= 3) invalid("fill must be r,g,b");
    try {
      std::size_t used = 0;
      const int v = std::stoi(part, &used);
      if (used != part.size() || v < 0 || v > 255) invalid("fill channel out of range: " + part);
      out[i++] = static_cast<uint8_t>(v);
    } catch (const std::logic_error&) {
      invalid("fill must be r,g,b");
    }
  }
  if (i != 3) invalid("fill must be r,g,b");
}

// Flags shared by carve, contrast and progressive. Option values are bound to
// strings for enums so that --help prints readable defaults.
struct ConfigFlags {
  carve_config cfg = carve_config_default();
  std::string fill = "0,0,0";
  std::string resize = "fit_pad";
  std::string interp = "bilinear";
  std::string steps = "full";
  std::string reshape = "nearest";

  void add_refine(CLI::App* app) {
    app->add_option("--lambda", cfg.lambda, "Contrast regularizer")->capture_default_str();
    app->add_option("--layer-start", cfg.layer_start, "First layer of the range")
        ->capture_default_str();
    app->add_option("--layer-end", cfg.layer_end, "Last layer of the range")->capture_default_str();
    app->add_option("--steps", steps, "Generation steps to fuse")
        ->check(CLI::IsMember({"start", "end", "full"}))
        ->capture_default_str();
    app->add_option("--reshape", reshape, "Token-to-pixel interpolation")
        ->check(CLI::IsMember({"nearest", "bilinear"}))
        ->capture_default_str();
  }

  void add_mask(CLI::App* app) {
    app->add_option("--p", cfg.p, "Fraction of pixels retained")->capture_default_str();
    app->add_option("--k", cfg.k, "Number of regions kept")->capture_default_str();
    app->add_option("--connectivity", cfg.connectivity, "Pixel connectivity (4 or 8)")
        ->capture_default_str();
    app->add_option("--resize", resize, "Resize policy")
        ->check(CLI::IsMember({"stretch", "fit_pad"}))
        ->capture_default_str();
    app->add_option("--interp", interp, "Resize interpolation")
        ->check(CLI::IsMember({"nearest", "bilinear"}))
        ->capture_default_str();
  }

  void add_fill(CLI::App* app) {
    app->add_option("--fill", fill, "Fill colour r,g,b")->capture_default_str();
  }

  carve_config resolve() {
    parse_fill(fill, cfg.fill);
    cfg.resize_policy = kResizePolicies.at(resize);
    cfg.resize_interp = kInterps.at(interp);
    cfg.steps = kSteps.at(steps);
    cfg.reshape = kInterps.at(reshape);
    check(carve_config_validate(&cfg), "invalid configuration");
    return cfg;
  }
};

struct CannyFlags {
  carve_canny_params canny = carve_canny_params_default();
  bool exclude_achromatic = false;

  void add(CLI::App* app) {
    app->add_option("--canny-low", canny.low, "Canny low threshold")->capture_default_str();
    app->add_option("--canny-high", canny.high, "Canny high threshold")->capture_default_str();
    app->add_option("--canny-sigma", canny.sigma, "Canny Gaussian sigma")->capture_default_str();
    app->add_flag("--exclude-achromatic", exclude_achromatic,
                  "Leave gray pixels out of the hue histogram");
  }
};

// ---------------------------------------------------------------------------

struct CarveCmd {
  std::string image, question, general, out, diagnostics;
  ConfigFlags flags;

  void setup(CLI::App& root) {
    auto* app = root.add_subcommand("carve", "Refine an image with contrastive attention");
    app->add_option("--image", image, "Input image (PNG or JPEG)")->required();
    app->add_option("--question", question, "Attention dump for the task question")->required();
    app->add_option("--general", general, "Attention dump for the general instruction")->required();
    app->add_option("--out", out, "Refined PNG to write")->required();
    app->add_option("--diagnostics", diagnostics, "Diagnostics JSON (default: <out>.json)");
    flags.add_mask(app);
    flags.add_fill(app);
    flags.add_refine(app);
    app->callback([this] { run(); });
  }

  void run() {
    const carve_config cfg = flags.resolve();
    auto img = load_image(image);
    auto q = load_stack(question);
    auto g = load_stack(general);
    carve_image* refined = nullptr;
    char* diag = nullptr;
    check(carve_run(img.get(), q.get(), g.get(), &cfg, &refined, &diag), "refinement failed");
    ImagePtr refined_ptr(refined);
    const std::string json = take(diag);
    check(carve_image_save_png(refined, out.c_str()), "cannot write " + out);
    write_text(diagnostics.empty() ? fs::path(out + ".json") : fs::path(diagnostics), json + "\n");
    std::cout << json << "\n";
  }
};

struct ComplexityCmd {
  std::string image;
  CannyFlags flags;

  void setup(CLI::App& root) {
    auto* app = root.add_subcommand("complexity", "Print texture and color complexity");
    app->add_option("image", image, "Input image (PNG or JPEG)")->required();
    flags.add(app);
    app->callback([this] { run(); });
  }

  void run() {
    auto img = load_image(image);
    double texture = 0.0;
    double color = 0.0;
    check(carve_complexity(img.get(), &flags.canny, flags.exclude_achromatic ? 1 : 0, &texture,
                           &color),
          "complexity failed");
    std::printf("{\"texture\":%.6f,\"color\":%.6f}\n", texture, color);
  }
};

struct EntropyCmd {
  std::string dump;
  int layer_start = 20;
  int layer_end = 25;
  int step = -1;

  void setup(CLI::App& root) {
    auto* app = root.add_subcommand("entropy", "Per-layer attention entropy of a dump");
    app->add_option("dump", dump, "Attention dump")->required();
    app->add_option("--layer-start", layer_start, "First layer of the range")->capture_default_str();
    app->add_option("--layer-end", layer_end, "Last layer of the range")->capture_default_str();
    app->add_option("--step", step, "Generation step (-1: last)")->capture_default_str();
    app->callback([this] { run(); });
  }

  void run() {
    auto s = load_stack(dump);
    char* json = nullptr;
    check(carve_entropy_report(s.get(), layer_start, layer_end, step, &json), "entropy failed");
    std::cout << take(json) << "\n";
  }
};

struct ContrastCmd {
  std::string question, general, out;
  int height = 448;
  int width = 448;
  double p = 0.4;
  ConfigFlags flags;

  void setup(CLI::App& root) {
    auto* app = root.add_subcommand("contrast", "Compute the fused contrastive saliency map");
    app->add_option("--question", question, "Attention dump for the task question")->required();
    app->add_option("--general", general, "Attention dump for the general instruction")->required();
    app->add_option("--height", height, "Saliency height in pixels")->capture_default_str();
    app->add_option("--width", width, "Saliency width in pixels")->capture_default_str();
    app->add_option("--p", p, "Fraction used for the reported threshold")->capture_default_str();
    app->add_option("--out", out, "Grayscale saliency PNG to write");
    flags.add_refine(app);
    app->callback([this] { run(); });
  }

  void run() {
    const carve_config cfg = flags.resolve();
    if (height < 1 || width < 1) invalid("height and width must be positive");
    if (!(p > 0.0 && p <= 1.0)) invalid("p must lie in (0, 1]");
    auto q = load_stack(question);
    auto g = load_stack(general);
    carve_saliency* s = nullptr;
    check(carve_saliency_compute(q.get(), g.get(), &cfg, height, width, &s), "contrast failed");
    SaliencyPtr sp(s);
    if (!out.empty()) check(carve_saliency_save_png(s, out.c_str()), "cannot write " + out);
    char* json = nullptr;
    check(carve_saliency_summary(s, p, &json), "summary failed");
    std::cout << take(json) << "\n";
  }
};

struct ProgressiveCmd {
  std::string image, question, general, out;
  double ratio = 0.5;
  ConfigFlags flags;

  void setup(CLI::App& root) {
    auto* app = root.add_subcommand("progressive", "Fill the least salient fraction of pixels");
    app->add_option("--image", image, "Input image (PNG or JPEG)")->required();
    app->add_option("--question", question, "Attention dump for the task question")->required();
    app->add_option("--general", general, "Attention dump for the general instruction")->required();
    app->add_option("--ratio", ratio, "Fraction of pixels to fill")->capture_default_str();
    app->add_option("--out", out, "Masked PNG to write")->required();
    flags.add_fill(app);
    flags.add_refine(app);
    app->callback([this] { run(); });
  }

  void run() {
    const carve_config cfg = flags.resolve();
    auto img = load_image(image);
    auto q = load_stack(question);
    auto g = load_stack(general);
    carve_saliency* s = nullptr;
    check(carve_saliency_compute(q.get(), g.get(), &cfg, carve_image_height(img.get()),
                                 carve_image_width(img.get()), &s),
          "contrast failed");
    SaliencyPtr sp(s);
    carve_image* masked = nullptr;
    check(carve_progressive_mask(img.get(), s, ratio, cfg.fill, &masked), "masking failed");
    ImagePtr masked_ptr(masked);
    check(carve_image_save_png(masked, out.c_str()), "cannot write " + out);
    nlohmann::json j{{"ratio", ratio}, {"output", out}};
    std::cout << j.dump(2) << "\n";
  }
};

struct StudyCmd {
  std::string dir, out;
  carve_study_params params = carve_study_params_default();
  CannyFlags canny;

  void setup(CLI::App& root) {
    auto* app = root.add_subcommand("study", "Complexity versus attention entropy over a directory");
    app->add_option("dir", dir, "Directory of images, dumps and labels.csv")->required();
    app->add_option("--out", out, "Output directory")->required();
    app->add_option("--layer-start", params.layer_start, "First layer of the range")
        ->capture_default_str();
    app->add_option("--layer-end", params.layer_end, "Last layer of the range")
        ->capture_default_str();
    app->add_option("--lambda", params.lambda, "Contrast regularizer")->capture_default_str();
    app->add_option("--threads", params.threads, "Worker threads (0: all cores)")
        ->capture_default_str();
    canny.add(app);
    app->callback([this] { run(); });
  }

  void run() {
    params.canny = canny.canny;
    params.exclude_achromatic = canny.exclude_achromatic ? 1 : 0;
    char* json = nullptr;
    check(carve_study_run(dir.c_str(), out.c_str(), &params, &json), "study failed");
    std::cout << take(json) << "\n";
  }
};

struct SynthCmd {
  carve_synth_params params = carve_synth_params_default();
  std::string out_dir = ".";
  std::string id = "synth";
  std::string recovery_csv;
  int trials = 50;

  void setup(CLI::App& root) {
    auto* app = root.add_subcommand("synth", "Write synthetic attention dumps and an image");
    app->add_option("--seed", params.seed, "Random seed (CARVE_SEED overrides)")
        ->capture_default_str();
    app->add_option("--out-dir", out_dir, "Output directory")->capture_default_str();
    app->add_option("--id", id, "Sample id used for file names")->capture_default_str();
    app->add_option("--grid-h", params.grid_h, "Token grid height")->capture_default_str();
    app->add_option("--grid-w", params.grid_w, "Token grid width")->capture_default_str();
    app->add_option("--layer-start", params.layer_start, "First layer")->capture_default_str();
    app->add_option("--layer-end", params.layer_end, "Last layer")->capture_default_str();
    app->add_option("--steps", params.steps, "Generation steps")->capture_default_str();
    app->add_option("--roughness", params.roughness, "Visual complexity in [0, 1]")
        ->capture_default_str();
    app->add_option("--concentration", params.concentration, "Semantic focus in [0, 1]")
        ->capture_default_str();
    app->add_option("--delta", params.delta, "Noise level in [0, 1)")->capture_default_str();
    app->add_option("--block-row", params.block_row, "Semantic block top (tokens)")
        ->capture_default_str();
    app->add_option("--block-col", params.block_col, "Semantic block left (tokens)")
        ->capture_default_str();
    app->add_option("--block-rows", params.block_rows, "Semantic block height (0: bump)")
        ->capture_default_str();
    app->add_option("--block-cols", params.block_cols, "Semantic block width")
        ->capture_default_str();
    app->add_option("--image-height", params.image_height, "Image height (0: no image)")
        ->capture_default_str();
    app->add_option("--image-width", params.image_width, "Image width")->capture_default_str();
    app->add_option("--recovery-csv", recovery_csv, "Also run the recovery experiment into this CSV");
    app->add_option("--trials", trials, "Recovery trials")->capture_default_str();
    app->callback([this] { run(); });
  }

  void run() {
    if (const char* env = std::getenv("CARVE_SEED")) {
      try {
        std::size_t used = 0;
        params.seed = std::stoull(env, &used);
        if (used != std::string(env).size()) throw std::invalid_argument(env);
      } catch (const std::logic_error&) {
        invalid(std::string("CARVE_SEED is not an unsigned integer: ") + env);
      }
    }
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) {
      std::cerr << "carve: cannot create " << out_dir << ": " << ec.message() << "\n";
      throw Exit{kExitParse};
    }

    carve_stack* q = nullptr;
    carve_stack* g = nullptr;
    carve_image* img = nullptr;
    check(carve_synth(&params, &q, &g, params.image_height > 0 ? &img : nullptr), "synth failed");
    StackPtr qp(q);
    StackPtr gp(g);
    ImagePtr ip(img);

    const fs::path base = fs::path(out_dir) / id;
    nlohmann::json j{{"seed", params.seed}};
    const std::string qpath = base.string() + ".q.catt";
    const std::string gpath = base.string() + ".g.catt";
    check(carve_stack_write(q, qpath.c_str()), "cannot write " + qpath);
    check(carve_stack_write(g, gpath.c_str()), "cannot write " + gpath);
    j["question"] = qpath;
    j["general"] = gpath;
    if (img) {
      const std::string ipath = base.string() + ".png";
      check(carve_image_save_png(img, ipath.c_str()), "cannot write " + ipath);
      j["image"] = ipath;
    }
    if (!recovery_csv.empty()) {
      char* summary = nullptr;
      check(carve_recovery_experiment(params.seed, trials, params.delta, recovery_csv.c_str(),
                                      &summary),
            "recovery experiment failed");
      j["recovery"] = nlohmann::json::parse(take(summary));
    }
    std::cout << j.dump(2) << "\n";
  }
};

struct CostCmd {
  carve_cost_params params = carve_cost_params_default();
  int l_total = 0;
  int l_end = 0;
  CLI::Option* alpha_opt = nullptr;

  void setup(CLI::App& root) {
    auto* app = root.add_subcommand("cost", "Evaluate the computational cost model");
    alpha_opt = app->add_option("--alpha", params.alpha, "l_end / l_total")->capture_default_str();
    auto* total = app->add_option("--l-total", l_total, "Total layers (with --l-end)");
    auto* end = app->add_option("--l-end", l_end, "Last layer used (with --l-total)");
    total->needs(end);
    end->needs(total);
    alpha_opt->excludes(total);
    app->add_option("--rho", params.rho, "Cache hit rate")->capture_default_str();
    app->add_option("--layers", params.n_layers, "Number of layers cached")->capture_default_str();
    app->add_option("--steps", params.n_steps, "Number of steps cached")->capture_default_str();
    app->add_option("--nv", params.n_v, "Visual tokens")->capture_default_str();
    app->callback([this] { run(); });
  }

  void run() {
    if (l_total != 0 || l_end != 0) {
      check(carve_cost_alpha(l_end, l_total, &params.alpha), "invalid layer counts");
    }
    carve_cost_result r{};
    check(carve_cost_model(&params, &r), "invalid cost parameters");
    nlohmann::json j{{"alpha", params.alpha},   {"rho", params.rho},
                     {"eta1", r.eta1},          {"s_cache", r.s_cache},
                     {"s_combined", r.s_combined}, {"memory_bytes", r.memory_bytes}};
    std::cout << j.dump(2) << "\n";
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive attention refinement toolkit"};
  app.set_version_flag("--version", carve_version());
  app.require_subcommand(1);

  CarveCmd carve_cmd;
  ComplexityCmd complexity_cmd;
  EntropyCmd entropy_cmd;
  ContrastCmd contrast_cmd;
  StudyCmd study_cmd;
  SynthCmd synth_cmd;
  CostCmd cost_cmd;
  ProgressiveCmd progressive_cmd;
  carve_cmd.setup(app);
  complexity_cmd.setup(app);
  entropy_cmd.setup(app);
  contrast_cmd.setup(app);
  study_cmd.setup(app);
  synth_cmd.setup(app);
  cost_cmd.setup(app);
  progressive_cmd.setup(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitValidation;
  } catch (const Exit& e) {
    return e.code;
  } catch (const std::exception& e) {
    std::cerr << "carve: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitOk;
}
