#include "carve/carve.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>

#include <fmt/core.h>
#include <json.hpp>

#include "carve/attention.hpp"
#include "carve/contrast.hpp"
#include "carve/error.hpp"
#include "carve/imaging.hpp"
#include "carve/maskgen.hpp"
#include "carve/oracle.hpp"
#include "carve/study.hpp"

struct carve_image {
  carve::imaging::ImageRGB image;
};

struct carve_stack {
  carve::attention::AttentionStack stack;
};

struct carve_saliency {
  carve::contrast::Saliency saliency;
};

namespace {

thread_local std::string g_last_error;

carve_status fail(carve_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

template <typename F>
carve_status guarded(F&& body) {
  try {
    g_last_error.clear();
    body();
    return CARVE_OK;
  } catch (const carve::ValidationError& e) {
    return fail(CARVE_ERR_VALIDATION, e.what());
  } catch (const carve::ParseError& e) {
    return fail(CARVE_ERR_PARSE, e.what());
  } catch (const carve::IoError& e) {
    return fail(CARVE_ERR_IO, e.what());
  } catch (const std::exception& e) {
    return fail(CARVE_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(CARVE_ERR_INTERNAL, "unknown error");
  }
}

char* dup_string(const std::string& s) {
  auto* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

carve::imaging::CannyParams to_cpp(const carve_canny_params& c) {
  return carve::imaging::CannyParams{c.low, c.high, c.sigma};
}

carve::maskgen::Interpolation to_cpp(carve_interp i) {
  return i == CARVE_INTERP_NEAREST ? carve::maskgen::Interpolation::Nearest
                                   : carve::maskgen::Interpolation::Bilinear;
}

carve::maskgen::CarveConfig to_cpp(const carve_config& c) {
  using namespace carve;
  maskgen::CarveConfig cfg;
  cfg.p = c.p;
  cfg.k = c.k;
  cfg.connectivity = c.connectivity;
  cfg.fill = imaging::Rgb{c.fill[0], c.fill[1], c.fill[2]};
  switch (c.resize_policy) {
    case CARVE_RESIZE_STRETCH: cfg.resize_policy = maskgen::ResizePolicy::Stretch; break;
    case CARVE_RESIZE_FIT_PAD: cfg.resize_policy = maskgen::ResizePolicy::FitPad; break;
    default: throw ValidationError("unknown resize policy");
  }
  if (c.resize_interp != CARVE_INTERP_NEAREST && c.resize_interp != CARVE_INTERP_BILINEAR) {
    throw ValidationError("unknown resize interpolation");
  }
  cfg.resize_interp = to_cpp(c.resize_interp);
  cfg.lambda = c.lambda;
  cfg.layer_start = c.layer_start;
  cfg.layer_end = c.layer_end;
  switch (c.steps) {
    case CARVE_STEPS_START: cfg.steps = contrast::StepSelector::Start; break;
    case CARVE_STEPS_END: cfg.steps = contrast::StepSelector::End; break;
    case CARVE_STEPS_FULL: cfg.steps = contrast::StepSelector::Full; break;
    default: throw ValidationError("unknown step selector");
  }
  switch (c.reshape) {
    case CARVE_INTERP_NEAREST: cfg.reshape = contrast::ReshapeMode::Nearest; break;
    case CARVE_INTERP_BILINEAR: cfg.reshape = contrast::ReshapeMode::Bilinear; break;
    default: throw ValidationError("unknown reshape mode");
  }
  cfg.validate();
  return cfg;
}

#define CARVE_REQUIRE(ptr)                                                        \
  do {                                                                            \
    if ((ptr) == nullptr) return fail(CARVE_ERR_INVALID_ARGUMENT, #ptr " is null"); \
  } while (0)

}  // namespace

extern "C" {

const char* carve_version(void) { return "1.0.0"; }

const char* carve_last_error(void) { return g_last_error.c_str(); }

void carve_string_free(char* s) { std::free(s); }

carve_status carve_image_load(const char* path, carve_image** out) {
  CARVE_REQUIRE(path);
  CARVE_REQUIRE(out);
  return guarded([&] { *out = new carve_image{carve::imaging::read_image(path)}; });
}

carve_status carve_image_from_rgb(int height, int width, const uint8_t* rgb, carve_image** out) {
  CARVE_REQUIRE(rgb);
  CARVE_REQUIRE(out);
  return guarded([&] {
    if (height < 1 || width < 1) throw carve::ValidationError("image dimensions must be positive");
    std::vector<carve::imaging::Rgb> px(static_cast<std::size_t>(height) * width);
    std::memcpy(px.data(), rgb, px.size() * 3);
    *out = new carve_image{carve::imaging::ImageRGB(height, width, std::move(px))};
  });
}

carve_status carve_image_save_png(const carve_image* image, const char* path) {
  CARVE_REQUIRE(image);
  CARVE_REQUIRE(path);
  return guarded([&] { carve::imaging::write_png(image->image, path); });
}

int carve_image_height(const carve_image* image) { return image ? image->image.height() : 0; }
int carve_image_width(const carve_image* image) { return image ? image->image.width() : 0; }

const uint8_t* carve_image_data(const carve_image* image) {
  return image ? reinterpret_cast<const uint8_t*>(image->image.pixels().data()) : nullptr;
}

void carve_image_free(carve_image* image) { delete image; }

carve_canny_params carve_canny_params_default(void) {
  const carve::imaging::CannyParams d;
  return carve_canny_params{d.low, d.high, d.sigma};
}

carve_status carve_complexity(const carve_image* image, const carve_canny_params* canny,
                              int exclude_achromatic, double* texture, double* color) {
  CARVE_REQUIRE(image);
  CARVE_REQUIRE(texture);
  CARVE_REQUIRE(color);
  return guarded([&] {
    const auto params = canny ? to_cpp(*canny) : carve::imaging::CannyParams{};
    *texture = carve::imaging::texture_complexity(carve::imaging::canny_edges(image->image, params));
    *color = carve::imaging::color_complexity(image->image, exclude_achromatic != 0);
  });
}

carve_status carve_stack_read(const char* path, carve_stack** out, int* warnings) {
  CARVE_REQUIRE(path);
  CARVE_REQUIRE(out);
  return guarded([&] {
    auto r = carve::attention::read_dump_file(path);
    if (warnings) *warnings = static_cast<int>(r.warnings.size());
    *out = new carve_stack{std::move(r.stack)};
  });
}

carve_status carve_stack_read_buffer(const uint8_t* bytes, size_t len, carve_stack** out, int* warnings) {
  CARVE_REQUIRE(bytes);
  CARVE_REQUIRE(out);
  return guarded([&] {
    auto r = carve::attention::read_dump(std::span<const std::uint8_t>(bytes, len));
    if (warnings) *warnings = static_cast<int>(r.warnings.size());
    *out = new carve_stack{std::move(r.stack)};
  });
}

carve_status carve_stack_write(const carve_stack* stack, const char* path) {
  CARVE_REQUIRE(stack);
  CARVE_REQUIRE(path);
  return guarded([&] { carve::attention::write_dump_file(stack->stack, path); });
}

carve_status carve_stack_dims(const carve_stack* stack, int* grid_h, int* grid_w, int* n_layers,
                              int* n_steps) {
  CARVE_REQUIRE(stack);
  if (grid_h) *grid_h = stack->stack.grid_h();
  if (grid_w) *grid_w = stack->stack.grid_w();
  if (n_layers) *n_layers = static_cast<int>(stack->stack.layers().size());
  if (n_steps) *n_steps = static_cast<int>(stack->stack.steps().size());
  return CARVE_OK;
}

void carve_stack_free(carve_stack* stack) { delete stack; }

carve_status carve_entropy_report(const carve_stack* stack, int layer_start, int layer_end, int step,
                                  char** out_json) {
  CARVE_REQUIRE(stack);
  CARVE_REQUIRE(out_json);
  return guarded([&] {
    using nlohmann::json;
    const auto& s = stack->stack;
    const int t = step < 0 ? s.t_end() : step;
    const double overall = carve::attention::overall_entropy(s, layer_start, layer_end, t);
    std::vector<int> layers;
    std::vector<double> per_layer;
    for (int l = layer_start; l <= layer_end; ++l) {
      layers.push_back(l);
      per_layer.push_back(carve::attention::map_entropy(s.map(l, t)));
    }
    const double max_h = std::log(static_cast<double>(s.token_count()));
    json violations = json::array();
    for (const auto& [a, b] : carve::oracle::entropy_monotonicity_report(layers, per_layer)) {
      violations.push_back(json::array({a, b}));
    }
    const json j{{"step", t},
                 {"layers", layers},
                 {"per_layer", per_layer},
                 {"overall", overall},
                 {"normalized", max_h > 0.0 ? overall / max_h : 0.0},
                 {"max_entropy", max_h},
                 {"monotonicity_violations", violations}};
    *out_json = dup_string(j.dump(2));
  });
}

carve_config carve_config_default(void) {
  const carve::maskgen::CarveConfig d;
  carve_config c{};
  c.p = d.p;
  c.k = d.k;
  c.connectivity = d.connectivity;
  c.fill[0] = d.fill.r;
  c.fill[1] = d.fill.g;
  c.fill[2] = d.fill.b;
  c.resize_policy = CARVE_RESIZE_FIT_PAD;
  c.resize_interp = CARVE_INTERP_BILINEAR;
  c.lambda = d.lambda;
  c.layer_start = d.layer_start;
  c.layer_end = d.layer_end;
  c.steps = CARVE_STEPS_FULL;
  c.reshape = CARVE_INTERP_NEAREST;
  return c;
}

carve_status carve_config_validate(const carve_config* cfg) {
  CARVE_REQUIRE(cfg);
  return guarded([&] { (void)to_cpp(*cfg); });
}

carve_status carve_run(const carve_image* image, const carve_stack* question, const carve_stack* general,
                       const carve_config* cfg, carve_image** out, char** diagnostics_json) {
  CARVE_REQUIRE(image);
  CARVE_REQUIRE(question);
  CARVE_REQUIRE(general);
  CARVE_REQUIRE(cfg);
  CARVE_REQUIRE(out);
  return guarded([&] {
    const auto config = to_cpp(*cfg);
    auto result = carve::maskgen::carve_pipeline(image->image, question->stack, general->stack, config);
    if (diagnostics_json) {
      *diagnostics_json = dup_string(carve::maskgen::diagnostics_json(result.diagnostics, config));
    }
    *out = new carve_image{std::move(result.image)};
  });
}

carve_status carve_saliency_compute(const carve_stack* question, const carve_stack* general,
                                    const carve_config* cfg, int height, int width, carve_saliency** out) {
  CARVE_REQUIRE(question);
  CARVE_REQUIRE(general);
  CARVE_REQUIRE(cfg);
  CARVE_REQUIRE(out);
  return guarded([&] {
    *out = new carve_saliency{
        carve::maskgen::fused_saliency(question->stack, general->stack, height, width, to_cpp(*cfg))};
  });
}

int carve_saliency_height(const carve_saliency* s) { return s ? s->saliency.height : 0; }
int carve_saliency_width(const carve_saliency* s) { return s ? s->saliency.width : 0; }
const double* carve_saliency_values(const carve_saliency* s) {
  return s ? s->saliency.values.data() : nullptr;
}

carve_status carve_saliency_save_png(const carve_saliency* s, const char* path) {
  CARVE_REQUIRE(s);
  CARVE_REQUIRE(path);
  return guarded([&] {
    const auto& v = s->saliency.values;
    double mx = 0.0;
    for (double x : v) mx = std::max(mx, x);
    std::vector<std::uint8_t> gray(v.size(), 0);
    if (mx > 0.0) {
      for (std::size_t i = 0; i < v.size(); ++i) {
        gray[i] = static_cast<std::uint8_t>(std::lround(std::clamp(v[i] / mx, 0.0, 1.0) * 255.0));
      }
    }
    const auto bytes = carve::imaging::encode_gray_png(s->saliency.height, s->saliency.width, gray);
    std::FILE* f = std::fopen(path, "wb");
    if (!f) throw carve::IoError(std::string("cannot open for writing: ") + path);
    const bool ok = std::fwrite(bytes.data(), 1, bytes.size(), f) == bytes.size();
    std::fclose(f);
    if (!ok) throw carve::IoError(std::string("write failed: ") + path);
  });
}

carve_status carve_saliency_summary(const carve_saliency* s, double p, char** out_json) {
  CARVE_REQUIRE(s);
  CARVE_REQUIRE(out_json);
  return guarded([&] {
    const auto& v = s->saliency.values;
    const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
    double sum = 0.0;
    for (double x : v) sum += x;
    const double tau = carve::maskgen::percentile_threshold(v, p);
    std::size_t retained = 0;
    for (double x : v) retained += x >= tau;
    const nlohmann::json j{{"height", s->saliency.height},
                           {"width", s->saliency.width},
                           {"min", *mn},
                           {"max", *mx},
                           {"mean", sum / static_cast<double>(v.size())},
                           {"p", p},
                           {"tau", tau},
                           {"retained_pixels", retained}};
    *out_json = dup_string(j.dump(2));
  });
}

void carve_saliency_free(carve_saliency* s) { delete s; }

carve_status carve_progressive_mask(const carve_image* image, const carve_saliency* s, double ratio,
                                    const uint8_t fill[3], carve_image** out) {
  CARVE_REQUIRE(image);
  CARVE_REQUIRE(s);
  CARVE_REQUIRE(fill);
  CARVE_REQUIRE(out);
  return guarded([&] {
    *out = new carve_image{carve::maskgen::progressive_mask(
        image->image, s->saliency, ratio, carve::imaging::Rgb{fill[0], fill[1], fill[2]})};
  });
}

carve_cost_params carve_cost_params_default(void) {
  const carve::oracle::CostParams d;
  return carve_cost_params{d.alpha, d.rho, d.n_layers, d.n_steps, d.n_v};
}

carve_status carve_cost_alpha(int l_end, int l_total, double* alpha) {
  CARVE_REQUIRE(alpha);
  return guarded([&] { *alpha = carve::oracle::CostParams::alpha_from_layers(l_end, l_total); });
}

carve_status carve_cost_model(const carve_cost_params* params, carve_cost_result* out) {
  CARVE_REQUIRE(params);
  CARVE_REQUIRE(out);
  return guarded([&] {
    carve::oracle::CostParams p;
    p.alpha = params->alpha;
    p.rho = params->rho;
    p.n_layers = params->n_layers;
    p.n_steps = params->n_steps;
    p.n_v = params->n_v;
    const auto r = carve::oracle::cost_model(p);
    *out = carve_cost_result{r.eta1, r.s_cache, r.s_combined, r.memory_bytes};
  });
}

carve_synth_params carve_synth_params_default(void) {
  carve_synth_params p{};
  p.seed = 0;
  p.grid_h = 16;
  p.grid_w = 16;
  p.layer_start = 20;
  p.layer_end = 25;
  p.steps = 10;
  p.roughness = 0.5;
  p.concentration = 1.0;
  p.delta = 0.0;
  p.image_height = 448;
  p.image_width = 448;
  return p;
}

carve_status carve_synth(const carve_synth_params* params, carve_stack** question, carve_stack** general,
                         carve_image** image) {
  CARVE_REQUIRE(params);
  return guarded([&] {
    if (params->layer_start < 0 || params->layer_start > params->layer_end) {
      throw carve::ValidationError("invalid synthetic layer range");
    }
    carve::oracle::SynthOptions o;
    o.seed = params->seed;
    o.grid_h = params->grid_h;
    o.grid_w = params->grid_w;
    o.layers.clear();
    for (int l = params->layer_start; l <= params->layer_end; ++l) o.layers.push_back(l);
    o.steps = params->steps;
    o.vis_roughness = params->roughness;
    o.sem_concentration = params->concentration;
    o.delta = params->delta;
    if (params->block_rows > 0 || params->block_cols > 0) {
      o.sem_block = carve::oracle::TokenBlock{params->block_row, params->block_col, params->block_rows,
                                              params->block_cols};
    }
    if (image && (params->image_height < 1 || params->image_width < 1)) {
      throw carve::ValidationError("synthetic image dimensions must be positive");
    }
    auto r = carve::oracle::synth_decomposition(o);
    carve_image* img = nullptr;
    if (image) {
      img = new carve_image{carve::oracle::synth_image(params->seed, params->image_height,
                                                       params->image_width, params->roughness)};
    }
    if (question) *question = new carve_stack{std::move(r.question)};
    if (general) *general = new carve_stack{std::move(r.general)};
    if (image) *image = img;
  });
}

carve_status carve_recovery_experiment(uint64_t base_seed, int trials, double delta, const char* csv_path,
                                       char** summary_json) {
  CARVE_REQUIRE(csv_path);
  return guarded([&] {
    const auto rows = carve::oracle::recovery_experiment(base_seed, trials, delta);
    carve::oracle::write_recovery_csv(rows, csv_path);
    if (summary_json) {
      int violations = 0;
      double worst = 0.0;
      for (const auto& t : rows) {
        const double allowed = t.bound + 1e-2 * t.f_sem_max;
        violations += t.observed_error > allowed;
        worst = std::max(worst, t.observed_error / allowed);
      }
      const nlohmann::json j{{"trials", trials},
                             {"delta", delta},
                             {"violations", violations},
                             {"worst_error_to_allowed_ratio", worst}};
      *summary_json = dup_string(j.dump(2));
    }
  });
}

carve_study_params carve_study_params_default(void) {
  const carve::study::StudyConfig d;
  carve_study_params p{};
  p.layer_start = d.layer_start;
  p.layer_end = d.layer_end;
  p.canny = carve_canny_params_default();
  p.exclude_achromatic = 0;
  p.lambda = d.lambda;
  p.threads = 0;
  return p;
}

carve_status carve_study_run(const char* dir, const char* out_dir, const carve_study_params* params,
                             char** summary_json) {
  CARVE_REQUIRE(dir);
  CARVE_REQUIRE(out_dir);
  CARVE_REQUIRE(params);
  return guarded([&] {
    carve::study::StudyConfig cfg;
    cfg.layer_start = params->layer_start;
    cfg.layer_end = params->layer_end;
    cfg.canny = to_cpp(params->canny);
    cfg.exclude_achromatic = params->exclude_achromatic != 0;
    cfg.lambda = params->lambda;
    cfg.threads = params->threads;
    if (!(cfg.lambda > 0.0)) throw carve::ValidationError("lambda must be positive");
    carve::imaging::validate(cfg.canny);
    const auto result = carve::study::run_study(dir, cfg);
    carve::study::write_outputs(result, cfg, out_dir);
    if (summary_json) *summary_json = dup_string(carve::study::stats_json(result, cfg));
  });
}

}  // extern "C"
