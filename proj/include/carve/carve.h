/*
 * carve.h - C interface to the contrastive attention refinement toolkit.
 *
 * All objects are opaque handles created and released by this library.
 * Every fallible call returns a carve_status; on failure a description is
 * available from carve_last_error() on the calling thread until the next call.
 * Strings returned through char** are owned by the caller and released with
 * carve_string_free().
 */
#ifndef CARVE_CARVE_H
#define CARVE_CARVE_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(CARVE_BUILDING_LIBRARY)
#    define CARVE_API __declspec(dllexport)
#  else
#    define CARVE_API __declspec(dllimport)
#  endif
#else
#  define CARVE_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum carve_status {
  CARVE_OK = 0,
  CARVE_ERR_INVALID_ARGUMENT = 1, /* null handle or pointer */
  CARVE_ERR_VALIDATION = 2,       /* value violates a documented range */
  CARVE_ERR_PARSE = 3,            /* malformed image, dump or CSV */
  CARVE_ERR_IO = 4,               /* file could not be read or written */
  CARVE_ERR_INTERNAL = 5
} carve_status;

typedef struct carve_image carve_image;
typedef struct carve_stack carve_stack;
typedef struct carve_saliency carve_saliency;

CARVE_API const char* carve_version(void);
CARVE_API const char* carve_last_error(void);
CARVE_API void carve_string_free(char* s);

/* Images: 8-bit RGB, row-major, 3 bytes per pixel. */
CARVE_API carve_status carve_image_load(const char* path, carve_image** out);
CARVE_API carve_status carve_image_from_rgb(int height, int width, const uint8_t* rgb,
                                            carve_image** out);
CARVE_API carve_status carve_image_save_png(const carve_image* image, const char* path);
CARVE_API int carve_image_height(const carve_image* image);
CARVE_API int carve_image_width(const carve_image* image);
CARVE_API const uint8_t* carve_image_data(const carve_image* image);
CARVE_API void carve_image_free(carve_image* image);

typedef struct carve_canny_params {
  double low;
  double high;
  double sigma;
} carve_canny_params;

CARVE_API carve_canny_params carve_canny_params_default(void);

/* Edge density and normalized hue entropy, both in [0, 1]. */
CARVE_API carve_status carve_complexity(const carve_image* image, const carve_canny_params* canny,
                                        int exclude_achromatic, double* texture, double* color);

/* Attention dumps (CATT). `warnings` receives the number of maps that had to
 * be renormalized; it may be null. */
CARVE_API carve_status carve_stack_read(const char* path, carve_stack** out, int* warnings);
CARVE_API carve_status carve_stack_read_buffer(const uint8_t* bytes, size_t len, carve_stack** out,
                                               int* warnings);
CARVE_API carve_status carve_stack_write(const carve_stack* stack, const char* path);
CARVE_API carve_status carve_stack_dims(const carve_stack* stack, int* grid_h, int* grid_w,
                                        int* n_layers, int* n_steps);
CARVE_API void carve_stack_free(carve_stack* stack);

/* JSON with per-layer entropies at `step` (-1: final step), the mean over
 * [layer_start, layer_end], its ln(N_v)-normalized value and any adjacent
 * layer pairs where entropy increases. */
CARVE_API carve_status carve_entropy_report(const carve_stack* stack, int layer_start,
                                            int layer_end, int step, char** json);

typedef enum carve_resize_policy { CARVE_RESIZE_STRETCH = 0, CARVE_RESIZE_FIT_PAD = 1 } carve_resize_policy;
typedef enum carve_interp { CARVE_INTERP_NEAREST = 0, CARVE_INTERP_BILINEAR = 1 } carve_interp;
typedef enum carve_steps { CARVE_STEPS_START = 0, CARVE_STEPS_END = 1, CARVE_STEPS_FULL = 2 } carve_steps;

typedef struct carve_config {
  double p;            /* retained fraction, (0, 1] */
  int k;               /* regions kept, >= 1 */
  int connectivity;    /* 4 or 8 */
  uint8_t fill[3];
  carve_resize_policy resize_policy;
  carve_interp resize_interp;
  double lambda;       /* > 0 */
  int layer_start;
  int layer_end;
  carve_steps steps;
  carve_interp reshape;
} carve_config;

CARVE_API carve_config carve_config_default(void);
CARVE_API carve_status carve_config_validate(const carve_config* cfg);

/* Full refinement. `out` receives the refined image; `diagnostics_json`
 * (optional) receives the sidecar document. */
CARVE_API carve_status carve_run(const carve_image* image, const carve_stack* question,
                                 const carve_stack* general, const carve_config* cfg,
                                 carve_image** out, char** diagnostics_json);

/* Fused contrastive saliency at height x width. */
CARVE_API carve_status carve_saliency_compute(const carve_stack* question,
                                              const carve_stack* general, const carve_config* cfg,
                                              int height, int width, carve_saliency** out);
CARVE_API int carve_saliency_height(const carve_saliency* s);
CARVE_API int carve_saliency_width(const carve_saliency* s);
CARVE_API const double* carve_saliency_values(const carve_saliency* s);
/* Grayscale PNG scaled so the maximum maps to 255. */
CARVE_API carve_status carve_saliency_save_png(const carve_saliency* s, const char* path);
/* JSON with min, max, mean and the top-p threshold. */
CARVE_API carve_status carve_saliency_summary(const carve_saliency* s, double p, char** json);
CARVE_API void carve_saliency_free(carve_saliency* s);

CARVE_API carve_status carve_progressive_mask(const carve_image* image, const carve_saliency* s,
                                              double ratio, const uint8_t fill[3],
                                              carve_image** out);

typedef struct carve_cost_params {
  double alpha; /* l_end / l_total, (0, 1] */
  double rho;   /* cache hit rate, [0, 1] */
  int n_layers;
  int n_steps;
  int n_v;
} carve_cost_params;

typedef struct carve_cost_result {
  double eta1;
  double s_cache;
  double s_combined;
  uint64_t memory_bytes;
} carve_cost_result;

CARVE_API carve_cost_params carve_cost_params_default(void);
CARVE_API carve_status carve_cost_alpha(int l_end, int l_total, double* alpha);
CARVE_API carve_status carve_cost_model(const carve_cost_params* params, carve_cost_result* out);

typedef struct carve_synth_params {
  uint64_t seed;
  int grid_h;
  int grid_w;
  int layer_start; /* layers layer_start..layer_end inclusive */
  int layer_end;
  int steps;
  double roughness;
  double concentration;
  double delta;
  int block_row; /* semantic block in tokens; block_rows == 0 selects a bump */
  int block_col;
  int block_rows;
  int block_cols;
  int image_height; /* 0: no image */
  int image_width;
} carve_synth_params;

CARVE_API carve_synth_params carve_synth_params_default(void);
/* Any of the outputs may be null. */
CARVE_API carve_status carve_synth(const carve_synth_params* params, carve_stack** question,
                                   carve_stack** general, carve_image** image);

/* Writes seed,delta,lambda,observed_error,bound rows; summary JSON optional. */
CARVE_API carve_status carve_recovery_experiment(uint64_t base_seed, int trials, double delta,
                                                 const char* csv_path, char** summary_json);

typedef struct carve_study_params {
  int layer_start;
  int layer_end;
  carve_canny_params canny;
  int exclude_achromatic;
  double lambda;
  unsigned threads;
} carve_study_params;

CARVE_API carve_study_params carve_study_params_default(void);
/* Writes raw.csv, binned.csv, stats.json and plot.svg into out_dir and
 * returns stats.json's content through summary_json (optional). */
CARVE_API carve_status carve_study_run(const char* dir, const char* out_dir,
                                       const carve_study_params* params, char** summary_json);

#ifdef __cplusplus
}
#endif

#endif /* CARVE_CARVE_H */
