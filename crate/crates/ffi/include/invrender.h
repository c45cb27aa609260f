#ifndef INVRENDER_H
#define INVRENDER_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IrStatus {
  IR_STATUS_OK = 0,
  IR_STATUS_NULL_POINTER = 1,
  IR_STATUS_IO = 2,
  IR_STATUS_INVALID_ARGUMENT = 3,
  IR_STATUS_INVALID_FILE = 4,
  IR_STATUS_PANIC = 5,
} IrStatus;

// Opaque model handle.
typedef struct IrModel IrModel;

// Render settings.
typedef struct IrRenderOptions {
  // Secondary rays per pixel.
  uint32_t samples;
  uint32_t march_uniform;
  uint32_t march_adaptive;
  // Marching-cubes resolution of the shadow mesh, per axis.
  uint32_t grid_res;
  // Exported sky rows and columns.
  uint32_t sky_height;
  uint32_t sky_width;
  uint64_t seed;
} IrRenderOptions;

// Pinhole camera: world-from-camera pose (row-major, OpenCV axes) and intrinsics.
typedef struct IrCamera {
  double pose[16];
  double fx;
  double fy;
  double cx;
  double cy;
  uint32_t width;
  uint32_t height;
} IrCamera;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *ir_last_error(void);

// Defaults matching the command-line renderer.
struct IrRenderOptions ir_render_options_default(void);

// Load a checkpoint. On success `*out` owns a new handle.
//
// # Safety
// `path` must be a valid NUL-terminated string and `out` a valid pointer.
enum IrStatus ir_model_load(const char *path, struct IrModel **out);

// Release a handle; null is ignored.
//
// # Safety
// `model` must come from [`ir_model_load`] and not be used afterwards.
void ir_model_free(struct IrModel *model);

// Number of illumination conditions (skies) of the model.
//
// # Safety
// Pointers must be valid.
enum IrStatus ir_model_n_illum(const struct IrModel *model, uintptr_t *out);

// Render a view with the standard pipeline into `out` (`width*height*3`
// floats, tonemapped RGB in `[0,1]`, rows top to bottom).
//
// # Safety
// Pointers must be valid; `out` must hold `out_len` floats.
enum IrStatus ir_render(struct IrModel *model,
                        const struct IrCamera *cam,
                        uintptr_t illum,
                        const struct IrRenderOptions *opts,
                        float *out,
                        uintptr_t out_len);

// Render under a user sky given as `env_height x env_width` RGB floats.
//
// # Safety
// Pointers must be valid; `env` holds `env_width*env_height*3` floats and
// `out` holds `out_len` floats.
enum IrStatus ir_relight(struct IrModel *model,
                         const struct IrCamera *cam,
                         const float *env,
                         uintptr_t env_width,
                         uintptr_t env_height,
                         const struct IrRenderOptions *opts,
                         float *out,
                         uintptr_t out_len);

// Export sky `illum` as `height x width` linear RGB floats.
//
// # Safety
// Pointers must be valid; `out` holds `out_len` floats.
enum IrStatus ir_export_envmap(const struct IrModel *model,
                               uintptr_t illum,
                               uintptr_t height,
                               uintptr_t width,
                               float *out,
                               uintptr_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* INVRENDER_H */
