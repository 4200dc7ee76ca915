#ifndef FLATSTRIP_H
#define FLATSTRIP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FsProfileKind {
  FS_PROFILE_KIND_FLAT = 0,
  FS_PROFILE_KIND_POWER = 1,
  FS_PROFILE_KIND_CAPPED_POWER = 2,
  FS_PROFILE_KIND_S_DEPENDENT = 3,
  FS_PROFILE_KIND_CONSTANT_CURVATURE = 4,
} FsProfileKind;

// Status codes. Zero is success.
typedef enum FsStatus {
  FS_STATUS_OK = 0,
  FS_STATUS_NULL_POINTER = 1,
  FS_STATUS_INVALID_INPUT = 2,
  FS_STATUS_OUT_OF_STRIP = 3,
  FS_STATUS_UNSUPPORTED = 4,
  FS_STATUS_NUMERICAL = 5,
  FS_STATUS_BOUND_VIOLATION = 6,
  FS_STATUS_PANIC = 7,
} FsStatus;

// Opaque model handle.
typedef struct FsModel FsModel;

// Opaque trajectory handle.
typedef struct FsTrajectory FsTrajectory;

// Profile parameters; fields that do not apply to `kind` are ignored.
typedef struct FsProfile {
  enum FsProfileKind kind;
  uint32_t m;
  double c;
  double x_cap;
  double c_min;
  double gamma1;
  double k;
} FsProfile;

typedef struct FsWarp {
  double g;
  double g_x;
  double g_xx;
} FsWarp;

typedef struct FsState {
  double tau;
  double s;
  double x;
  double phi;
} FsState;

typedef struct FsShadow {
  // Start vector of the shadowing segment.
  struct FsState w;
  double residual;
  double t_turn;
} FsShadow;

typedef struct FsGap {
  double xi;
  double c;
  double alpha_opt;
  double gap;
} FsGap;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` as a
// NUL-terminated string, truncating if needed. Returns the full message
// length in bytes, excluding the terminator.
//
// # Safety
// `buf` must be null or valid for `len` writable bytes.
size_t fs_last_error(char *buf, size_t len);

// Builds a model. `*out` receives a handle to free with [`fs_model_free`].
//
// # Safety
// `profile` and `out` must be valid pointers.
enum FsStatus fs_model_new(const struct FsProfile *profile,
                           size_t n,
                           double half_width,
                           double gamma0,
                           struct FsModel **out);

// Builds a model from the `[profile]` and `[model]` tables of an
// experiment config.
//
// # Safety
// `toml` must be a NUL-terminated string and `out` a valid pointer.
enum FsStatus fs_model_from_config(const char *toml, struct FsModel **out);

// # Safety
// `model` must be null or a handle from this library, not yet freed.
void fs_model_free(struct FsModel *model);

// # Safety
// `model` and `out` must be valid pointers.
enum FsStatus fs_eval_metric(const struct FsModel *model, double s, double x, struct FsWarp *out);

// Curvature of the normal plane spanned by `∂/∂s` and `∂/∂x`.
//
// # Safety
// `model` and `out` must be valid pointers.
enum FsStatus fs_normal_curvature(const struct FsModel *model, double s, double x, double *out);

// Integrates the geodesic flow from `start` for time `t_max`.
//
// # Safety
// `model` and `out` must be valid pointers.
enum FsStatus fs_integrate(const struct FsModel *model,
                           struct FsState start,
                           double t_max,
                           double tol,
                           struct FsTrajectory **out);

// Number of accepted samples, including the start.
//
// # Safety
// `traj` must be null or a live handle.
size_t fs_trajectory_len(const struct FsTrajectory *traj);

// # Safety
// `traj` and `out` must be valid pointers.
enum FsStatus fs_trajectory_get(const struct FsTrajectory *traj, size_t i, struct FsState *out);

// Relative Clairaut drift; `Unsupported` for s-dependent warps.
//
// # Safety
// `traj` and `out` must be valid pointers.
enum FsStatus fs_trajectory_clairaut_drift(const struct FsTrajectory *traj, double *out);

// # Safety
// `traj` must be null or a live handle.
void fs_trajectory_free(struct FsTrajectory *traj);

// Shadowing segment of length `t` between heights `r` starting at `s0`.
//
// # Safety
// `model` and `out` must be valid pointers.
enum FsStatus fs_shadow(const struct FsModel *model,
                        double s0,
                        double t,
                        double r,
                        double tol,
                        struct FsShadow *out);

// Geometric potential `ψᵘ` at `v` with default limit settings.
//
// # Safety
// `model` and `out` must be valid pointers.
enum FsStatus fs_psi_u(const struct FsModel *model, struct FsState v, double *out);

// Closed-form pressure-gap lower bound.
//
// # Safety
// `out` must be a valid pointer.
enum FsStatus fs_gap_lower_bound(double c_key,
                                 double phi_norm,
                                 double transition_time,
                                 double escape_l,
                                 struct FsGap *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLATSTRIP_H */
