#ifndef LOSS_TUNNEL_H
#define LOSS_TUNNEL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LtStatus {
  LT_STATUS_OK = 0,
  // Null pointer, bad enum value or undersized output buffer.
  LT_STATUS_INVALID_ARGUMENT = 1,
  LT_STATUS_INPUT = 2,
  LT_STATUS_CONFIG = 3,
  LT_STATUS_DIMENSION = 4,
  LT_STATUS_NON_FINITE = 5,
  LT_STATUS_DEGENERATE = 6,
  LT_STATUS_UNDEFINED_FRAME = 7,
  LT_STATUS_SAMPLER = 8,
  LT_STATUS_SCHEMA = 9,
  LT_STATUS_DATA = 10,
  LT_STATUS_STALE_ARTIFACT = 11,
  LT_STATUS_IO = 12,
  // A Rust panic was caught at the boundary.
  LT_STATUS_INTERNAL = 13,
} LtStatus;

typedef enum LtParam {
  // Curve time in [0, 1].
  LT_PARAM_TIME = 0,
  // Arc length in [0, S].
  LT_PARAM_ARC = 1,
} LtParam;

typedef enum LtVolumeMode {
  LT_VOLUME_MODE_SPEED_ONLY = 0,
  LT_VOLUME_MODE_FULL_JACOBIAN = 1,
} LtVolumeMode;

// Bezier curve in parameter space.
typedef struct LtCurve LtCurve;

// Rotation-minimizing tunnel around a curve.
typedef struct LtTunnel LtTunnel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message into `buf` (NUL
// terminated, truncated to `len`) and returns the full message length.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t lt_last_error(char *buf, size_t len);

// Bernstein weights of a degree `degree` curve at `t`; writes `degree + 1`
// values.
//
// # Safety
// `out` must point to `out_len` writable doubles.
enum LtStatus lt_bernstein_weights(size_t degree, double t, double *out, size_t out_len);

// Builds a curve from `n_points` control points of dimension `dim`, stored
// row by row.
//
// # Safety
// `points` must hold `n_points * dim` doubles and `out` must be writable.
enum LtStatus lt_curve_new(const double *points, size_t n_points, size_t dim, struct LtCurve **out);

// # Safety
// `curve` must be null or come from [`lt_curve_new`] and not be freed yet.
void lt_curve_free(struct LtCurve *curve);

// Degree `K` of the curve, or 0 for a null handle.
//
// # Safety
// `curve` must be null or a live handle.
size_t lt_curve_degree(const struct LtCurve *curve);

// Ambient dimension of the curve, or 0 for a null handle.
//
// # Safety
// `curve` must be null or a live handle.
size_t lt_curve_dim(const struct LtCurve *curve);

// Writes the curve point at `t`.
//
// # Safety
// `curve` must be a live handle and `out` must hold `out_len` doubles.
enum LtStatus lt_curve_evaluate(const struct LtCurve *curve, double t, double *out, size_t out_len);

// Length of the curve between `a` and `b`.
//
// # Safety
// `curve` must be a live handle and `out` writable.
enum LtStatus lt_curve_arc_length(const struct LtCurve *curve, double a, double b, double *out);

// Curve time at which the arc length from 0 equals `s`. A non-positive
// `tol` selects the default tolerance.
//
// # Safety
// `curve` must be a live handle and `out` writable.
enum LtStatus lt_curve_arc_to_time(const struct LtCurve *curve, double s, double tol, double *out);

// Builds a tunnel around `curve` with `grid_points` frames. A zero
// `grid_points` or non-positive `angle_threshold_deg` keeps the default.
//
// # Safety
// `curve` must be a live handle and `out` writable.
enum LtStatus lt_tunnel_build(const struct LtCurve *curve,
                              size_t grid_points,
                              double angle_threshold_deg,
                              uint64_t seed,
                              struct LtTunnel **out);

// Loads a tunnel saved with [`lt_tunnel_save`] or by the command-line tool.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum LtStatus lt_tunnel_load(const char *path, struct LtTunnel **out);

// # Safety
// `tunnel` must be a live handle and `path` a NUL-terminated string.
enum LtStatus lt_tunnel_save(const struct LtTunnel *tunnel, const char *path);

// # Safety
// `tunnel` must be null or a handle that has not been freed yet.
void lt_tunnel_free(struct LtTunnel *tunnel);

// Dimension of lifted parameter vectors, or 0 for a null handle.
//
// # Safety
// `tunnel` must be null or a live handle.
size_t lt_tunnel_ambient_dim(const struct LtTunnel *tunnel);

// Number of normal coordinates `xi`, or 0 for a null handle.
//
// # Safety
// `tunnel` must be null or a live handle.
size_t lt_tunnel_n_normals(const struct LtTunnel *tunnel);

// Total arc length of the tunnel's centre curve, or NaN for a null handle.
//
// # Safety
// `tunnel` must be null or a live handle.
double lt_tunnel_length(const struct LtTunnel *tunnel);

// Maps tunnel coordinates to a parameter vector. `kind` is an
// [`LtParam`] value saying whether `value` is a time or an arc length.
//
// # Safety
// `tunnel` must be a live handle, `xi` must hold `xi_len` doubles and `out`
// `out_len` doubles.
enum LtStatus lt_tunnel_lift(const struct LtTunnel *tunnel,
                             int32_t kind,
                             double value,
                             const double *xi,
                             size_t xi_len,
                             double *out,
                             size_t out_len);

// Log volume adjustment of the tunnel map; `kind` as in [`lt_tunnel_lift`]
// and `mode` an [`LtVolumeMode`] value.
//
// # Safety
// `tunnel` must be a live handle, `xi` must hold `xi_len` doubles and `out`
// must be writable.
enum LtStatus lt_tunnel_log_volume_adjustment(const struct LtTunnel *tunnel,
                                              int32_t kind,
                                              double value,
                                              const double *xi,
                                              size_t xi_len,
                                              int32_t mode,
                                              double *out);

// Effective sample size of one scalar over `n_chains` chains of `n_draws`
// draws each, stored chain by chain. `flagged` (may be null) is set to 1
// when the estimate is unreliable.
//
// # Safety
// `draws` must hold `n_chains * n_draws` doubles; `out` must be writable.
enum LtStatus lt_ess(const double *draws,
                     size_t n_chains,
                     size_t n_draws,
                     double *out,
                     int32_t *flagged);

// Potential scale reduction factor, with the same layout as [`lt_ess`].
//
// # Safety
// `draws` must hold `n_chains * n_draws` doubles; `out` must be writable.
enum LtStatus lt_rhat(const double *draws,
                      size_t n_chains,
                      size_t n_draws,
                      double *out,
                      int32_t *flagged);

// Mean log pointwise predictive density from a row-major
// `n_obs x n_draws` matrix of log densities.
//
// # Safety
// `log_densities` must hold `n_obs * n_draws` doubles; `out` must be
// writable.
enum LtStatus lt_lppd(const double *log_densities, size_t n_obs, size_t n_draws, double *out);

// Expected centre-of-mass distance of the polymer model after `n` steps.
double lt_polymer_com(double n, double eta, double sigma, double d, size_t k);

// Expected squared end-to-end distance of the polymer model after `n`
// steps.
//
// # Safety
// `out` must be writable.
enum LtStatus lt_polymer_re2(double n, double eta, double sigma, double d, size_t k, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LOSS_TUNNEL_H */
