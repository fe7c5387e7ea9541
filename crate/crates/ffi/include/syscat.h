#ifndef SYSCAT_H
#define SYSCAT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every function.
typedef enum SyscatStatus {
  SYSCAT_STATUS_OK = 0,
  SYSCAT_STATUS_NULL_POINTER = 1,
  SYSCAT_STATUS_INVALID_INPUT = 2,
  SYSCAT_STATUS_POLE = 3,
  SYSCAT_STATUS_NO_CONVERGENCE = 4,
  SYSCAT_STATUS_NUMERICAL = 5,
  SYSCAT_STATUS_UNSUPPORTED = 6,
  SYSCAT_STATUS_CHECK_FAILED = 7,
  SYSCAT_STATUS_PANIC = 8,
} SyscatStatus;

// Opaque geometry handle.
typedef struct SyscatGeometry SyscatGeometry;

// Opaque handle for a solved geometry.
typedef struct SyscatSolution SyscatSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *syscat_last_error_message(void);

// Library version as a static string.
const char *syscat_version(void);

// Parse a geometry spec (JSON).
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum SyscatStatus syscat_geometry_from_json(const char *json, struct SyscatGeometry **out);

// # Safety
// `g` must come from `syscat_geometry_from_json` or be null.
void syscat_geometry_free(struct SyscatGeometry *g);

// Boundary dimension n.
//
// # Safety
// `g` must be a live geometry handle; `out` must be writable.
enum SyscatStatus syscat_geometry_dimension(const struct SyscatGeometry *g, uint32_t *out);

// Solve the singular Yamabe problem on a geometry.
//
// # Safety
// `g` must be a live geometry handle; `out` must be writable.
enum SyscatStatus syscat_solve(const struct SyscatGeometry *g,
                               double tol,
                               struct SyscatSolution **out);

// # Safety
// `s` must come from `syscat_solve` or be null.
void syscat_solution_free(struct SyscatSolution *s);

// Global constant c of ũ (coefficient of r^{n+1}).
//
// # Safety
// `s` must be a live solution handle; `out` must be writable.
enum SyscatStatus syscat_solution_global_constant(const struct SyscatSolution *s, double *out);

// Mode eigenvalue of S(s). `mode` is e.g. "1,0" or "l=2"; null means the
// trivial mode.
//
// # Safety
// `s` must be a live solution handle; `mode` null or NUL-terminated;
// `out` writable.
enum SyscatStatus syscat_scattering(const struct SyscatSolution *s,
                                    double sval,
                                    const char *mode,
                                    double *out);

// Q = c_n^{-1} S(n)1.
//
// # Safety
// `s` must be a live solution handle; `out` writable.
enum SyscatStatus syscat_q_curvature(const struct SyscatSolution *s, double *out);

// 𝒮 = d/ds S(s)1 at s = n.
//
// # Safety
// `s` must be a live solution handle; `out` writable.
enum SyscatStatus syscat_s_derivative(const struct SyscatSolution *s, double *out);

// P_q eigenvalue of a mode from the residue of S at (n+q)/2.
//
// # Safety
// `s` must be a live solution handle; `mode` null or NUL-terminated;
// `out` writable.
enum SyscatStatus syscat_gjms_eigenvalue(const struct SyscatSolution *s,
                                         uint32_t q,
                                         const char *mode,
                                         double *out);

// c_q as a double, plus numerator and denominator when they fit in i64.
//
// # Safety
// `out` writable; `num` and `den` may be null.
enum SyscatStatus syscat_residue_constant(uint32_t q,
                                          uint32_t n,
                                          double *out,
                                          int64_t *num,
                                          int64_t *den);

// Run identity checks ("B,C,E", …) and return the JSON report array in a
// string freed with `syscat_string_free`. Returns CHECK_FAILED, with the
// reports still written, when a check fails.
//
// # Safety
// `g` must be a live geometry handle; `checks` NUL-terminated; `out`
// writable.
enum SyscatStatus syscat_verify_json(const struct SyscatGeometry *g,
                                     const char *checks,
                                     double tol,
                                     double budget_scale,
                                     char **out);

// # Safety
// `s` must come from this library or be null.
void syscat_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SYSCAT_H */
