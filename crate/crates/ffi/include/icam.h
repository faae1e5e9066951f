#ifndef ICAM_H
#define ICAM_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define ICAM_PROBLEM_TSP 0

#define ICAM_PROBLEM_CVRP 1

#define ICAM_MODE_GREEDY_SINGLE 0

#define ICAM_MODE_GREEDY_MULTI 1

#define ICAM_MODE_SAMPLE 2

#define ICAM_MODE_AUGMENTED 3

/**
 * Architectures for [`icam_model_new`].
 */
#define ICAM_PRESET_PAPER 0

#define ICAM_PRESET_DESK 1

#define ICAM_PRESET_TINY 2

typedef enum IcamStatus {
  ICAM_STATUS_OK = 0,
  ICAM_STATUS_NULL_POINTER = 1,
  ICAM_STATUS_INVALID_ARGUMENT = 2,
  ICAM_STATUS_IO = 3,
  ICAM_STATUS_PARSE = 4,
  /**
   * Instance too large for the requested oracle.
   */
  ICAM_STATUS_SIZE = 5,
  ICAM_STATUS_INFEASIBLE = 6,
  ICAM_STATUS_NUMERIC = 7,
  ICAM_STATUS_CHECKPOINT = 8,
  ICAM_STATUS_PANIC = 9,
} IcamStatus;

/**
 * Opaque instance handle.
 */
typedef struct IcamInstance IcamInstance;

/**
 * Opaque model handle.
 */
typedef struct IcamModel IcamModel;

/**
 * Opaque solution handle.
 */
typedef struct IcamSolution IcamSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static NUL-terminated string.
 */
const char *icam_version(void);

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *icam_last_error(void);

/**
 * Random instance with `n` cities (TSP) or customers (CVRP). A `capacity` of
 * 0 picks the standard capacity for the scale.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum IcamStatus icam_instance_generate(int32_t problem_code,
                                       size_t n,
                                       uint32_t capacity,
                                       uint64_t seed,
                                       struct IcamInstance **out);

/**
 * TSP instance from `n` interleaved `x, y` pairs.
 *
 * # Safety
 * `xy` must point to `2 * n` readable doubles; `out` as above.
 */
enum IcamStatus icam_instance_tsp(const double *xy, size_t n, struct IcamInstance **out);

/**
 * CVRP instance from `n` nodes (node 0 is the depot, `demands[0] == 0`).
 *
 * # Safety
 * `xy` must point to `2 * n` readable doubles and `demands` to `n` readable
 * values; `out` as above.
 */
enum IcamStatus icam_instance_cvrp(const double *xy,
                                   const uint32_t *demands,
                                   size_t n,
                                   uint32_t capacity,
                                   struct IcamInstance **out);

/**
 * Reads a CVRPLIB `.vrp` file and normalizes it to the unit square; lengths
 * are still reported in the file's units.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` as above.
 */
enum IcamStatus icam_instance_from_cvrplib(const char *path, struct IcamInstance **out);

/**
 * Number of nodes (including the CVRP depot), or 0 for NULL.
 *
 * # Safety
 * `inst` must be NULL or a live handle.
 */
size_t icam_instance_len(const struct IcamInstance *inst);

/**
 * # Safety
 * `inst` must be NULL or a handle not yet freed.
 */
void icam_instance_free(struct IcamInstance *inst);

/**
 * Freshly initialized model with one of the `ICAM_PRESET_*` architectures.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum IcamStatus icam_model_new(int32_t problem_code,
                               int32_t preset,
                               uint64_t seed,
                               struct IcamModel **out);

/**
 * Loads a checkpoint; the architecture is read from the parameter shapes.
 * `clip` is the compatibility clip the model was trained with (50 by default).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` as above.
 */
enum IcamStatus icam_model_load(const char *path, double clip, struct IcamModel **out);

/**
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated string.
 */
enum IcamStatus icam_model_save(const struct IcamModel *model, const char *path);

/**
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void icam_model_free(struct IcamModel *model);

/**
 * Best solution found with one of the `ICAM_MODE_*` modes. `seed` is used by
 * sampling only.
 *
 * # Safety
 * `model` and `inst` must be live handles; `out` as above.
 */
enum IcamStatus icam_solve(const struct IcamModel *model,
                           const struct IcamInstance *inst,
                           int32_t mode_code,
                           uint64_t seed,
                           struct IcamSolution **out);

/**
 * Solution length in the instance's original units; NaN for NULL.
 *
 * # Safety
 * `sol` must be NULL or a live handle.
 */
double icam_solution_length(const struct IcamSolution *sol);

/**
 * Number of entries in the visit order (CVRP orders include depot visits).
 *
 * # Safety
 * `sol` must be NULL or a live handle.
 */
size_t icam_solution_order_len(const struct IcamSolution *sol);

/**
 * Copies the visit order into `buf`, which must hold
 * [`icam_solution_order_len`] entries.
 *
 * # Safety
 * `sol` must be a live handle and `buf` must point to `cap` writable values.
 */
enum IcamStatus icam_solution_order(const struct IcamSolution *sol, size_t *buf, size_t cap);

/**
 * # Safety
 * `sol` must be NULL or a handle not yet freed.
 */
void icam_solution_free(struct IcamSolution *sol);

/**
 * Length of `order` on `inst` in original units; rejects infeasible orders.
 *
 * # Safety
 * `inst` must be a live handle, `order` must point to `len` values and
 * `out` to one writable double.
 */
enum IcamStatus icam_tour_length(const struct IcamInstance *inst,
                                 const size_t *order,
                                 size_t len,
                                 double *out);

/**
 * Optimal objective in original units (TSP up to 15 nodes, CVRP up to 8
 * customers); `ICAM_SIZE` beyond that.
 *
 * # Safety
 * `inst` must be a live handle and `out` point to one writable double.
 */
enum IcamStatus icam_exact(const struct IcamInstance *inst, double *out);

/**
 * Nearest neighbour + 2-opt tour length in original units (TSP only).
 *
 * # Safety
 * `inst` must be a live handle and `out` point to one writable double.
 */
enum IcamStatus icam_nn2opt(const struct IcamInstance *inst, double *out);

/**
 * `(obj − reference) / reference · 100`.
 *
 * # Safety
 * `out` must point to one writable double.
 */
enum IcamStatus icam_gap(double obj, double reference, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ICAM_H */
