#ifndef VKPLATE_H
#define VKPLATE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. Zero is success.
typedef enum VkStatus {
  VK_STATUS_OK = 0,
  VK_STATUS_NULL_POINTER = 1,
  VK_STATUS_INVALID_ARGUMENT = 2,
  VK_STATUS_CONFIG = 3,
  VK_STATUS_PARSE = 4,
  VK_STATUS_NUMERIC = 5,
  VK_STATUS_ASSUMPTION_VIOLATION = 6,
  VK_STATUS_SINGULAR = 7,
  VK_STATUS_PRECONDITION = 8,
  VK_STATUS_GRID_MISMATCH = 9,
  VK_STATUS_LENGTH_MISMATCH = 10,
  VK_STATUS_STEP_FAILURE = 11,
  VK_STATUS_SOLVER_FAILURE = 12,
  VK_STATUS_DEGENERATE_DIRECTION = 13,
  VK_STATUS_UNSUPPORTED_WITH_LOAD = 14,
  VK_STATUS_THICKNESS_TOO_LARGE = 15,
  VK_STATUS_DEGENERATE_POLAR = 16,
  VK_STATUS_IO = 17,
  VK_STATUS_PANIC = 18,
} VkStatus;

// Reduced membrane and dissipation tensors.
typedef struct VkForms VkForms;

// A discrete plate state together with its grid and boundary data.
typedef struct VkState VkState;

// Energy split into its parts.
typedef struct VkEnergy {
  double membrane;
  double bending;
  double load;
  double total;
} VkEnergy;

// Local slope and the work done by the linear solver.
typedef struct VkSlope {
  double slope;
  size_t cg_iterations;
  double cg_residual;
} VkSlope;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null after a success.
// The pointer stays valid until the next call into this library from the same thread.
const char *vk_last_error_message(void);

// Catalog forms: membrane tensor `2 mu I`, dissipation tensor `4 gamma^2 I`.
//
// # Safety
// `out_forms` must be a valid pointer to write a handle to.
enum VkStatus vk_forms_catalog(double mu, double gamma, struct VkForms **out_forms);

// Forms from two symmetric positive definite 3x3 tensors in Voigt coordinates, row-major.
//
// # Safety
// `cw2` and `cd2` must point to 9 doubles each.
enum VkStatus vk_forms_from_tensors(const double *cw2,
                                    const double *cd2,
                                    struct VkForms **out_forms);

// # Safety
// `forms` must be null or a handle from this library not yet freed.
void vk_forms_free(struct VkForms *forms);

// State on an `l1 x l2` rectangle with `n1 x n2` nodes. Boundary data and the initial
// fields are preset expressions such as `pure_bend(1)` or `bump(0.3)+sine(0.1)`.
// `u_hat`/`v_hat` give the clamped boundary values; `u`/`v` the interior fields.
//
// # Safety
// String arguments must be nul-terminated.
enum VkStatus vk_state_from_presets(double l1,
                                    double l2,
                                    size_t n1,
                                    size_t n2,
                                    const char *u_hat,
                                    const char *v_hat,
                                    const char *u,
                                    const char *v,
                                    struct VkState **out_state);

// Reads a snapshot written by `vk run` or [`vk_state_write`].
//
// # Safety
// `path` must be nul-terminated.
enum VkStatus vk_state_read(const char *path, struct VkState **out_state);

// # Safety
// `state` must be a live handle and `path` nul-terminated.
enum VkStatus vk_state_write(const struct VkState *state, const char *path);

// Number of free unknowns: both in-plane displacements and the deflection at interior
// nodes, plus the boundary-normal ghost values of the deflection.
//
// # Safety
// `state` must be a live handle.
enum VkStatus vk_state_n_dofs(const struct VkState *state, size_t *out_n);

// Copies the unknowns into `buf`, which must hold exactly `len == n_dofs` doubles.
//
// # Safety
// `buf` must point to `len` writable doubles.
enum VkStatus vk_state_get_dofs(const struct VkState *state, double *buf, size_t len);

// New state sharing the grid and boundary data of `state` with the given unknowns.
//
// # Safety
// `dofs` must point to `len` doubles.
enum VkStatus vk_state_with_dofs(const struct VkState *state,
                                 const double *dofs,
                                 size_t len,
                                 struct VkState **out_state);

// # Safety
// `state` must be null or a handle from this library not yet freed.
void vk_state_free(struct VkState *state);

// Plate energy. `load` holds one value per grid cell (row-major, `len` entries) or is
// null for no transverse load.
//
// # Safety
// Handles must be live; `load` must be null or point to `len` doubles.
enum VkStatus vk_energy(const struct VkState *state,
                        const struct VkForms *forms,
                        const double *load,
                        size_t len,
                        struct VkEnergy *out_energy);

// Dissipation distance between two states on the same grid.
//
// # Safety
// Handles must be live.
enum VkStatus vk_dissipation(const struct VkState *a,
                             const struct VkState *b,
                             const struct VkForms *forms,
                             double *out_distance);

// Local slope of the unloaded energy.
//
// # Safety
// Handles must be live.
enum VkStatus vk_slope(const struct VkState *state,
                       const struct VkForms *forms,
                       struct VkSlope *out_slope);

// One unloaded minimizing-movement step of size `tau` from `state`.
//
// # Safety
// Handles must be live.
enum VkStatus vk_step(const struct VkState *state,
                      const struct VkForms *forms,
                      double tau,
                      struct VkState **out_state);

// Minimizing movements for `x^2/2` on the real line, started at `x0`. Writes the final
// iterate.
//
// # Safety
// `out_x` must be writable.
enum VkStatus vk_toy_run(double x0, double tau, double t_end, double *out_x);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VKPLATE_H */
