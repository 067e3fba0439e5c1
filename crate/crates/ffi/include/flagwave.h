/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef FLAGWAVE_H
#define FLAGWAVE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Kernel pair kinds accepted by [`fw_kernel_new`].
typedef enum FwKernelKind {
  FW_KERNEL_KIND_LITTLEWOOD_PALEY = 0,
  FW_KERNEL_KIND_POISSON = 1,
  FW_KERNEL_KIND_HEAT = 2,
  FW_KERNEL_KIND_HEAT_LP = 3,
  FW_KERNEL_KIND_INDICATOR = 4,
} FwKernelKind;

// Area and maximal functions computed by [`fw_operator`].
typedef enum FwOperator {
  FW_OPERATOR_G_FUNCTION = 0,
  FW_OPERATOR_AREA_FUNCTION = 1,
  FW_OPERATOR_POISSON_AREA_FUNCTION = 2,
  FW_OPERATOR_HEAT_AREA_FUNCTION = 3,
  FW_OPERATOR_RADIAL_MAX = 4,
  FW_OPERATOR_NONTANGENTIAL_MAX = 5,
  FW_OPERATOR_STRONG_MAX = 6,
} FwOperator;

// Status codes returned by every fallible function.
typedef enum FwStatus {
  FW_STATUS_OK = 0,
  FW_STATUS_NULL_POINTER = 1,
  FW_STATUS_INVALID_ARGUMENT = 2,
  FW_STATUS_INVALID_LATTICE = 3,
  FW_STATUS_INVALID_SCALE_GRID = 4,
  FW_STATUS_SHAPE_MISMATCH = 5,
  FW_STATUS_LATTICE_MISMATCH = 6,
  FW_STATUS_IO = 7,
  FW_STATUS_NUMERICAL = 8,
  FW_STATUS_PANIC = 9,
} FwStatus;

typedef struct FwDecomposition FwDecomposition;

typedef struct FwGrid FwGrid;

typedef struct FwKernel FwKernel;

typedef struct FwLattice FwLattice;

typedef struct FwScaleGrid FwScaleGrid;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failing call on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *fw_last_error(void);

// Library version as a static nul-terminated string.
const char *fw_version(void);

enum FwStatus fw_lattice_new(size_t n,
                             size_t m,
                             size_t points_per_axis,
                             double period,
                             struct FwLattice **out);

// Number of samples `N^(n+m)` of the lattice.
enum FwStatus fw_lattice_len(const struct FwLattice *lattice, size_t *out);

void fw_lattice_free(struct FwLattice *lattice);

// Copies `len` row-major samples into a new grid function.
enum FwStatus fw_grid_new(const struct FwLattice *lattice,
                          const double *values,
                          size_t len,
                          struct FwGrid **out);

enum FwStatus fw_grid_len(const struct FwGrid *grid, size_t *out);

// Copies the samples into `values`, which must hold exactly `len` entries.
enum FwStatus fw_grid_values(const struct FwGrid *grid, double *values, size_t len);

void fw_grid_free(struct FwGrid *grid);

enum FwStatus fw_scale_grid_new(const struct FwLattice *lattice,
                                int32_t j_min,
                                int32_t j_max,
                                int32_t k_min,
                                int32_t k_max,
                                uint32_t samples_per_block,
                                struct FwScaleGrid **out);

// Writes 1 when every nonzero lattice frequency is covered, 0 otherwise.
enum FwStatus fw_scale_grid_full_coverage(const struct FwScaleGrid *grid, int32_t *out);

void fw_scale_grid_free(struct FwScaleGrid *grid);

// Kernel pair of `kind`. `renormalized` selects the discretely renormalized
// calibration, which exists only for the Littlewood-Paley pair and needs
// `scale_grid`; otherwise `scale_grid` may be null.
enum FwStatus fw_kernel_new(const struct FwLattice *lattice,
                            enum FwKernelKind kind,
                            int32_t renormalized,
                            const struct FwScaleGrid *scale_grid,
                            struct FwKernel **out);

void fw_kernel_free(struct FwKernel *kernel);

// `psi_{t,s} * f`.
enum FwStatus fw_flag_convolve(const struct FwGrid *f,
                               const struct FwKernel *kernel,
                               double t,
                               double s,
                               struct FwGrid **out);

// One of the area or maximal functions. `kernel` is used by the
// g-function, the area function and the radial and non-tangential maximal
// functions and may be null for the others; `scale_grid` may be null only
// for the strong maximal function.
enum FwStatus fw_operator(enum FwOperator op,
                          const struct FwGrid *f,
                          const struct FwKernel *kernel,
                          const struct FwScaleGrid *scale_grid,
                          struct FwGrid **out);

// Riesz transform `R_{j,k} f` with 1-based indices `j <= n + m`, `k <= m`.
enum FwStatus fw_riesz(const struct FwGrid *f, size_t j, size_t k, struct FwGrid **out);

// Atomic decomposition of `f` with Laplacian power `m_power` and the
// default level span, dilation and tolerances.
enum FwStatus fw_decompose(const struct FwGrid *f,
                           const struct FwScaleGrid *scale_grid,
                           uint32_t m_power,
                           struct FwDecomposition **out);

enum FwStatus fw_decomposition_level_count(const struct FwDecomposition *dec, size_t *out);

enum FwStatus fw_decomposition_reconstruction_error(const struct FwDecomposition *dec, double *out);

// Level exponent `l` and coefficient `lambda_l` of the `index`-th level.
enum FwStatus fw_decomposition_level(const struct FwDecomposition *dec,
                                     size_t index,
                                     int32_t *level,
                                     double *lambda);

// Copy of the atom of the `index`-th level.
enum FwStatus fw_decomposition_atom(const struct FwDecomposition *dec,
                                    size_t index,
                                    struct FwGrid **out);

// `sum_l lambda_l a_l`.
enum FwStatus fw_decomposition_reconstruct(const struct FwDecomposition *dec, struct FwGrid **out);

// Writes the decomposition directory format to `dir` (UTF-8 path).
enum FwStatus fw_decomposition_write(const struct FwDecomposition *dec, const char *dir);

void fw_decomposition_free(struct FwDecomposition *dec);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLAGWAVE_H */
