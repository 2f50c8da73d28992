#ifndef PDR_LAB_H
#define PDR_LAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PdrNorm {
  PDR_NORM_L2 = 0,
  PDR_NORM_LINF = 1,
} PdrNorm;

// Result code of every fallible call.
typedef enum PdrStatus {
  PDR_STATUS_OK = 0,
  PDR_STATUS_NULL_POINTER = 1,
  PDR_STATUS_INVALID_ARGUMENT = 2,
  PDR_STATUS_DIMENSION_MISMATCH = 3,
  PDR_STATUS_CONTRACT_VIOLATION = 4,
  PDR_STATUS_UNSUPPORTED = 5,
  PDR_STATUS_PARSE_ERROR = 6,
  PDR_STATUS_IO_ERROR = 7,
  PDR_STATUS_PANIC = 8,
} PdrStatus;

typedef enum PdrDivergence {
  PDR_DIVERGENCE_KL = 0,
  PDR_DIVERGENCE_REVERSE_KL = 1,
  PDR_DIVERGENCE_SQUARED_HELLINGER = 2,
  PDR_DIVERGENCE_JENSEN_SHANNON = 3,
} PdrDivergence;

// Opaque model handle.
typedef struct PdrModel PdrModel;

// Perturbation settings for RPT and VAT.
typedef struct PdrPerturbation {
  double radius;
  enum PdrNorm norm;
  size_t ascent_steps;
  double step_size;
  double init_std;
  size_t samples_per_example;
} PdrPerturbation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty after a success.
// The pointer stays valid until the next `pdr_*` call on the thread.
const char *pdr_last_error_message(void);

// Library defaults: radius 0.2, L2, K = 1, step 1e-3, init std 1e-5, one sample.
struct PdrPerturbation pdr_perturbation_default(void);

// All-zero model with the given layer widths (input first, classes last).
//
// # Safety
// `layer_dims` must point to `n_dims` values; `out` must be writable.
enum PdrStatus pdr_model_new_zeros(const size_t *layer_dims, size_t n_dims, struct PdrModel **out);

// Randomly initialized model, deterministic in `seed`.
//
// # Safety
// As [`pdr_model_new_zeros`].
enum PdrStatus pdr_model_init(const size_t *layer_dims,
                              size_t n_dims,
                              uint64_t seed,
                              struct PdrModel **out);

// Model from the JSON document written by `pdr-lab train --save-model`.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum PdrStatus pdr_model_from_json(const char *json, struct PdrModel **out);

// Serializes the model; release the string with [`pdr_string_free`].
//
// # Safety
// `model` must be a live handle; `out` must be writable.
enum PdrStatus pdr_model_to_json(const struct PdrModel *model, char **out);

// # Safety
// `s` must come from [`pdr_model_to_json`] or be null.
void pdr_string_free(char *s);

// # Safety
// `model` must come from a `pdr_model_*` constructor or be null.
void pdr_model_free(struct PdrModel *model);

// Input dimension, or 0 for a null handle.
//
// # Safety
// `model` must be a live handle or null.
size_t pdr_model_n_inputs(const struct PdrModel *model);

// Number of classes, or 0 for a null handle.
//
// # Safety
// `model` must be a live handle or null.
size_t pdr_model_n_classes(const struct PdrModel *model);

// Length of the flat parameter vector used by gradient outputs.
//
// # Safety
// `model` must be a live handle or null.
size_t pdr_model_n_parameters(const struct PdrModel *model);

// Posterior f(x) into `probs` (length n_classes).
//
// # Safety
// Pointers must be valid for the stated lengths.
enum PdrStatus pdr_model_predict(const struct PdrModel *model,
                                 const double *x,
                                 size_t n,
                                 double *probs,
                                 size_t m);

// Input Jacobian ∂f/∂x, row-major m × n, into `out` (length m·n).
//
// # Safety
// Pointers must be valid for the stated lengths.
enum PdrStatus pdr_model_input_jacobian(const struct PdrModel *model,
                                        const double *x,
                                        size_t n,
                                        double *out,
                                        size_t out_len);

// D_g(p_hat, p) = Σ p_i g(p_hat_i / p_i).
//
// # Safety
// `p_hat` and `p` must hold `m` values; `out` must be writable.
enum PdrStatus pdr_f_divergence(enum PdrDivergence kind,
                                const double *p_hat,
                                const double *p,
                                size_t m,
                                double *out);

// JR penalty ‖J‖²_F; `grads` (length n_parameters) may be null.
//
// # Safety
// Pointers must be valid for the stated lengths.
enum PdrStatus pdr_jr_penalty(const struct PdrModel *model,
                              const double *x,
                              size_t n,
                              double *value,
                              double *grads,
                              size_t grads_len);

// Second-order form (g''(1)/2)·εᵀJᵀdiag(1/f)Jε.
//
// # Safety
// `x` and `eps` must hold `n` values; `value` must be writable.
enum PdrStatus pdr_quadratic_penalty(const struct PdrModel *model,
                                     const double *x,
                                     const double *eps,
                                     size_t n,
                                     enum PdrDivergence kind,
                                     double *value);

// RPT penalty with Gaussian noise drawn from `seed`; `grads` may be null.
//
// # Safety
// Pointers must be valid for the stated lengths; `cfg` must be readable.
enum PdrStatus pdr_rpt_penalty(const struct PdrModel *model,
                               const double *x,
                               size_t n,
                               enum PdrDivergence kind,
                               const struct PdrPerturbation *cfg,
                               uint64_t seed,
                               double *value,
                               double *grads,
                               size_t grads_len);

// VAT penalty; writes ε* to `eps_out` (length n) unless null.
//
// # Safety
// Pointers must be valid for the stated lengths; `cfg` must be readable.
enum PdrStatus pdr_vat_penalty(const struct PdrModel *model,
                               const double *x,
                               size_t n,
                               enum PdrDivergence kind,
                               const struct PdrPerturbation *cfg,
                               uint64_t seed,
                               double *value,
                               double *eps_out,
                               double *grads,
                               size_t grads_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PDR_LAB_H */
