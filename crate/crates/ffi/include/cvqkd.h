#ifndef CVQKD_H
#define CVQKD_H

#include <stddef.h>
#include <stdint.h>

// Mode selector: 0 for A, 1 for B.
#define CVQKD_MODE_A 0

#define CVQKD_MODE_B 1

// Result code of every fallible call.
typedef enum CvqkdStatus {
  CVQKD_STATUS_OK = 0,
  CVQKD_STATUS_NULL_POINTER = 1,
  CVQKD_STATUS_INVALID_ARGUMENT = 2,
  // Truncation too small for the requested state or operation.
  CVQKD_STATUS_TRUNCATION = 3,
  // Not a valid density matrix.
  CVQKD_STATUS_INVALID_STATE = 4,
  // Quadrature grid too narrow for the state.
  CVQKD_STATUS_GRID_COVERAGE = 5,
  CVQKD_STATUS_IO = 6,
  CVQKD_STATUS_NUMERICAL = 7,
  CVQKD_STATUS_PANIC = 8,
} CvqkdStatus;

// Opaque two-mode density matrix.
typedef struct CvqkdState CvqkdState;

// Key-rate breakdown in bits per channel use.
typedef struct CvqkdSecurityReport {
  double i_ab;
  double chi_e;
  double keyrate;
  double gaussian_i_ab;
  double gaussian_chi_e;
  double gaussian_keyrate;
  double success_probability;
  // Infinite at unit transmissivity.
  double plob_bound;
} CvqkdSecurityReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *cvqkd_version(void);

// Message of the last failed call on this thread, or NULL. The pointer is
// valid until the next failing call on the same thread.
const char *cvqkd_last_error(void);

// Clears the thread's last error message.
void cvqkd_clear_error(void);

// Two-mode squeezed vacuum `Σ λⁿ|n,n⟩`, truncated at `n_max` and
// renormalized.
//
// # Safety
// `out` must be valid for writing one handle.
enum CvqkdStatus cvqkd_state_tmsv(double lambda, unsigned int n_max, struct CvqkdState **out);

// Two-mode vacuum.
//
// # Safety
// `out` must be valid for writing one handle.
enum CvqkdStatus cvqkd_state_vacuum(unsigned int n_max, struct CvqkdState **out);

// Reads a state from a JSON file written by `cvqkd_state_save`.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be valid for writing.
enum CvqkdStatus cvqkd_state_load(const char *path, struct CvqkdState **out);

// Writes a state as JSON.
//
// # Safety
// `state` must be a live handle and `path` a NUL-terminated string.
enum CvqkdStatus cvqkd_state_save(const struct CvqkdState *state, const char *path);

// Releases a handle. NULL is ignored.
//
// # Safety
// `state` must be NULL or a handle not yet freed.
void cvqkd_state_free(struct CvqkdState *state);

// Deep copy.
//
// # Safety
// `state` must be a live handle; `out` must be valid for writing.
enum CvqkdStatus cvqkd_state_clone(const struct CvqkdState *state, struct CvqkdState **out);

// Fock cutoff `n_max` of the state.
//
// # Safety
// `state` must be a live handle; `out` must be valid for writing.
enum CvqkdStatus cvqkd_state_cutoff(const struct CvqkdState *state, unsigned int *out);

// Copies the density matrix into `re` and `im`, row-major, each of length
// `len = ((n_max + 1)²)²`. The joint index of `|r⟩_A|s⟩_B` is
// `(n_max + 1) r + s`.
//
// # Safety
// `re` and `im` must be valid for writing `len` doubles.
enum CvqkdStatus cvqkd_state_density(const struct CvqkdState *state,
                                     double *re,
                                     double *im,
                                     uintptr_t len);

// Applies `(a†)^k` to `mode` and renormalizes. `weight` (may be NULL)
// receives the pre-normalization trace.
//
// # Safety
// `state` must be a live handle; `out` must be valid for writing.
enum CvqkdStatus cvqkd_add_photons(const struct CvqkdState *state,
                                   unsigned int mode_sel,
                                   unsigned int k,
                                   struct CvqkdState **out,
                                   double *weight);

// Pure-loss channel of transmissivity `t` on `mode`.
//
// # Safety
// `state` must be a live handle; `out` must be valid for writing.
enum CvqkdStatus cvqkd_loss_channel(const struct CvqkdState *state,
                                    unsigned int mode_sel,
                                    double t,
                                    struct CvqkdState **out);

// `log₂ ‖ρ^Γ‖₁`.
//
// # Safety
// `state` must be a live handle; `out` must be valid for writing.
enum CvqkdStatus cvqkd_log_negativity(const struct CvqkdState *state, double *out);

// `Tr ρ²`.
//
// # Safety
// `state` must be a live handle; `out` must be valid for writing.
enum CvqkdStatus cvqkd_purity(const struct CvqkdState *state, double *out);

// Squared Uhlmann fidelity of two states with equal cutoffs.
//
// # Safety
// Both handles must be live; `out` must be valid for writing.
enum CvqkdStatus cvqkd_fidelity(const struct CvqkdState *a,
                                const struct CvqkdState *b,
                                double *out);

// Reverse-reconciliation key rates with amplitude-quadrature homodyne
// detection on both modes and the default quadrature grid. `t` is the
// channel transmissivity used for the PLOB bound.
//
// # Safety
// `state` must be a live handle; `out` must be valid for writing.
enum CvqkdStatus cvqkd_security_report(const struct CvqkdState *state,
                                       double t,
                                       double success_probability,
                                       struct CvqkdSecurityReport *out);

// `-log₂(1 - t)`; infinite at `t = 1`.
double cvqkd_plob_bound(double t);

// Monte Carlo bit error rate of sign encoding with MAP decoding.
//
// # Safety
// `state` must be a live handle; `ber` must be valid for writing; `stderr`
// may be NULL.
enum CvqkdStatus cvqkd_bit_error_rate(const struct CvqkdState *state,
                                      double theta,
                                      uintptr_t n_samples,
                                      uint64_t seed,
                                      double *ber,
                                      double *stderr);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CVQKD_H */
