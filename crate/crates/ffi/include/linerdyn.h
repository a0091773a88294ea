#ifndef LINERDYN_H
#define LINERDYN_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes.
 */
typedef enum LdStatus {
  LD_STATUS_OK = 0,
  LD_STATUS_NULL_POINTER = 1,
  LD_STATUS_INVALID_ARGUMENT = 2,
  LD_STATUS_DOMAIN = 3,
  LD_STATUS_PRECONDITION = 4,
  LD_STATUS_SOLVER = 5,
  LD_STATUS_CONFIG = 6,
  LD_STATUS_CONSISTENCY = 7,
  LD_STATUS_ESTIMATION = 8,
  LD_STATUS_IO = 9,
  LD_STATUS_BUFFER_TOO_SMALL = 10,
  LD_STATUS_PANIC = 99,
} LdStatus;

/**
 * Pricing regime of a route-year.
 */
typedef enum LdRegime {
  LD_REGIME_COLLUSIVE79 = 0,
  LD_REGIME_COLLUSIVE83 = 1,
  LD_REGIME_COMPETITIVE = 2,
} LdRegime;

/**
 * A loaded run configuration.
 */
typedef struct LdConfig LdConfig;

/**
 * Simulated paths from the configured initial state.
 */
typedef struct LdEnsemble LdEnsemble;

/**
 * A solved game together with the environment it was solved for.
 */
typedef struct LdPolicy LdPolicy;

/**
 * Static route coefficients, USD/TEU where applicable.
 */
typedef struct LdStaticParams {
  double alpha1;
  double gamma0;
  double gamma1;
  double cartel_effect_pre80;
  double cartel_effect_80_83;
} LdStaticParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated)
 * and stores the full length, without the NUL, in `*len`. With no error the
 * message is empty. `buf` may be null to query the length only.
 */
enum LdStatus ld_last_error_message(char *buf, size_t cap, size_t *len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ld_version(void);

/**
 * Equilibrium route price for `n` firms with the given tonnages (TEU).
 */
enum LdStatus ld_equilibrium_price(const struct LdStaticParams *params,
                                   double demand_state,
                                   const double *tonnages,
                                   size_t n,
                                   enum LdRegime regime,
                                   double *out_price);

/**
 * Loads a TOML run configuration.
 */
enum LdStatus ld_config_load(const char *path, struct LdConfig **out);

/**
 * Parses a configuration from TOML text; relative paths resolve against the
 * working directory.
 */
enum LdStatus ld_config_from_toml(const char *text, struct LdConfig **out);

void ld_config_free(struct LdConfig *cfg);

/**
 * Builds profits for `market` (null: the only configured market) under
 * `scenario` (null: baseline; else `baseline`, `no-cartel`, `omega1` or
 * `omega2`) and solves the game with the configured parameters.
 */
enum LdStatus ld_policy_solve(const struct LdConfig *cfg,
                              const char *market,
                              const char *scenario,
                              struct LdPolicy **out);

void ld_policy_free(struct LdPolicy *policy);

/**
 * Number of periods and of states of a solved game.
 */
enum LdStatus ld_policy_dims(const struct LdPolicy *policy, size_t *periods, size_t *states);

/**
 * CCP row at period `t` (0-based) and `state` (four level counts).
 * `actor` is 0..3 for levels 1..4 and 4 for potential entrants. Incumbent
 * rows are (exit, keep, build); entrant rows are (quit, enter, 0).
 */
enum LdStatus ld_policy_ccp(const struct LdPolicy *policy,
                            size_t t,
                            const uint32_t *state,
                            uint32_t actor,
                            double *out_row);

/**
 * Integrated value of `actor` at period `t` and `state`, in 100 bn USD.
 */
enum LdStatus ld_policy_value(const struct LdPolicy *policy,
                              size_t t,
                              const uint32_t *state,
                              uint32_t actor,
                              double *out_value);

/**
 * Simulates `n` paths with seeds `seed, seed + 1, ...`.
 */
enum LdStatus ld_ensemble_simulate(const struct LdPolicy *policy,
                                   size_t n,
                                   uint64_t seed,
                                   struct LdEnsemble **out);

void ld_ensemble_free(struct LdEnsemble *ensemble);

/**
 * Number of simulated years.
 */
enum LdStatus ld_ensemble_years(const struct LdEnsemble *ensemble, size_t *out_years);

/**
 * Mean firm counts per year and level, row-major `years x 4`, into `out`
 * of capacity `cap` doubles.
 */
enum LdStatus ld_ensemble_mean_counts(const struct LdEnsemble *ensemble, double *out, size_t cap);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LINERDYN_H */
