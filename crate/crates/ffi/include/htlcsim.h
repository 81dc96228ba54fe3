#ifndef HTLCSIM_H
#define HTLCSIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum HtlcStatus {
  HTLC_STATUS_OK = 0,
  HTLC_STATUS_NULL_POINTER = 1,
  HTLC_STATUS_INVALID_ARGUMENT = 2,
  HTLC_STATUS_IO = 3,
  HTLC_STATUS_INVALID_INPUT = 4,
  HTLC_STATUS_STATS = 5,
  HTLC_STATUS_NOT_RUN = 6,
  HTLC_STATUS_PANIC = 7,
} HtlcStatus;

// Opaque simulation handle.
typedef struct HtlcSimulation HtlcSimulation;

// Parameters of the random network and payment generator.
typedef struct HtlcGenerationParams {
  size_t n_peers;
  double avg_channels_per_peer;
  double topology_sigma;
  uint64_t avg_channel_capacity;
  double capacity_gini;
  // Payments per second.
  double payment_rate;
  size_t n_payments;
  double amount_sigma;
  double same_recipient_fraction;
  uint64_t base_fee_msat;
  uint64_t prop_fee_ppm;
  uint32_t timelock_delta;
  uint64_t min_htlc;
  uint64_t seed;
} HtlcGenerationParams;

// Simulation settings.
typedef struct HtlcSimConfig {
  uint64_t latency_min_ms;
  uint64_t latency_max_ms;
  uint64_t payment_timeout_ms;
  uint64_t block_interval_ms;
  uint64_t validity_window_ms;
  double p_uncoop_before;
  double p_uncoop_after;
  double fee_weight;
  double timelock_weight;
  uint32_t final_timelock;
  uint64_t seed;
} HtlcSimConfig;

// Number of payments in each final state.
typedef struct HtlcOutcomeCounts {
  size_t success;
  size_t fail_no_route;
  size_t fail_unbalanced;
  size_t fail_uncooperative;
  size_t fail_timeout;
  size_t unknown;
  size_t pending;
} HtlcOutcomeCounts;

// Batch-means summary of one measure. `present` is false when there were too few batches with a value.
typedef struct HtlcMeasure {
  bool present;
  double mean;
  double variance;
  double ci95_low;
  double ci95_high;
  size_t n_batches;
} HtlcMeasure;

typedef struct HtlcStatistics {
  struct HtlcMeasure p_success;
  struct HtlcMeasure p_fail_no_route;
  struct HtlcMeasure p_fail_unbalanced;
  struct HtlcMeasure p_fail_uncooperative;
  struct HtlcMeasure p_fail_timeout;
  struct HtlcMeasure p_unknown;
  struct HtlcMeasure payment_time_ms;
  struct HtlcMeasure attempts;
  struct HtlcMeasure route_length;
} HtlcStatistics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *htlc_version(void);

// Message of the last failed call on this thread, or null if the last call succeeded.
//
// The pointer stays valid until the next call into this library on the same thread.
const char *htlc_last_error_message(void);

struct HtlcGenerationParams htlc_generation_params_default(void);

struct HtlcSimConfig htlc_sim_config_default(void);

// Generates a random network and payment script.
//
// # Safety
// `params` and `config` must be null or point to valid structs; `out` must be a valid pointer.
enum HtlcStatus htlc_simulation_generate(const struct HtlcGenerationParams *params,
                                         const struct HtlcSimConfig *config,
                                         struct HtlcSimulation **out);

// Loads the network and payment files from directory `dir`.
//
// # Safety
// `dir` must be a NUL-terminated string, `config` a valid struct, `out` a valid pointer.
enum HtlcStatus htlc_simulation_load(const char *dir,
                                     const struct HtlcSimConfig *config,
                                     struct HtlcSimulation **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `sim` must be null or a handle from this library that has not been freed.
void htlc_simulation_free(struct HtlcSimulation *sim);

// Writes the network and payment files into directory `dir`, which must exist.
//
// # Safety
// `sim` must be a live handle and `dir` a NUL-terminated string.
enum HtlcStatus htlc_simulation_write_inputs(const struct HtlcSimulation *sim, const char *dir);

// Runs the simulation to completion. Running again starts over from the loaded inputs.
//
// # Safety
// `sim` must be a live handle.
enum HtlcStatus htlc_simulation_run(struct HtlcSimulation *sim);

// Number of payments, whether or not the simulation has run.
//
// # Safety
// `sim` must be a live handle and `out` a valid pointer.
enum HtlcStatus htlc_simulation_payment_count(const struct HtlcSimulation *sim, size_t *out);

// Final-state counts after [`htlc_simulation_run`].
//
// # Safety
// `sim` must be a live handle and `out` a valid pointer.
enum HtlcStatus htlc_simulation_outcomes(const struct HtlcSimulation *sim,
                                         struct HtlcOutcomeCounts *out);

// Number of route searches performed by the last run.
//
// # Safety
// `sim` must be a live handle and `out` a valid pointer.
enum HtlcStatus htlc_simulation_route_searches(const struct HtlcSimulation *sim, uint64_t *out);

// Writes the raw per-payment results of the last run into directory `dir`.
//
// # Safety
// `sim` must be a live handle and `dir` a NUL-terminated string.
enum HtlcStatus htlc_simulation_write_results(const struct HtlcSimulation *sim, const char *dir);

// Batch-means statistics of the last run.
//
// # Safety
// `sim` must be a live handle and `out` a valid pointer.
enum HtlcStatus htlc_simulation_analyze(const struct HtlcSimulation *sim,
                                        size_t n_batches,
                                        size_t warmup_batches,
                                        struct HtlcStatistics *out);

// Batch-means statistics of a raw per-payment file in directory `dir`.
//
// # Safety
// `dir` must be a NUL-terminated string and `out` a valid pointer.
enum HtlcStatus htlc_analyze_dir(const char *dir,
                                 size_t n_batches,
                                 size_t warmup_batches,
                                 struct HtlcStatistics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HTLCSIM_H */
