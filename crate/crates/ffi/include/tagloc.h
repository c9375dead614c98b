#ifndef TAGLOC_H
#define TAGLOC_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TaglocStatus {
  TAGLOC_STATUS_OK = 0,
  TAGLOC_STATUS_NULL_POINTER = 1,
  TAGLOC_STATUS_INVALID_INPUT = 2,
  TAGLOC_STATUS_GEOMETRY = 3,
  TAGLOC_STATUS_INSUFFICIENT_DATA = 4,
  TAGLOC_STATUS_PARSE = 5,
  TAGLOC_STATUS_UNDEFINED_METRIC = 6,
  TAGLOC_STATUS_IO = 7,
  TAGLOC_STATUS_PANIC = 8,
} TaglocStatus;

typedef enum TaglocTransceiver {
  TAGLOC_TRANSCEIVER_DW1000 = 0,
  TAGLOC_TRANSCEIVER_DW3000 = 1,
} TaglocTransceiver;

/**
 * Opaque anchor set.
 */
typedef struct TaglocAnchors TaglocAnchors;

/**
 * Opaque illuminance trace.
 */
typedef struct TaglocTrace TaglocTrace;

typedef struct TaglocFix {
  double position[3];
  /**
   * Squared-range cost at the solution, m^4.
   */
  double residual;
  bool ambiguous;
} TaglocFix;

/**
 * Battery and run settings for [`tagloc_simulate`]. Cell and converter use
 * the library defaults.
 */
typedef struct TaglocSimParams {
  double capacity_j;
  double initial_soc;
  /**
   * Fraction per 30-day month.
   */
  double self_discharge_rate;
  double base_load_w;
  double max_step_s;
  bool surplus_sink;
} TaglocSimParams;

/**
 * Energy totals in joules.
 */
typedef struct TaglocLedger {
  double harvested;
  double conversion_loss;
  double consumed;
  double unmet_load;
  double self_discharged;
  double curtailed;
  double surplus_consumed;
  double stored_delta;
  double initial_soc;
  double final_soc;
  double min_soc;
  double max_soc;
  double duration_s;
  double max_step_imbalance;
} TaglocLedger;

typedef struct TaglocFitMetrics {
  double rmse;
  double r_squared;
  double energy_error_pct;
} TaglocFitMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null if none failed.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *tagloc_last_error(void);

/**
 * Double-sided propagation time in ticks.
 *
 * # Safety
 * `out_ticks` must be null or point to a writable double.
 */
enum TaglocStatus tagloc_ds_twr_propagation(uint64_t t_round1,
                                            uint64_t t_reply1,
                                            uint64_t t_round2,
                                            uint64_t t_reply2,
                                            double *out_ticks);

/**
 * Creates an anchor set from `n` packed xyz triples.
 *
 * # Safety
 * `xyz` must point to `3 * n` doubles; `out` must point to a writable pointer.
 */
enum TaglocStatus tagloc_anchors_new(const double *xyz, size_t n, struct TaglocAnchors **out);

/**
 * # Safety
 * `anchors` must be null or a handle from [`tagloc_anchors_new`] not yet freed.
 */
void tagloc_anchors_free(struct TaglocAnchors *anchors);

/**
 * Globally optimal squared-range fix. `dimension` is 2 or 3; `distances`
 * holds one range per anchor, in anchor order.
 *
 * # Safety
 * `anchors` must be a live handle, `distances` must point to as many doubles
 * as the set has anchors, and `out` must point to a writable [`TaglocFix`].
 */
enum TaglocStatus tagloc_multilaterate(const struct TaglocAnchors *anchors,
                                       const double *distances,
                                       uint32_t dimension,
                                       struct TaglocFix *out);

/**
 * Energy of one localization event in joules.
 *
 * # Safety
 * `out_joules` must be null or point to a writable double.
 */
enum TaglocStatus tagloc_localization_energy(double battery_voltage,
                                             uint32_t oversampling,
                                             enum TaglocTransceiver transceiver,
                                             double *out_joules);

/**
 * Builds a trace from `n` (timestamp seconds, lux) pairs.
 *
 * # Safety
 * `timestamps` and `lux` must each point to `n` doubles; `out` must point to
 * a writable pointer.
 */
enum TaglocStatus tagloc_trace_new(const double *timestamps,
                                   const double *lux,
                                   size_t n,
                                   struct TaglocTrace **out);

/**
 * Loads a `timestamp_s,lux` CSV.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must point to a writable pointer.
 */
enum TaglocStatus tagloc_trace_load(const char *path, struct TaglocTrace **out);

/**
 * # Safety
 * `trace` must be null or a handle from a `tagloc_trace_*` constructor not yet freed.
 */
void tagloc_trace_free(struct TaglocTrace *trace);

/**
 * Default settings: the stock battery at half charge, 3 %/month
 * self-discharge, SLEEP-mode base load and a 60 s step.
 */
struct TaglocSimParams tagloc_sim_params_default(void);

/**
 * Simulates the solar power path over the whole trace.
 *
 * # Safety
 * `trace` must be a live handle, `params` must point to a readable
 * [`TaglocSimParams`] and `out` to a writable [`TaglocLedger`].
 */
enum TaglocStatus tagloc_simulate(const struct TaglocTrace *trace,
                                  const struct TaglocSimParams *params,
                                  struct TaglocLedger *out);

/**
 * RMSE, coefficient of determination and energy error of `n` paired samples.
 *
 * # Safety
 * `predicted` and `measured` must each point to `n` doubles; `out` must
 * point to a writable [`TaglocFitMetrics`].
 */
enum TaglocStatus tagloc_fit_metrics(const double *predicted,
                                     const double *measured,
                                     size_t n,
                                     struct TaglocFitMetrics *out);

/**
 * Accuracy of a row-major `n_classes x n_classes` confusion matrix,
 * `confusion[true * n_classes + predicted]`.
 *
 * # Safety
 * `confusion` must point to `n_classes * n_classes` values; `out` must
 * point to a writable double.
 */
enum TaglocStatus tagloc_accuracy(const uint64_t *confusion, size_t n_classes, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TAGLOC_H */
