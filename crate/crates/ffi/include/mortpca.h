#ifndef MORTPCA_H
#define MORTPCA_H

/* Generated by cbindgen from the mortpca-ffi crate; do not edit by hand. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result of every fallible call. The first four codes mirror the CLI
 * exit codes (i/o problems are reported separately here); `NullArg`
 * and `Panic` are boundary conditions specific to the C API.
 */
typedef enum MpStatus {
  MP_STATUS_OK = 0,
  MP_STATUS_USAGE = 1,
  MP_STATUS_DATA = 2,
  MP_STATUS_NUMERIC = 3,
  MP_STATUS_IO = 4,
  MP_STATUS_NULL_ARG = 5,
  MP_STATUS_PANIC = 6,
} MpStatus;

/**
 * Trend-model selection rule used by [`mp_model_fit`].
 */
typedef enum MpSelection {
  MP_SELECTION_BIC = 0,
  MP_SELECTION_AIC = 1,
  MP_SELECTION_FORCE_M11 = 2,
  MP_SELECTION_FORCE_M12 = 3,
  MP_SELECTION_FORCE_M13 = 4,
} MpSelection;

/**
 * A simulated forecast ensemble.
 */
typedef struct MpEnsemble MpEnsemble;

/**
 * A fitted model, identical to what the model JSON file stores.
 */
typedef struct MpModel MpModel;

/**
 * Weekly mortality-rate panel plus the calendar its week offsets are
 * anchored to.
 */
typedef struct MpPanel MpPanel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, empty before the
 * first failure. The pointer stays valid until the next failing call
 * on the same thread; do not free it.
 */
const char *mp_last_error_message(void);

/**
 * Library version as a static NUL-terminated string; do not free it.
 */
const char *mp_version(void);

/**
 * Releases a string obtained from an out-parameter of this library.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void mp_string_free(char *s);

/**
 * Reads a weekly rate panel from a CSV file with columns
 * `year,week,country,sex,age_group,rate,exposure`, anchored at the
 * given ISO year/week (offset zero). Series observed for fewer than
 * 104 weeks are dropped, matching the fitting pipeline.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid location.
 */
enum MpStatus mp_panel_read_csv(const char *path,
                                int32_t anchor_year,
                                uint32_t anchor_week,
                                struct MpPanel **out);

/**
 * Generates a synthetic panel. `config_json` may be null for the
 * default configuration. If `out_truth_json` is non-null it receives
 * the generator truth record as JSON (release with [`mp_string_free`]).
 *
 * # Safety
 * Non-null pointers must be valid; `config_json` must be NUL-terminated.
 */
enum MpStatus mp_panel_synth(const char *config_json,
                             uint64_t seed,
                             struct MpPanel **out,
                             char **out_truth_json);

/**
 * Restricts a panel to the closed week range [start, end], returning a
 * new panel handle.
 *
 * # Safety
 * `panel` must be a live panel handle and `out` a valid location.
 */
enum MpStatus mp_panel_slice(const struct MpPanel *panel,
                             int32_t start_year,
                             uint32_t start_week,
                             int32_t end_year,
                             uint32_t end_week,
                             struct MpPanel **out);

/**
 * Number of weeks in the panel, or -1 if `panel` is null.
 *
 * # Safety
 * `panel` must be null or a live panel handle.
 */
int64_t mp_panel_n_weeks(const struct MpPanel *panel);

/**
 * Number of series in the panel, or -1 if `panel` is null.
 *
 * # Safety
 * `panel` must be null or a live panel handle.
 */
int64_t mp_panel_n_series(const struct MpPanel *panel);

/**
 * Label of series `index` in panel column order, e.g. `AUT_M_0-64`
 * (release with [`mp_string_free`]).
 *
 * # Safety
 * `panel` must be a live panel handle and `out` a valid location.
 */
enum MpStatus mp_panel_series_label(const struct MpPanel *panel, size_t index, char **out);

/**
 * Writes the panel as CSV in the format [`mp_panel_read_csv`] accepts.
 *
 * # Safety
 * `panel` must be a live panel handle; `path` must be NUL-terminated.
 */
enum MpStatus mp_panel_write_csv(const struct MpPanel *panel, const char *path);

/**
 * Releases a panel handle; null is a no-op.
 *
 * # Safety
 * `panel` must come from this library and not have been freed already.
 */
void mp_panel_free(struct MpPanel *panel);

/**
 * Fits the full model (logit transform, decomposition, trend
 * comparison, residual models) on the panel, which is treated as the
 * baseline window. `fast` trades estimation accuracy for speed using
 * coarser optimizer settings.
 *
 * # Safety
 * `panel` must be a live panel handle and `out` a valid location.
 */
enum MpStatus mp_model_fit(const struct MpPanel *panel,
                           enum MpSelection selection,
                           bool fast,
                           struct MpModel **out);

/**
 * Saves the model as JSON; the file round-trips bit-exactly through
 * [`mp_model_load`].
 *
 * # Safety
 * `model` must be a live model handle; `path` must be NUL-terminated.
 */
enum MpStatus mp_model_save(const struct MpModel *model, const char *path);

/**
 * Loads a model previously written by [`mp_model_save`] or the CLI.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid location.
 */
enum MpStatus mp_model_load(const char *path, struct MpModel **out);

/**
 * Number of series the model was fitted on, or -1 if `model` is null.
 *
 * # Safety
 * `model` must be null or a live model handle.
 */
int64_t mp_model_n_series(const struct MpModel *model);

/**
 * Share of variance explained by the first component, in [0, 1], or
 * NaN if `model` is null.
 *
 * # Safety
 * `model` must be null or a live model handle.
 */
double mp_model_pc1_share(const struct MpModel *model);

/**
 * Label of series `index` in model column order (release with
 * [`mp_string_free`]).
 *
 * # Safety
 * `model` must be a live model handle and `out` a valid location.
 */
enum MpStatus mp_model_series_label(const struct MpModel *model, size_t index, char **out);

/**
 * Releases a model handle; null is a no-op.
 *
 * # Safety
 * `model` must come from this library and not have been freed already.
 */
void mp_model_free(struct MpModel *model);

/**
 * Simulates the forecast ensemble for `horizon` weeks past the
 * baseline. `exposures` may be null, in which case the last baseline
 * exposures are carried forward, or point to `horizon * n_series`
 * doubles in week-major order. Results are bit-identical for a given
 * (model, horizon, n_sims, seed, exposures) tuple.
 *
 * # Safety
 * `model` must be a live model handle, `out` a valid location, and
 * `exposures` null or sized as described.
 */
enum MpStatus mp_forecast(const struct MpModel *model,
                          size_t horizon,
                          size_t n_sims,
                          uint64_t seed,
                          const double *exposures,
                          struct MpEnsemble **out);

/**
 * Number of simulated trajectories, or -1 if `ensemble` is null.
 *
 * # Safety
 * `ensemble` must be null or a live ensemble handle.
 */
int64_t mp_ensemble_n_sims(const struct MpEnsemble *ensemble);

/**
 * Number of forecast weeks, or -1 if `ensemble` is null.
 *
 * # Safety
 * `ensemble` must be null or a live ensemble handle.
 */
int64_t mp_ensemble_horizon(const struct MpEnsemble *ensemble);

/**
 * Number of series per forecast week, or -1 if `ensemble` is null.
 *
 * # Safety
 * `ensemble` must be null or a live ensemble handle.
 */
int64_t mp_ensemble_n_series(const struct MpEnsemble *ensemble);

/**
 * ISO year and week of forecast step `index` (0-based).
 *
 * # Safety
 * `ensemble` must be a live ensemble handle; `out_year` and `out_week`
 * must be valid locations.
 */
enum MpStatus mp_ensemble_week(const struct MpEnsemble *ensemble,
                               size_t index,
                               int32_t *out_year,
                               uint32_t *out_week);

/**
 * Empirical death-count quantiles per forecast week and series. `out`
 * must hold `horizon * n_series * n_levels` doubles and is filled with
 * the level index varying fastest, then series, then week. Levels must
 * be strictly increasing and inside (0, 1).
 *
 * # Safety
 * `ensemble` must be a live ensemble handle; `levels` must point to
 * `n_levels` doubles and `out` to the count given above.
 */
enum MpStatus mp_ensemble_death_quantiles(const struct MpEnsemble *ensemble,
                                          const double *levels,
                                          size_t n_levels,
                                          double *out);

/**
 * Quantiles of death counts summed over the series subset `indices`.
 * `out` must hold `horizon * n_levels` doubles and is filled with the
 * level index varying fastest.
 *
 * # Safety
 * `ensemble` must be a live ensemble handle; `indices` and `levels`
 * must point to `n_indices` and `n_levels` elements, `out` to the
 * count given above.
 */
enum MpStatus mp_ensemble_group_quantiles(const struct MpEnsemble *ensemble,
                                          const size_t *indices,
                                          size_t n_indices,
                                          const double *levels,
                                          size_t n_levels,
                                          double *out);

/**
 * Releases an ensemble handle; null is a no-op.
 *
 * # Safety
 * `ensemble` must come from this library and not have been freed
 * already.
 */
void mp_ensemble_free(struct MpEnsemble *ensemble);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MORTPCA_H */
