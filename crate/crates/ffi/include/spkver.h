/* C interface for the spkver speaker-verification back-end.
 *
 * Conventions:
 *   - functions returning int return a status code:
 *       0 ok, 2 config error, 3 data error, 4 numerical failure,
 *       5 null/invalid argument, 6 internal error
 *   - constructors write an opaque handle through an out-pointer; free
 *     handles with the matching *_free function
 *   - spkver_last_error() describes the most recent failure on the
 *     calling thread; the pointer is valid until the next failing call
 *     on that thread
 */

#ifndef SPKVER_H
#define SPKVER_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef struct SpkverCorpus SpkverCorpus;
typedef struct SpkverProjection SpkverProjection;
typedef struct SpkverPlda SpkverPlda;
typedef struct SpkverCalibration SpkverCalibration;

enum {
    SPKVER_OK = 0,
    SPKVER_CONFIG_ERROR = 2,
    SPKVER_DATA_ERROR = 3,
    SPKVER_NUMERICAL_ERROR = 4,
    SPKVER_NULL_ARGUMENT = 5,
    SPKVER_INTERNAL_ERROR = 6
};

const char *spkver_last_error(void);

/* Corpus: text-tabular embedding files with a '#dim=<d>' header. */
int spkver_corpus_read(const char *path, SpkverCorpus **out);
int spkver_corpus_generate_json(const char *synth_config_json, SpkverCorpus **out);
int spkver_corpus_write(const SpkverCorpus *corpus, const char *path);
size_t spkver_corpus_len(const SpkverCorpus *corpus);
size_t spkver_corpus_dimension(const SpkverCorpus *corpus);
void spkver_corpus_free(SpkverCorpus *corpus);

/* Linear projections fitted by LDA / SVDA ('#rows k #cols d' files). */
int spkver_projection_read(const char *path, SpkverProjection **out);
size_t spkver_projection_input_dim(const SpkverProjection *projection);
size_t spkver_projection_output_dim(const SpkverProjection *projection);
int spkver_projection_apply(const SpkverProjection *projection,
                            const double *input, size_t input_dim,
                            double *output, size_t output_dim);
void spkver_projection_free(SpkverProjection *projection);

/* Two-covariance PLDA verification scoring. */
int spkver_plda_read(const char *path, SpkverPlda **out);
size_t spkver_plda_dim(const SpkverPlda *plda);
int spkver_plda_score(const SpkverPlda *plda,
                      const double *enroll, const double *test, size_t dim,
                      int trial_mean_subtract, double *llr_out);
int spkver_plda_score_trials(const SpkverPlda *plda, const SpkverCorpus *corpus,
                             const char *trials_path, const char *scores_out_path,
                             int trial_mean_subtract);
void spkver_plda_free(SpkverPlda *plda);

/* Monotone PAV calibration maps ('#knots=<n>' files). */
int spkver_calibration_read(const char *path, SpkverCalibration **out);
double spkver_calibration_apply(const SpkverCalibration *map, double score);
void spkver_calibration_free(SpkverCalibration *map);

/* Detection metrics over keyed scores (is_target nonzero marks targets).
 * spkver_cprimary uses the default operating points (P_target 0.01 and
 * 0.005 with unit costs); nonzero 'actual' evaluates at the Bayes
 * thresholds instead of minimizing over thresholds. */
int spkver_eer(const double *scores, const int *is_target, size_t n, double *out);
int spkver_cprimary(const double *scores, const int *is_target, size_t n,
                    int actual, double *out);

#ifdef __cplusplus
}
#endif

#endif /* SPKVER_H */
