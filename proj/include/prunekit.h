#ifndef PRUNEKIT_H
#define PRUNEKIT_H

/* C API for the prunekit shared library. All functions return a status code
 * (PK_OK on success); on failure pk_last_error() holds a message for the
 * calling thread. Strings returned through out-parameters are heap-allocated
 * and must be released with pk_free(). */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum pk_status {
    PK_OK = 0,
    PK_ERR_USAGE = 1,   /* API misuse: null handle, bad argument */
    PK_ERR_CONFIG = 2,  /* invalid configuration */
    PK_ERR_DATA = 3,    /* unreadable or malformed input files */
    PK_ERR_NUMERIC = 4  /* numeric failure (divergence, non-finite values) */
} pk_status;

typedef struct pk_experiment pk_experiment;
typedef struct pk_model pk_model;

const char* pk_version(void);

/* Message from the most recent failing call on this thread, or "" if none. */
const char* pk_last_error(void);

void pk_free(void* p);

/* --- experiments --------------------------------------------------------- */

pk_status pk_experiment_create_from_file(const char* config_path, pk_experiment** out);
pk_status pk_experiment_create_from_json(const char* config_json, pk_experiment** out);
pk_status pk_experiment_set_seed(pk_experiment* exp, uint64_t seed);
pk_status pk_experiment_set_output_dir(pk_experiment* exp, const char* dir);
pk_status pk_experiment_set_force(pk_experiment* exp, int force);

/* command is one of: train, oracle, correlate, prune, baseline-reg */
pk_status pk_experiment_run(pk_experiment* exp, const char* command);
void pk_experiment_destroy(pk_experiment* exp);

/* --- saved models -------------------------------------------------------- */

pk_status pk_model_load(const char* path, pk_model** out);
/* JSON description: layers, shapes, active map counts, flops. */
pk_status pk_model_summary_json(const pk_model* model, char** out_json);
pk_status pk_model_total_flops(const pk_model* model, double* out_flops);
void pk_model_destroy(pk_model* model);

#ifdef __cplusplus
}
#endif

#endif /* PRUNEKIT_H */
