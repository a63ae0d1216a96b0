#ifndef CIS_CIS_H
#define CIS_CIS_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(CIS_BUILDING_LIBRARY)
#    define CIS_API __declspec(dllexport)
#  else
#    define CIS_API __declspec(dllimport)
#  endif
#else
#  define CIS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum cis_status {
    CIS_OK = 0,
    CIS_ERR_INTERNAL = 1,
    CIS_ERR_VALIDATION = 2,
    CIS_ERR_DEGENERACY = 3,
    CIS_ERR_NONCONVERGENCE = 4,
    CIS_ERR_FACTORIZATION = 5,
    CIS_ERR_IO = 6
} cis_status;

typedef enum cis_command {
    CIS_CMD_BLG_CHECK = 0,
    CIS_CMD_REDUCE = 1,
    CIS_CMD_SAMPLE = 2,
    CIS_CMD_COMPARE = 3,
    CIS_CMD_DIAGNOSE = 4
} cis_command;

typedef struct cis_config cis_config;
typedef struct cis_report cis_report;
typedef struct cis_projector cis_projector;

typedef struct cis_run_options {
    int has_seed;               /* nonzero: seed overrides the config seed */
    uint64_t seed;
    int threads;                /* worker threads, >= 1 */
    const char* out_dir;        /* NULL: use the config output_dir */
    int emit_plot_data;
    const char* projector_path; /* NULL: <out_dir>/projector.cisproj or the config value */
} cis_run_options;

CIS_API const char* cis_version(void);
CIS_API const char* cis_status_name(cis_status status);
/* Message of the last failed call on the calling thread ("" if none). */
CIS_API const char* cis_last_error(void);

CIS_API cis_status cis_config_load(const char* path, cis_config** out);
CIS_API cis_status cis_config_parse(const char* json_text, cis_config** out);
CIS_API void cis_config_free(cis_config* cfg);

CIS_API void cis_run_options_init(cis_run_options* opt);
CIS_API cis_status cis_run(cis_command command, const cis_config* cfg, const cis_run_options* opt, cis_report** out);

CIS_API int cis_report_passed(const cis_report* rep);
CIS_API size_t cis_report_line_count(const cis_report* rep);
CIS_API const char* cis_report_line(const cis_report* rep, size_t i);
CIS_API const char* cis_report_summary_json(const cis_report* rep);
CIS_API void cis_report_free(cis_report* rep);

/* Matrices are dense, column-major, n x n unless stated otherwise.
   rank < 0 selects the rank with the default plateau rule. */
CIS_API cis_status cis_projector_compute(size_t n, const double* c_hat, const double* prior_cov, int rank, cis_projector** out);
CIS_API cis_status cis_projector_load(const char* path, size_t n, const double* prior_cov, cis_projector** out);
CIS_API cis_status cis_projector_save(const cis_projector* proj, const char* path);
CIS_API size_t cis_projector_dim(const cis_projector* proj);
CIS_API size_t cis_projector_rank(const cis_projector* proj);
/* Writes V = C_pi U (n x n, first rank columns informed). */
CIS_API cis_status cis_projector_images(const cis_projector* proj, double* out);
/* Writes up to len pencil eigenvalues in ascending order, returns the count in *written. */
CIS_API cis_status cis_projector_eigenvalues(const cis_projector* proj, double* out, size_t len, size_t* written);
/* z_r = U_r^T x, out has rank entries. */
CIS_API cis_status cis_projector_reduce(const cis_projector* proj, const double* x, double* out);
CIS_API cis_status cis_projector_orthogonality_defect(const cis_projector* proj, double* out);
CIS_API void cis_projector_free(cis_projector* proj);

/* Principal angles between span(A) and span(B), A n x ka, B n x kb.
   Writes min(ka, kb) angles in ascending order. */
CIS_API cis_status cis_principal_angles(size_t n, size_t ka, const double* a, size_t kb, const double* b, double* out);

#ifdef __cplusplus
}
#endif

#endif
