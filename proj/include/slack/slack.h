#ifndef SLACK_SLACK_H
#define SLACK_SLACK_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SLACK_API __declspec(dllexport)
#else
#define SLACK_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes double as process exit codes for the command-line tool. */
typedef enum {
  SLACK_OK = 0,
  SLACK_ERR_INTERNAL = 1,
  SLACK_ERR_VALIDATION = 2,
  SLACK_ERR_DEPENDENCY = 3,
  SLACK_ERR_DIVERGENCE = 4,
  SLACK_ERR_BUDGET_PARITY = 5,
  SLACK_ERR_IO = 6,
  SLACK_ERR_FORMAT = 7,
  SLACK_ERR_TRUNCATED = 8,
  SLACK_ERR_SHAPE_MISMATCH = 9,
  SLACK_ERR_DEGENERATE = 10
} slack_status;

typedef struct slack_config slack_config;
typedef struct slack_sequence slack_sequence;
typedef struct slack_trajectory slack_trajectory;

/* Progress messages; `user` is passed through untouched. */
typedef void (*slack_log_fn)(const char* message, void* user);

/* Message of the last failed call on this thread, "" if none. */
SLACK_API const char* slack_last_error(void);
SLACK_API const char* slack_version(void);

/* String results are copied into `buf` (NUL-terminated, truncated to `cap`).
 * `needed`, when not NULL, receives the full length without the NUL. */

/* --- configuration -------------------------------------------------------- */
SLACK_API size_t slack_config_key_count(void);
SLACK_API const char* slack_config_key_name(size_t i);
SLACK_API const char* slack_config_key_default(size_t i);
SLACK_API const char* slack_config_key_help(size_t i);

SLACK_API slack_status slack_config_new(slack_config** out);
SLACK_API void slack_config_free(slack_config* cfg);
SLACK_API slack_status slack_config_load_file(slack_config* cfg, const char* path);
SLACK_API slack_status slack_config_load_text(slack_config* cfg, const char* text);
/* SLACK_DATA_DIR, SLACK_CHECKPOINT_DIR and SLACK_REPORT_DIR only. */
SLACK_API slack_status slack_config_apply_environment(slack_config* cfg);
SLACK_API slack_status slack_config_set(slack_config* cfg, const char* key, const char* value);
SLACK_API slack_status slack_config_get(const slack_config* cfg, const char* key, char* buf, size_t cap,
                                        size_t* needed);
SLACK_API slack_status slack_config_dump(const slack_config* cfg, char* buf, size_t cap, size_t* needed);
SLACK_API slack_status slack_config_hash(const slack_config* cfg, char* buf, size_t cap, size_t* needed);
SLACK_API slack_status slack_config_validate(const slack_config* cfg);

/* --- experiment stages ---------------------------------------------------- */
SLACK_API slack_status slack_synth(const slack_config* cfg, const char* out_dir, slack_log_fn log, void* user,
                                   int* sequences, int* frames);
/* stage: "ae", "ae-target", "pd", "attack", "mmd" or "quality". */
SLACK_API slack_status slack_train(const slack_config* cfg, const char* stage, slack_log_fn log, void* user,
                                   double* final_loss);
SLACK_API slack_status slack_attack(const slack_config* cfg, const char* in_dir, const char* model,
                                    const char* out_dir, slack_log_fn log, void* user, double* mean_pij);
/* `ref_dir` and `model` may be NULL. */
SLACK_API slack_status slack_eval_metrics(const slack_config* cfg, const char* in_dir, const char* ref_dir,
                                          const char* model, const char* out_csv, slack_log_fn log,
                                          void* user);
/* `model` NULL runs the clean-only evaluation. */
SLACK_API slack_status slack_eval_slam(const slack_config* cfg, const char* const* seq_dirs, size_t count,
                                       const char* model, const char* out_dir, slack_log_fn log, void* user);
SLACK_API slack_status slack_report(const char* const* csvs, size_t count, char* buf, size_t cap,
                                    size_t* needed);
SLACK_API slack_status slack_demo(const char* root, uint64_t seed, slack_log_fn log, void* user);

/* --- sequences ------------------------------------------------------------ */
SLACK_API slack_status slack_sequence_read(const char* dir, slack_sequence** out);
SLACK_API void slack_sequence_free(slack_sequence* seq);
SLACK_API int slack_sequence_id(const slack_sequence* seq);
SLACK_API size_t slack_sequence_frames(const slack_sequence* seq);
/* Ground-truth trajectory of the sequence. */
SLACK_API slack_status slack_sequence_ground_truth(const slack_sequence* seq, slack_trajectory** out);

/* --- trajectories and metrics --------------------------------------------- */
/* xyz: 3n values; quat_wxyz: 4n values (normalised on input). */
SLACK_API slack_status slack_trajectory_from_arrays(size_t n, const double* timestamps, const double* xyz,
                                                    const double* quat_wxyz, slack_trajectory** out);
SLACK_API slack_status slack_trajectory_read(const char* path, slack_trajectory** out);
SLACK_API slack_status slack_trajectory_write(const slack_trajectory* traj, const char* path);
SLACK_API void slack_trajectory_free(slack_trajectory* traj);
SLACK_API size_t slack_trajectory_size(const slack_trajectory* traj);
SLACK_API slack_status slack_trajectory_pose(const slack_trajectory* traj, size_t i, double* timestamp,
                                             double xyz[3], double quat_wxyz[4]);

SLACK_API slack_status slack_ate(const slack_trajectory* est, const slack_trajectory* gt, double* out);
SLACK_API slack_status slack_rpe(const slack_trajectory* est, const slack_trajectory* gt, int delta,
                                 double* trans, double* rot_deg);

/* Point clouds as packed xyz arrays of n and m points. */
SLACK_API slack_status slack_chamfer(const double* p, size_t n, const double* q, size_t m, double* out);
SLACK_API slack_status slack_emd(const double* p, size_t n, const double* q, size_t m, double* out);

#ifdef __cplusplus
}
#endif

#endif
