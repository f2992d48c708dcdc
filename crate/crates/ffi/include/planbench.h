#ifndef PLANBENCH_H
#define PLANBENCH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PbStatus {
  PB_STATUS_OK = 0,
  PB_STATUS_NULL_ARGUMENT = 1,
  PB_STATUS_INVALID_UTF8 = 2,
  PB_STATUS_PARSE_ERROR = 3,
  PB_STATUS_UNSOLVABLE = 4,
  PB_STATUS_SEARCH_LIMIT = 5,
  PB_STATUS_INVALID_PLAN = 6,
  PB_STATUS_GENERATE_ERROR = 7,
  PB_STATUS_UNPARSEABLE = 8,
  PB_STATUS_PANIC = 9,
} PbStatus;

/*
 A parsed domain and problem.
 */
typedef struct PbTask PbTask;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Parses PDDL domain and problem text. On success `*out` owns a task that
 must be released with `pb_task_free`.

 # Safety
 `domain` and `problem` must be NUL-terminated strings; `out` must be writable.
 */
enum PbStatus pb_task_from_pddl(const char *domain, const char *problem, struct PbTask **out);

/*
 # Safety
 `task` must be null or a pointer from `pb_task_from_pddl` not yet freed.
 */
void pb_task_free(struct PbTask *task);

/*
 Finds a minimum-cost plan. `*plan_out` receives one `(action arg ...)`
 per line; `cost_out` may be null.

 # Safety
 `task` must be a live task; `plan_out` must be writable.
 */
enum PbStatus pb_task_solve(const struct PbTask *task, char **plan_out, uint64_t *cost_out);

/*
 Validates a plan given as `(action arg ...)` lines. Returns `Ok` for a
 valid plan and `InvalidPlan` otherwise; in both cases `*verdict_out`
 (if not null) receives the verdict as JSON.

 # Safety
 `task` must be a live task; `plan` a NUL-terminated string.
 */
enum PbStatus pb_task_validate(const struct PbTask *task, const char *plan, char **verdict_out);

/*
 Writes a random blocksworld problem as PDDL. Deterministic in all arguments.

 # Safety
 `problem_out` must be writable.
 */
enum PbStatus pb_blocks_generate(uint32_t num_blocks,
                                 uint64_t seed,
                                 bool partial_goal,
                                 char **problem_out);

/*
 Parses a natural-language model completion (bundled blocksworld
 templates) into `(action arg ...)` lines for `task`'s objects.

 # Safety
 `task` must be a live task; `completion` a NUL-terminated string;
 `plan_out` must be writable.
 */
enum PbStatus pb_parse_completion(const struct PbTask *task,
                                  const char *completion,
                                  char **plan_out);

/*
 Message for the last failing call on this thread; empty after a success.
 Valid until the next library call on the same thread.
 */
const char *pb_last_error_message(void);

/*
 # Safety
 `s` must be null or a string returned by this library, not yet freed.
 */
void pb_string_free(char *s);

/*
 Library version as a static string.
 */
const char *pb_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PLANBENCH_H */
