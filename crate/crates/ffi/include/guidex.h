#ifndef GUIDEX_H
#define GUIDEX_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum GxStatus {
  GX_STATUS_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  GX_STATUS_NULL_ARGUMENT = 1,
  /**
   * An input string was not valid UTF-8.
   */
  GX_STATUS_INVALID_UTF8 = 2,
  /**
   * Guideline, instance-list or JSON text could not be parsed.
   */
  GX_STATUS_PARSE_ERROR = 3,
  /**
   * An argument was rejected (empty document, mismatched report, ...).
   */
  GX_STATUS_INVALID_ARGUMENT = 4,
  /**
   * A value could not be printed in canonical form.
   */
  GX_STATUS_PRINT_ERROR = 5,
  /**
   * Internal error; the library caught a panic.
   */
  GX_STATUS_PANIC = 6,
} GxStatus;

/**
 * Grounding policy for [`gx_validate`].
 */
typedef enum GxGrounding {
  GX_GROUNDING_EXACT = 0,
  /**
   * Case folding and whitespace collapsing on both sides.
   */
  GX_GROUNDING_NORMALIZED = 1,
  GX_GROUNDING_OFF = 2,
} GxGrounding;

/**
 * Span comparison for [`gx_score_json`].
 */
typedef enum GxMatching {
  GX_MATCHING_EXACT = 0,
  GX_MATCHING_NORMALIZED = 1,
} GxMatching;

/**
 * A parsed instance list.
 */
typedef struct GxInstanceSet GxInstanceSet;

/**
 * Per-instance verdicts for one instance set.
 */
typedef struct GxReport GxReport;

/**
 * A parsed schema.
 */
typedef struct GxSchema GxSchema;

/**
 * Micro-averaged scores; every 0/0 is 0.
 */
typedef struct GxScore {
  size_t tp;
  size_t fp;
  size_t fn_;
  double precision;
  double recall;
  double f1;
} GxScore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a
 * successful call. Valid until the next call on this thread; never NULL.
 */
const char *gx_last_error_message(void);

/**
 * Library version as a static string.
 */
const char *gx_version(void);

/**
 * Release a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` is NULL or a string returned by this library and not yet freed.
 */
void gx_string_free(char *s);

/**
 * Parse dataclass-style guideline text.
 *
 * # Safety
 * `text` is a valid C string; `out` is valid for a pointer write.
 */
enum GxStatus gx_schema_parse(const char *text, struct GxSchema **out);

/**
 * Canonical guideline text of `schema`.
 *
 * # Safety
 * `schema` is a live handle; `out` is valid for a pointer write.
 */
enum GxStatus gx_schema_print(const struct GxSchema *schema, char **out);

/**
 * Number of classes in `schema`; 0 for NULL.
 *
 * # Safety
 * `schema` is NULL or a live handle.
 */
size_t gx_schema_class_count(const struct GxSchema *schema);

/**
 * # Safety
 * `schema` is NULL or a handle from this library, not yet freed.
 */
void gx_schema_free(struct GxSchema *schema);

/**
 * Parse the first instance list in `text` (surrounding prose is ignored)
 * and tag it with `doc_id`.
 *
 * # Safety
 * `text` and `doc_id` are valid C strings; `out` is valid for a pointer
 * write.
 */
enum GxStatus gx_instances_parse(const char *text, const char *doc_id, struct GxInstanceSet **out);

/**
 * Canonical list literal of `set`.
 *
 * # Safety
 * `set` is a live handle; `out` is valid for a pointer write.
 */
enum GxStatus gx_instances_print(const struct GxInstanceSet *set, char **out);

/**
 * Number of instances in `set`; 0 for NULL.
 *
 * # Safety
 * `set` is NULL or a live handle.
 */
size_t gx_instances_len(const struct GxInstanceSet *set);

/**
 * # Safety
 * `set` is NULL or a handle from this library, not yet freed.
 */
void gx_instances_free(struct GxInstanceSet *set);

/**
 * Check every instance of `set` against `schema` and the document text.
 *
 * # Safety
 * `set` and `schema` are live handles; `document` is a valid C string;
 * `out` is valid for a pointer write.
 */
enum GxStatus gx_validate(const struct GxInstanceSet *set,
                          const struct GxSchema *schema,
                          const char *document,
                          enum GxGrounding grounding,
                          struct GxReport **out);

/**
 * Accepted instances; 0 for NULL.
 *
 * # Safety
 * `report` is NULL or a live handle.
 */
size_t gx_report_accepted_count(const struct GxReport *report);

/**
 * Rejected instances; 0 for NULL.
 *
 * # Safety
 * `report` is NULL or a live handle.
 */
size_t gx_report_rejected_count(const struct GxReport *report);

/**
 * The full report as JSON: `{doc_id, verdicts: [{index, status, errors:
 * [{code, message}]}], accepted_count, rejected_count}`.
 *
 * # Safety
 * `report` is a live handle; `out` is valid for a pointer write.
 */
enum GxStatus gx_report_to_json(const struct GxReport *report, char **out);

/**
 * # Safety
 * `report` is NULL or a handle from this library, not yet freed.
 */
void gx_report_free(struct GxReport *report);

/**
 * The accepted instances of `set`, in order, as a new handle.
 *
 * # Safety
 * `set` and `report` are live handles; `out` is valid for a pointer write.
 */
enum GxStatus gx_filter(const struct GxInstanceSet *set,
                        const struct GxReport *report,
                        struct GxInstanceSet **out);

/**
 * Score predictions against gold examples, both given as JSON arrays:
 * gold `[{"id", "text"?, "mentions": [{"label", "span"}]}]`, predictions
 * `[{"id", "mentions": [...]}]`.
 *
 * # Safety
 * `gold_json` and `pred_json` are valid C strings; `out` is valid for a
 * write of one `GxScore`.
 */
enum GxStatus gx_score_json(const char *gold_json,
                            const char *pred_json,
                            enum GxMatching matching,
                            struct GxScore *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GUIDEX_H */
