#ifndef QUALCODE_H
#define QUALCODE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum QcStatus {
  QC_STATUS_OK = 0,
  QC_STATUS_NULL_ARGUMENT = 1,
  QC_STATUS_INVALID_UTF8 = 2,
  QC_STATUS_IO = 3,
  QC_STATUS_INVALID_CODEBOOK = 4,
  QC_STATUS_INVALID_INPUT = 5,
  QC_STATUS_METRICS = 6,
  QC_STATUS_PANIC = 7,
} QcStatus;

/*
 Opaque codebook handle.
 */
typedef struct QcCodebook QcCodebook;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Loads a codebook file. On success `*out` holds a handle to release with
 [`qc_codebook_free`].

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum QcStatus qc_codebook_load(const char *path, struct QcCodebook **out);

/*
 Builds a codebook from its JSON document.

 # Safety
 `json` must be a NUL-terminated string; `out` must be writable.
 */
enum QcStatus qc_codebook_from_json(const char *json, struct QcCodebook **out);

/*
 Releases a handle. Null is ignored.

 # Safety
 `cb` must come from this library and not be used afterwards.
 */
void qc_codebook_free(struct QcCodebook *cb);

/*
 # Safety
 `cb` must be a live handle; `out` must be writable.
 */
enum QcStatus qc_codebook_version(const struct QcCodebook *cb, uint64_t *out);

/*
 Resolves one label string; `*out` receives the resolution as JSON
 (`code_ids`, `kind`, `similarity`, ...).

 # Safety
 `cb` must be a live handle, `label` NUL-terminated, `out` writable.
 */
enum QcStatus qc_normalize_label(const struct QcCodebook *cb, const char *label, char **out);

/*
 Recovers the JSON object in a raw model output; `*out` receives
 `{"payload": ..., "repair": ..., "notes": [...]}`.

 # Safety
 `raw` must be NUL-terminated; `out` must be writable.
 */
enum QcStatus qc_extract_structured(const char *raw, char **out);

/*
 Extraction, normalization and validity; `*out` receives
 `{"labels": ..., "repair": ..., "status": ...}`.

 # Safety
 `cb` must be a live handle, `raw` NUL-terminated, `out` writable.
 */
enum QcStatus qc_parse_output(const struct QcCodebook *cb, const char *raw, char **out);

/*
 Agreement between two annotators given as JSONL record documents.
 `options_json` may be null for defaults (item level, all strata, used
 codes). `*out` receives the agreement report as JSON.

 # Safety
 `cb` must be a live handle, the strings NUL-terminated or (for options)
 null, `out` writable.
 */
enum QcStatus qc_agreement(const struct QcCodebook *cb,
                           const char *records_a,
                           const char *records_b,
                           const char *options_json,
                           char **out);

/*
 Releases a string returned by this library. Null is ignored.

 # Safety
 `s` must come from this library and not be used afterwards.
 */
void qc_string_free(char *s);

/*
 Message of the last failure on this thread, or null. The pointer stays
 valid until the next call into this library on the same thread.
 */
const char *qc_last_error_message(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QUALCODE_H */
