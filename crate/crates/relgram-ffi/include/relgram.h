#ifndef RELGRAM_H
#define RELGRAM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Relevance decomposition rule selector.
typedef enum {
  // Signed-sum denominator.
  RELGRAM_RULE_PLAIN = 0,
  // Signed-sum denominator with a stabilizer; needs epsilon > 0.
  RELGRAM_RULE_EPSILON = 1,
  // Absolute-sum denominator.
  RELGRAM_RULE_ABSOLUTE = 2,
} RelgramRule;

// Result of every fallible call in this interface.
typedef enum {
  RELGRAM_OK = 0,
  // A required pointer argument was null.
  RELGRAM_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  RELGRAM_INVALID_UTF8 = 2,
  // An argument value was out of range (for example a non-positive
  // epsilon).
  RELGRAM_BAD_ARGUMENT = 3,
  // The model file could not be read.
  RELGRAM_IO_ERROR = 4,
  // The model payload failed to parse or validate.
  RELGRAM_BAD_MODEL = 5,
  // The sentence had no tokens left after tokenization.
  RELGRAM_DEGENERATE_INPUT = 6,
  // Any other failure inside the pipeline.
  RELGRAM_INTERNAL_ERROR = 7,
  // A panic was caught at the boundary; state may be stale.
  RELGRAM_PANIC = 8,
} RelgramStatus;

// Opaque loaded model.
typedef struct RelgramModel RelgramModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Loads a model from a JSON file into a fresh handle. On success writes
// the handle to `out`; free it with `relgram_model_free`.
//
// # Safety
// `path` must be a nul-terminated string and `out` a valid pointer.
RelgramStatus relgram_model_load(const char *path, RelgramModel **out);

// Parses a model from a JSON string into a fresh handle.
//
// # Safety
// `json` must be a nul-terminated string and `out` a valid pointer.
RelgramStatus relgram_model_from_json(const char *json, RelgramModel **out);

// Releases a handle returned by the load functions. Null is a no-op.
//
// # Safety
// `model` must be null or a handle this library returned, not yet freed.
void relgram_model_free(RelgramModel *model);

// Number of convolution filters across all channels; 0 on null.
//
// # Safety
// `model` must be null or a live handle.
size_t relgram_model_filter_count(const RelgramModel *model);

// Number of output classes; 0 on null.
//
// # Safety
// `model` must be null or a live handle.
size_t relgram_model_class_count(const RelgramModel *model);

// Fixed input width in tokens; 0 on null.
//
// # Safety
// `model` must be null or a live handle.
size_t relgram_model_pad_length(const RelgramModel *model);

// Explains one sentence and writes the JSON report as a fresh string to
// `out_json`; free it with `relgram_string_free`. `epsilon` is only
// read for the epsilon rule and must then be positive.
//
// # Safety
// `model` must be a live handle, `sentence` a nul-terminated string,
// and `out_json` a valid pointer.
RelgramStatus relgram_explain_json(const RelgramModel *model,
                                   const char *sentence,
                                   RelgramRule rule,
                                   double epsilon,
                                   char **out_json);

// Releases a string returned by this library. Null is a no-op.
//
// # Safety
// `text` must be null or a string this library returned, not yet freed.
void relgram_string_free(char *text);

// Message of the most recent error on this thread, or an empty string.
// The pointer stays valid until the next failing call on this thread.
const char *relgram_last_error(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RELGRAM_H */
