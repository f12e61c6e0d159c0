#ifndef ARTILANG_H
#define ARTILANG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ArtilangStatus {
  ARTILANG_STATUS_OK = 0,
  ARTILANG_STATUS_NULL_POINTER = 1,
  ARTILANG_STATUS_INVALID_UTF8 = 2,
  ARTILANG_STATUS_INVALID_ARGUMENT = 3,
  ARTILANG_STATUS_IO = 4,
  ARTILANG_STATUS_PARSE = 5,
  ARTILANG_STATUS_BUFFER_TOO_SMALL = 6,
  ARTILANG_STATUS_RUNTIME = 7,
  ARTILANG_STATUS_PANIC = 8,
} ArtilangStatus;

// A seeded corpus generator.
typedef struct ArtilangGenerator ArtilangGenerator;

// A masked language model loaded from a checkpoint.
typedef struct ArtilangModel ArtilangModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer is
// valid until the next failing call on the same thread.
const char *artilang_last_error(void);

const char *artilang_version(void);

// Builds a generator from a JSON spec (the same fields as a run config's
// `[generator]` section).
//
// # Safety
// `spec_json` must be a NUL-terminated string and `out` a writable pointer.
enum ArtilangStatus artilang_generator_new(const char *spec_json, struct ArtilangGenerator **out);

// # Safety
// `generator` must come from [`artilang_generator_new`] and not be used afterwards.
void artilang_generator_free(struct ArtilangGenerator *generator);

// Number of sequences in the generator's corpus; 0 for NULL.
//
// # Safety
// `generator` must be NULL or a live handle.
uint64_t artilang_generator_len(const struct ArtilangGenerator *generator);

// Writes sequence `index` into `buf`. With a short buffer the call returns
// `BUFFER_TOO_SMALL` and `out_len` holds the needed length.
//
// # Safety
// `buf` must hold `cap` tokens; `out_len` must be writable.
enum ArtilangStatus artilang_generator_sequence(const struct ArtilangGenerator *generator,
                                                uint64_t index,
                                                uint32_t *buf,
                                                size_t cap,
                                                size_t *out_len);

// Generates the whole corpus to `path` and its manifest beside it.
//
// # Safety
// `generator` must be a live handle and `path` NUL-terminated.
enum ArtilangStatus artilang_generator_write(const struct ArtilangGenerator *generator,
                                             const char *path);

// Checks a corpus file against a generator spec; `out_violations` receives
// the violation count.
//
// # Safety
// Strings must be NUL-terminated; `out_violations` must be writable.
enum ArtilangStatus artilang_validate_corpus(const char *corpus_path,
                                             const char *spec_json,
                                             uint64_t *out_violations);

// # Safety
// `path` must be NUL-terminated and `out` writable.
enum ArtilangStatus artilang_model_load(const char *path, struct ArtilangModel **out);

// # Safety
// `model` must come from [`artilang_model_load`] and not be used afterwards.
void artilang_model_free(struct ArtilangModel *model);

// Full vocabulary size, specials included; 0 for NULL.
//
// # Safety
// `model` must be NULL or a live handle.
size_t artilang_model_vocab_size(const struct ArtilangModel *model);

// Predictive distribution at `query` after replacing the `masked` positions
// with MASK. `probs` receives one probability per vocabulary entry.
//
// # Safety
// `tokens` must hold `len` ids, `masked` `n_masked` positions, and `probs`
// `cap` doubles; `out_len` must be writable.
enum ArtilangStatus artilang_model_predict(const struct ArtilangModel *model,
                                           const uint32_t *tokens,
                                           size_t len,
                                           const size_t *masked,
                                           size_t n_masked,
                                           size_t query,
                                           double *probs,
                                           size_t cap,
                                           size_t *out_len);

// Runs the dependency probe at the sequence center and reports the center
// and the position `j*` whose masking most raises its entropy.
//
// # Safety
// `tokens` must hold `len` ids; both out pointers must be writable.
enum ArtilangStatus artilang_model_probe(const struct ArtilangModel *model,
                                         const uint32_t *tokens,
                                         size_t len,
                                         size_t *out_center,
                                         size_t *out_j_star);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ARTILANG_H */
