// include/astnet/astnet.h

// Copyright 2026  The AstNet Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

/* C interface to the articulatory rate-conversion library.
 *
 * All objects are opaque handles created by a *_new / *_load / *_synth call
 * and released with the matching *_free. Every function that can fail returns
 * an astnet_status; on failure astnet_last_error() describes the problem
 * until the next failing call on the same thread.
 */
#ifndef ASTNET_ASTNET_H_
#define ASTNET_ASTNET_H_

#include <stddef.h>

#if defined(_WIN32)
#define ASTNET_API __declspec(dllexport)
#else
#define ASTNET_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum {
  ASTNET_OK = 0,
  ASTNET_ERR_USAGE = 1,   /* invalid argument or configuration */
  ASTNET_ERR_DATA = 2,    /* malformed or missing data */
  ASTNET_ERR_VERIFY = 3,  /* a verification check failed */
  ASTNET_ERR_IO = 4       /* file system failure */
} astnet_status;

typedef struct astnet_config astnet_config;
typedef struct astnet_corpus astnet_corpus;
typedef struct astnet_model astnet_model;

ASTNET_API const char* astnet_last_error(void);
ASTNET_API const char* astnet_version(void);

/* Strings returned through char** outputs are owned by the caller. */
ASTNET_API void astnet_string_free(char* s);

/* ---- configuration ------------------------------------------------------ */

ASTNET_API astnet_status astnet_config_new(astnet_config** out);
ASTNET_API void astnet_config_free(astnet_config* cfg);
/* Merges a key=value file; later calls and astnet_config_set override it. */
ASTNET_API astnet_status astnet_config_load(astnet_config* cfg, const char* path);
ASTNET_API astnet_status astnet_config_set(astnet_config* cfg, const char* key, const char* value);
ASTNET_API astnet_status astnet_config_get(const astnet_config* cfg, const char* key, char** value);
ASTNET_API astnet_status astnet_config_validate(const astnet_config* cfg);
/* Every key=value pair, one per line. */
ASTNET_API astnet_status astnet_config_dump(const astnet_config* cfg, char** text);

/* ---- corpus ------------------------------------------------------------- */

ASTNET_API astnet_status astnet_corpus_synth(const astnet_config* cfg, astnet_corpus** out);
ASTNET_API astnet_status astnet_corpus_load(const char* dir, astnet_corpus** out);
ASTNET_API astnet_status astnet_corpus_save(const astnet_corpus* corpus, const char* dir);
ASTNET_API void astnet_corpus_free(astnet_corpus* corpus);
ASTNET_API size_t astnet_corpus_utterances(const astnet_corpus* corpus);
ASTNET_API size_t astnet_corpus_subjects(const astnet_corpus* corpus);
ASTNET_API size_t astnet_corpus_sentences(const astnet_corpus* corpus);

/* ---- models ------------------------------------------------------------- */

typedef void (*astnet_epoch_fn)(size_t epoch, double mse, double bce, void* user);

/* Trains one model for the configured direction, scheme, fold and subject.
 * `generic` is required for the finetuned scheme and ignored otherwise.
 * When manifest is non-null it receives the key=value training log. */
ASTNET_API astnet_status astnet_train(const astnet_config* cfg, const astnet_corpus* corpus,
                                      const astnet_model* generic, astnet_model** out, char** manifest,
                                      astnet_epoch_fn on_epoch, void* user);
ASTNET_API astnet_status astnet_model_load(const char* path, astnet_model** out);
ASTNET_API astnet_status astnet_model_save(const astnet_model* model, const char* path);
ASTNET_API void astnet_model_free(astnet_model* model);
ASTNET_API size_t astnet_model_channels(const astnet_model* model);
ASTNET_API size_t astnet_model_max_steps(const astnet_model* model);

/* Checkpoint location for the configured direction, scheme, fold and subject
 * under `root`: <root>/<direction>/<scheme>/fold<k>[_<subject>].ckpt.
 * With generic_slot set the generic checkpoint of the same fold is returned. */
ASTNET_API astnet_status astnet_checkpoint_path(const astnet_config* cfg, const char* root, int generic_slot,
                                                char** path);

/* Converts one utterance file. max_steps 0 uses the model's own bound.
 * attention_path may be null. *truncated is set when the step bound was hit. */
ASTNET_API astnet_status astnet_transform_file(const astnet_model* model, const char* input_path,
                                               const char* output_path, const char* attention_path,
                                               size_t max_steps, int* truncated, size_t* frames);

/* ---- evaluation --------------------------------------------------------- */

/* Evaluates IT-DTW plus the configured schemes from the configured checkpoint
 * tree, writes every report into the configured output directory and returns
 * the rendered mean (std) table. */
ASTNET_API astnet_status astnet_eval(const astnet_config* cfg, const astnet_corpus* corpus, char** table);

/* Whole-network finite-difference check on the toy model. Returns
 * ASTNET_ERR_VERIFY when any group reaches the 1e-4 tolerance. The report has
 * one "name max_rel_error" line per parameter group. */
ASTNET_API astnet_status astnet_gradcheck(const astnet_config* cfg, char** report, double* max_rel_error);

#ifdef __cplusplus
}
#endif

#endif /* ASTNET_ASTNET_H_ */
