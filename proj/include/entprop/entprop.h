/* SPDX-License-Identifier: Apache-2.0 */
#ifndef ENTPROP_ENTPROP_H
#define ENTPROP_ENTPROP_H

#include <stddef.h>

#if defined(ENTPROP_BUILDING_LIBRARY)
#define EP_API __attribute__((visibility("default")))
#else
#define EP_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

#define EP_ABI_VERSION 1

typedef enum ep_status {
  EP_OK = 0,
  EP_INVALID_ARGUMENT = 1,
  EP_SHAPE = 2,
  EP_NUMERIC = 3, /* non-finite values, divergence */
  EP_CONFIG = 4,
  EP_NOT_FOUND = 5,
  EP_IO = 6,
  EP_VERSION = 7, /* incompatible checkpoint or archive */
  EP_INTERNAL = 8
} ep_status;

typedef struct ep_context ep_context;
typedef struct ep_model ep_model;

/* Receives one progress line (no trailing newline). */
typedef void (*ep_log_fn)(const char* line, void* user);

EP_API int ep_abi_version(void);
EP_API const char* ep_status_name(ep_status status);

EP_API ep_status ep_context_create(ep_context** out);
EP_API void ep_context_destroy(ep_context* ctx);
EP_API void ep_context_set_log(ep_context* ctx, ep_log_fn fn, void* user);

/* Message of the last failure on this context, or on this thread when ctx is NULL.
   Valid until the next call that uses the same context. */
EP_API const char* ep_last_error(const ep_context* ctx);
/* JSON (train, eval), CSV (sweep) or text table (report) produced by the last successful command. */
EP_API const char* ep_last_output(const ep_context* ctx);

EP_API ep_status ep_train(ep_context* ctx, const char* config_path);
EP_API ep_status ep_evaluate(ep_context* ctx, const char* checkpoint_path, const char* config_path);
/* ks/ns may be NULL with a zero count to keep the config's own value. */
EP_API ep_status ep_sweep(ep_context* ctx, const char* config_path, const double* ks, size_t k_count, const int* ns,
                          size_t n_count);
EP_API ep_status ep_report(ep_context* ctx, const char* const* run_dirs, size_t run_count, const char* out_dir);

/* Stateless helpers. */
EP_API ep_status ep_h_score(double sa, double ra, double* out);
/* probs is (rows, classes) row-major; out receives `rows` entropies (natural log). */
EP_API ep_status ep_entropy(const double* probs, size_t rows, size_t classes, double* out);
EP_API ep_status ep_epsilon_schedule(int n, double* epsilon, double* alpha);
/* method: vanilla, mixprop, advprop, fast_advprop, entprop. Result in multiples of N. */
EP_API ep_status ep_theoretical_cost(const char* method, double k, int n, double p_adv, int use_free, double* out);

/* Checkpoints. */
EP_API ep_status ep_model_load(ep_context* ctx, const char* path, ep_model** out);
EP_API void ep_model_destroy(ep_model* model);
EP_API ep_status ep_model_info(const ep_model* model, size_t* input_size, size_t* class_count);
/* x holds `count` samples of input_size floats in [0, 1]; logits receives count * class_count values
   computed with the main route and running statistics. */
EP_API ep_status ep_model_predict(ep_context* ctx, ep_model* model, const float* x, size_t count, float* logits);

#ifdef __cplusplus
}
#endif

#endif
