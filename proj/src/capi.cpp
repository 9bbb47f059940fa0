// SPDX-License-Identifier: Apache-2.0
#include "entprop/entprop.h"

#include <new>
#include <string>
#include <variant>

#include "entprop/commands.hpp"
#include "entprop/evaluation.hpp"
#include "entprop/selection.hpp"

struct ep_context {
  std::string error;
  std::string output;
  ep_log_fn log = nullptr;
  void* log_user = nullptr;
};

struct ep_model {
  std::variant<entprop::Model<float>, entprop::Model<double>> model;
};

namespace {

thread_local std::string g_error;

ep_status record(ep_context* ctx, ep_status status, const std::string& message) {
  g_error = message;
  if (ctx) ctx->error = message;
  return status;
}

// Runs `fn`, translating exceptions into status codes.
template <typename F>
ep_status guarded(ep_context* ctx, F&& fn) {
  try {
    fn();
    if (ctx) ctx->error.clear();
    return EP_OK;
  } catch (const entprop::Error& e) {
    return record(ctx, static_cast<ep_status>(e.code()), e.what());
  } catch (const std::bad_alloc&) {
    return record(ctx, EP_INTERNAL, "out of memory");
  } catch (const std::filesystem::filesystem_error& e) {
    return record(ctx, EP_IO, e.what());
  } catch (const std::exception& e) {
    return record(ctx, EP_INTERNAL, e.what());
  }
}

entprop::LogFn logger(ep_context* ctx) {
  if (!ctx || !ctx->log) return {};
  return [ctx](const std::string& line) { ctx->log(line.c_str(), ctx->log_user); };
}

void need(const void* p, const char* what) {
  entprop::require(p != nullptr, entprop::ErrorCode::InvalidArgument, std::string(what) + " must not be NULL");
}

}  // namespace

extern "C" {

int ep_abi_version(void) { return EP_ABI_VERSION; }

const char* ep_status_name(ep_status status) {
  switch (status) {
    case EP_OK: return "ok";
    case EP_INVALID_ARGUMENT: return "invalid_argument";
    case EP_SHAPE: return "shape";
    case EP_NUMERIC: return "numeric";
    case EP_CONFIG: return "config";
    case EP_NOT_FOUND: return "not_found";
    case EP_IO: return "io";
    case EP_VERSION: return "version";
    case EP_INTERNAL: return "internal";
  }
  return "unknown";
}

ep_status ep_context_create(ep_context** out) {
  return guarded(nullptr, [&] {
    need(out, "out");
    *out = new ep_context();
  });
}

void ep_context_destroy(ep_context* ctx) { delete ctx; }

void ep_context_set_log(ep_context* ctx, ep_log_fn fn, void* user) {
  if (!ctx) return;
  ctx->log = fn;
  ctx->log_user = user;
}

const char* ep_last_error(const ep_context* ctx) { return ctx ? ctx->error.c_str() : g_error.c_str(); }

const char* ep_last_output(const ep_context* ctx) { return ctx ? ctx->output.c_str() : ""; }

ep_status ep_train(ep_context* ctx, const char* config_path) {
  return guarded(ctx, [&] {
    need(ctx, "ctx");
    need(config_path, "config_path");
    ctx->output = entprop::cmd_train(config_path, logger(ctx));
  });
}

ep_status ep_evaluate(ep_context* ctx, const char* checkpoint_path, const char* config_path) {
  return guarded(ctx, [&] {
    need(ctx, "ctx");
    need(checkpoint_path, "checkpoint_path");
    need(config_path, "config_path");
    ctx->output = entprop::cmd_eval(checkpoint_path, config_path, logger(ctx));
  });
}

ep_status ep_sweep(ep_context* ctx, const char* config_path, const double* ks, size_t k_count, const int* ns,
                   size_t n_count) {
  return guarded(ctx, [&] {
    need(ctx, "ctx");
    need(config_path, "config_path");
    if (k_count) need(ks, "ks");
    if (n_count) need(ns, "ns");
    ctx->output = entprop::cmd_sweep(config_path, std::vector<double>(ks, ks + k_count),
                                     std::vector<int>(ns, ns + n_count), logger(ctx));
  });
}

ep_status ep_report(ep_context* ctx, const char* const* run_dirs, size_t run_count, const char* out_dir) {
  return guarded(ctx, [&] {
    need(ctx, "ctx");
    need(out_dir, "out_dir");
    if (run_count) need(run_dirs, "run_dirs");
    std::vector<std::filesystem::path> dirs;
    for (size_t i = 0; i < run_count; ++i) {
      need(run_dirs[i], "run_dirs[i]");
      dirs.emplace_back(run_dirs[i]);
    }
    ctx->output = entprop::cmd_report(dirs, out_dir, logger(ctx));
  });
}

ep_status ep_h_score(double sa, double ra, double* out) {
  return guarded(nullptr, [&] {
    need(out, "out");
    *out = entprop::h_score(sa, ra);
  });
}

ep_status ep_entropy(const double* probs, size_t rows, size_t classes, double* out) {
  return guarded(nullptr, [&] {
    need(probs, "probs");
    need(out, "out");
    const entprop::Tensor<double> p({rows, classes}, std::vector<double>(probs, probs + rows * classes));
    const auto h = entprop::entropy(p);
    std::copy(h.begin(), h.end(), out);
  });
}

ep_status ep_epsilon_schedule(int n, double* epsilon, double* alpha) {
  return guarded(nullptr, [&] {
    need(epsilon, "epsilon");
    need(alpha, "alpha");
    const auto [e, a] = entprop::epsilon_schedule(n);
    *epsilon = e;
    *alpha = a;
  });
}

ep_status ep_theoretical_cost(const char* method, double k, int n, double p_adv, int use_free, double* out) {
  return guarded(nullptr, [&] {
    need(method, "method");
    need(out, "out");
    *out = entprop::theoretical_cost(entprop::parse_method(method), k, n, p_adv, use_free != 0);
  });
}

ep_status ep_model_load(ep_context* ctx, const char* path, ep_model** out) {
  return guarded(ctx, [&] {
    need(path, "path");
    need(out, "out");
    const entprop::Archive a = entprop::Archive::load(path);
    entprop::require(a.contains("model.precision"), entprop::ErrorCode::Version,
                     "checkpoint has no model.precision entry");
    if (a.get_text("model.precision") == "double")
      *out = new ep_model{entprop::Model<double>::load(a)};
    else
      *out = new ep_model{entprop::Model<float>::load(a)};
  });
}

void ep_model_destroy(ep_model* model) { delete model; }

ep_status ep_model_info(const ep_model* model, size_t* input_size, size_t* class_count) {
  return guarded(nullptr, [&] {
    need(model, "model");
    std::visit(
        [&](const auto& m) {
          if (input_size) *input_size = entprop::shape_numel(m.spec().input_shape);
          if (class_count) *class_count = m.spec().class_count;
        },
        model->model);
  });
}

ep_status ep_model_predict(ep_context* ctx, ep_model* model, const float* x, size_t count, float* logits) {
  return guarded(ctx, [&] {
    need(model, "model");
    need(x, "x");
    need(logits, "logits");
    entprop::require(count > 0, entprop::ErrorCode::InvalidArgument, "count must be positive");
    std::visit(
        [&](auto& m) {
          entprop::Shape s{count};
          const auto& in = m.spec().input_shape;
          s.insert(s.end(), in.begin(), in.end());
          const entprop::Tensor<float> images(s, std::vector<float>(x, x + count * entprop::shape_numel(in)));
          for (float v : images.values())
            entprop::require(v >= 0.0f && v <= 1.0f, entprop::ErrorCode::InvalidArgument, "x: value outside [0, 1]");
          const auto out = entprop::predict_dataset(m, images);
          for (size_t i = 0; i < out.size(); ++i) logits[i] = static_cast<float>(out[i]);
        },
        model->model);
  });
}

}  // extern "C"
