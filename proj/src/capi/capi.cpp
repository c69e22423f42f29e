#include "invflow/invflow.h"

#include <cstring>
#include <exception>
#include <memory>
#include <new>
#include <string>

#include "commands/commands.hpp"
#include "core/tensor.hpp"
#include "core/threadpool.hpp"
#include "data/checkpoint.hpp"
#include "data/data.hpp"
#include "flow/model.hpp"
#include "invconv/invconv.hpp"

struct ivf_context {
  std::unique_ptr<invflow::ThreadPool> pool;
};

struct ivf_tensor {
  invflow::ImageTensor t;
};

struct ivf_kernel {
  invflow::Kernel k;
};

struct ivf_model {
  invflow::FlowModel m;
};

namespace {

thread_local std::string g_last_error = "no error";

void set_error(const std::string& msg) { g_last_error = msg; }

ivf_status fail(ivf_status code, const std::string& msg) {
  set_error(msg);
  return code;
}

/// Runs the body with the uniform exception-to-status mapping.
template <typename Fn>
ivf_status guarded(Fn&& body) {
  try {
    return body();
  } catch (const std::invalid_argument& e) {
    return fail(IVF_ERR_INVALID_ARGUMENT, e.what());
  } catch (const invflow::DataError& e) {
    return fail(IVF_ERR_IO, e.what());
  } catch (const invflow::CheckpointError& e) {
    return fail(IVF_ERR_IO, e.what());
  } catch (const std::runtime_error& e) {
    return fail(IVF_ERR_NUMERIC, e.what());
  } catch (const std::bad_alloc&) {
    return fail(IVF_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(IVF_ERR_INTERNAL, e.what());
  }
}

ivf_status require(bool cond, const char* what) {
  if (cond) return IVF_OK;
  return fail(IVF_ERR_INVALID_ARGUMENT, what);
}

char* dup_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

}  // namespace

extern "C" {

const char* ivf_version(void) { return "0.1.0"; }

const char* ivf_last_error(void) { return g_last_error.c_str(); }

ivf_status ivf_context_create(int threads, ivf_context** out) {
  if (require(out != nullptr, "ivf_context_create: out is NULL")) return IVF_ERR_INVALID_ARGUMENT;
  return guarded([&] {
    auto ctx = std::make_unique<ivf_context>();
    ctx->pool = std::make_unique<invflow::ThreadPool>(threads);
    *out = ctx.release();
    return IVF_OK;
  });
}

void ivf_context_destroy(ivf_context* ctx) { delete ctx; }

ivf_status ivf_tensor_create(int channels, int height, int width, ivf_tensor** out) {
  if (require(out != nullptr, "ivf_tensor_create: out is NULL")) return IVF_ERR_INVALID_ARGUMENT;
  return guarded([&] {
    *out = new ivf_tensor{invflow::ImageTensor(channels, height, width)};
    return IVF_OK;
  });
}

void ivf_tensor_destroy(ivf_tensor* t) { delete t; }

int ivf_tensor_channels(const ivf_tensor* t) { return t ? t->t.channels() : 0; }
int ivf_tensor_height(const ivf_tensor* t) { return t ? t->t.height() : 0; }
int ivf_tensor_width(const ivf_tensor* t) { return t ? t->t.width() : 0; }
int64_t ivf_tensor_size(const ivf_tensor* t) { return t ? t->t.size() : 0; }
double* ivf_tensor_data(ivf_tensor* t) { return t ? t->t.data().data() : nullptr; }
const double* ivf_tensor_data_const(const ivf_tensor* t) {
  return t ? t->t.data().data() : nullptr;
}

ivf_status ivf_kernel_create(int c_out, int c_in, int k, ivf_kernel** out) {
  if (require(out != nullptr, "ivf_kernel_create: out is NULL")) return IVF_ERR_INVALID_ARGUMENT;
  return guarded([&] {
    *out = new ivf_kernel{invflow::Kernel(c_out, c_in, k)};
    return IVF_OK;
  });
}

ivf_status ivf_kernel_identity(int channels, int k, ivf_kernel** out) {
  if (require(out != nullptr, "ivf_kernel_identity: out is NULL"))
    return IVF_ERR_INVALID_ARGUMENT;
  return guarded([&] {
    *out = new ivf_kernel{invflow::masked_identity_kernel(channels, k)};
    return IVF_OK;
  });
}

void ivf_kernel_destroy(ivf_kernel* w) { delete w; }

int ivf_kernel_c_out(const ivf_kernel* w) { return w ? w->k.c_out() : 0; }
int ivf_kernel_c_in(const ivf_kernel* w) { return w ? w->k.c_in() : 0; }
int ivf_kernel_size(const ivf_kernel* w) { return w ? w->k.k() : 0; }
double* ivf_kernel_data(ivf_kernel* w) { return w ? w->k.weights().data() : nullptr; }

ivf_status ivf_kernel_mask_project(ivf_kernel* w) {
  if (require(w != nullptr, "ivf_kernel_mask_project: kernel is NULL"))
    return IVF_ERR_INVALID_ARGUMENT;
  return guarded([&] {
    w->k = invflow::mask_project(std::move(w->k));
    return IVF_OK;
  });
}

ivf_status ivf_conv_forward(ivf_context* ctx, const ivf_tensor* x, const ivf_kernel* w,
                            ivf_tensor** out_y) {
  if (require(ctx && x && w && out_y, "ivf_conv_forward: NULL argument"))
    return IVF_ERR_INVALID_ARGUMENT;
  return guarded([&] {
    *out_y = new ivf_tensor{invflow::conv_forward(x->t, w->k, ctx->pool.get())};
    return IVF_OK;
  });
}

ivf_status ivf_inv_conv_solve(ivf_context* ctx, const ivf_tensor* y, const ivf_kernel* w,
                              ivf_tensor** out_x) {
  if (require(ctx && y && w && out_x, "ivf_inv_conv_solve: NULL argument"))
    return IVF_ERR_INVALID_ARGUMENT;
  return guarded([&] {
    *out_x = new ivf_tensor{invflow::inv_conv_solve(y->t, w->k, ctx->pool.get())};
    return IVF_OK;
  });
}

ivf_status ivf_inv_conv_backward(ivf_context* ctx, const ivf_tensor* grad_x,
                                 const ivf_tensor* x_solved, const ivf_kernel* w,
                                 ivf_tensor** out_grad_input, ivf_kernel** out_grad_weights) {
  if (require(ctx && grad_x && x_solved && w && out_grad_input && out_grad_weights,
              "ivf_inv_conv_backward: NULL argument"))
    return IVF_ERR_INVALID_ARGUMENT;
  return guarded([&] {
    invflow::ConvGradients g =
        invflow::inv_conv_backward(grad_x->t, x_solved->t, w->k, ctx->pool.get());
    *out_grad_input = new ivf_tensor{std::move(g.grad_input)};
    *out_grad_weights = new ivf_kernel{std::move(g.grad_weights)};
    return IVF_OK;
  });
}

ivf_status ivf_model_load(const char* checkpoint_path, ivf_model** out) {
  if (require(checkpoint_path && out, "ivf_model_load: NULL argument"))
    return IVF_ERR_INVALID_ARGUMENT;
  return guarded([&] {
    invflow::Checkpoint ckpt = invflow::load_checkpoint(checkpoint_path);
    *out = new ivf_model{std::move(ckpt.model)};
    return IVF_OK;
  });
}

void ivf_model_destroy(ivf_model* m) { delete m; }

ivf_status ivf_model_shape(const ivf_model* m, int* channels, int* height, int* width) {
  if (require(m != nullptr, "ivf_model_shape: model is NULL")) return IVF_ERR_INVALID_ARGUMENT;
  if (channels) *channels = m->m.config().channels;
  if (height) *height = m->m.config().height;
  if (width) *width = m->m.config().width;
  return IVF_OK;
}

ivf_status ivf_model_log_prob(ivf_context* ctx, const ivf_model* m, const double* items, int n,
                              double bpd_offset_bits, double* out_nll, double* out_bpd) {
  if (require(ctx && m && items, "ivf_model_log_prob: NULL argument"))
    return IVF_ERR_INVALID_ARGUMENT;
  if (require(n >= 1, "ivf_model_log_prob: n must be >= 1")) return IVF_ERR_INVALID_ARGUMENT;
  return guarded([&] {
    const invflow::FlowConfig& cfg = m->m.config();
    int64_t item = static_cast<int64_t>(cfg.channels) * cfg.height * cfg.width;
    std::vector<invflow::ImageTensor> batch;
    batch.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      std::vector<double> values(items + i * item, items + (i + 1) * item);
      batch.push_back(invflow::ImageTensor::from_data(cfg.channels, cfg.height, cfg.width,
                                                      std::move(values)));
    }
    invflow::LogProbResult r =
        invflow::model_log_prob(m->m, batch, bpd_offset_bits, ctx->pool.get());
    for (int i = 0; i < n; ++i) {
      if (out_nll) out_nll[i] = r.nll[static_cast<size_t>(i)];
      if (out_bpd) out_bpd[i] = r.bpd[static_cast<size_t>(i)];
    }
    return IVF_OK;
  });
}

ivf_status ivf_model_sample(ivf_context* ctx, const ivf_model* m, int n, double temperature,
                            uint64_t seed, double* out_items) {
  if (require(ctx && m && out_items, "ivf_model_sample: NULL argument"))
    return IVF_ERR_INVALID_ARGUMENT;
  if (require(n >= 1, "ivf_model_sample: n must be >= 1")) return IVF_ERR_INVALID_ARGUMENT;
  return guarded([&] {
    std::mt19937_64 rng(seed);
    std::vector<invflow::ImageTensor> samples =
        invflow::model_sample(m->m, n, temperature, rng, ctx->pool.get());
    double* at = out_items;
    for (auto& s : samples) {
      std::memcpy(at, s.data().data(), s.data().size() * sizeof(double));
      at += s.data().size();
    }
    return IVF_OK;
  });
}

ivf_status ivf_cmd_train(const char* config_json, const char* out_checkpoint, int threads,
                         char** out_report) {
  if (require(config_json && out_checkpoint && out_report, "ivf_cmd_train: NULL argument"))
    return IVF_ERR_INVALID_ARGUMENT;
  return guarded([&] {
    *out_report = dup_string(invflow::cmd_train(config_json, out_checkpoint, threads));
    return IVF_OK;
  });
}

ivf_status ivf_cmd_sample(const char* checkpoint_path, const char* out_image, int n,
                          double temperature, uint64_t seed, int threads, char** out_report) {
  if (require(checkpoint_path && out_image && out_report, "ivf_cmd_sample: NULL argument"))
    return IVF_ERR_INVALID_ARGUMENT;
  return guarded([&] {
    *out_report =
        dup_string(invflow::cmd_sample(checkpoint_path, out_image, n, temperature, seed, threads));
    return IVF_OK;
  });
}

ivf_status ivf_cmd_verify(int threads, int inject_mask_violation, char** out_report) {
  if (require(out_report != nullptr, "ivf_cmd_verify: out_report is NULL"))
    return IVF_ERR_INVALID_ARGUMENT;
  return guarded([&] {
    bool passed = false;
    std::string report = invflow::cmd_verify(threads, inject_mask_violation != 0, passed);
    *out_report = dup_string(report);
    if (!passed) return fail(IVF_ERR_VERIFY_FAILED, "verification reported failing properties");
    return IVF_OK;
  });
}

ivf_status ivf_cmd_bench(const char* sizes, const char* kernels, const char* batches,
                         const char* thread_counts, const char* out_csv, char** out_report) {
  if (require(sizes && kernels && batches && thread_counts && out_csv && out_report,
              "ivf_cmd_bench: NULL argument"))
    return IVF_ERR_INVALID_ARGUMENT;
  return guarded([&] {
    *out_report = dup_string(invflow::cmd_bench(sizes, kernels, batches, thread_counts, out_csv));
    return IVF_OK;
  });
}

void ivf_string_free(char* s) { delete[] s; }

}  // extern "C"
