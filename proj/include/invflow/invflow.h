#ifndef INVFLOW_INVFLOW_H
#define INVFLOW_INVFLOW_H

/* C interface to the invertible masked convolution and the flow model built
 * on it. Every function that can fail returns an ivf_status; on failure a
 * human-readable message is available from ivf_last_error() until the next
 * failing call on the same thread. Objects are opaque handles created and
 * destroyed through matching create/destroy pairs; destroy functions accept
 * NULL. Out-parameters are written only on IVF_OK unless noted. */

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ivf_status {
  IVF_OK = 0,
  IVF_ERR_INVALID_ARGUMENT = 1, /* bad handle, shape, flag, or config */
  IVF_ERR_VERIFY_FAILED = 2,    /* verification battery reported failures */
  IVF_ERR_IO = 3,               /* file missing, unreadable, or corrupt */
  IVF_ERR_NUMERIC = 4,          /* singular matrix or non-finite values */
  IVF_ERR_INTERNAL = 5
} ivf_status;

/* Library version as "major.minor.patch". */
const char* ivf_version(void);

/* Message for the most recent failure on this thread; never NULL. */
const char* ivf_last_error(void);

typedef struct ivf_context ivf_context; /* owns the worker thread pool */
typedef struct ivf_tensor ivf_tensor;   /* (channels, height, width) doubles */
typedef struct ivf_kernel ivf_kernel;   /* (c_out, c_in, k, k) doubles */
typedef struct ivf_model ivf_model;     /* trained flow model */

/* ---- context ---------------------------------------------------------- */

/* threads >= 1; the calling thread always participates, so 1 means serial. */
ivf_status ivf_context_create(int threads, ivf_context** out);
void ivf_context_destroy(ivf_context* ctx);

/* ---- tensors ----------------------------------------------------------
 * Storage is channel-planar: element (c, y, x) lives at index
 * (c * height + y) * width + x. All extents are >= 1. A new tensor is
 * zero-filled. The data pointer stays valid until the tensor is destroyed. */

ivf_status ivf_tensor_create(int channels, int height, int width, ivf_tensor** out);
void ivf_tensor_destroy(ivf_tensor* t);
int ivf_tensor_channels(const ivf_tensor* t);
int ivf_tensor_height(const ivf_tensor* t);
int ivf_tensor_width(const ivf_tensor* t);
int64_t ivf_tensor_size(const ivf_tensor* t);
double* ivf_tensor_data(ivf_tensor* t);
const double* ivf_tensor_data_const(const ivf_tensor* t);

/* ---- kernels ----------------------------------------------------------
 * Weight (co, ci, i, j) lives at index ((co * c_in + ci) * k + i) * k + j.
 * The invertibility mask pins tap (k-1, k-1): 1 on the channel diagonal and
 * 0 off it. ivf_kernel_mask_project enforces that in place; the convolution
 * entry points expect kernels already satisfying it. */

ivf_status ivf_kernel_create(int c_out, int c_in, int k, ivf_kernel** out);
/* Masked identity: convolving with it is the identity map. */
ivf_status ivf_kernel_identity(int channels, int k, ivf_kernel** out);
void ivf_kernel_destroy(ivf_kernel* w);
int ivf_kernel_c_out(const ivf_kernel* w);
int ivf_kernel_c_in(const ivf_kernel* w);
int ivf_kernel_size(const ivf_kernel* w);
double* ivf_kernel_data(ivf_kernel* w);
/* Requires c_out == c_in. */
ivf_status ivf_kernel_mask_project(ivf_kernel* w);

/* ---- masked convolution ------------------------------------------------
 * y = x + (strictly causal masked convolution of x); the pinned tap makes
 * the map volume preserving and exactly invertible. Kernel channel counts
 * must match the input. New tensors/kernels are returned through out. */

ivf_status ivf_conv_forward(ivf_context* ctx, const ivf_tensor* x, const ivf_kernel* w,
                            ivf_tensor** out_y);
/* Exact inverse of ivf_conv_forward, computed by anti-diagonal wavefronts. */
ivf_status ivf_inv_conv_solve(ivf_context* ctx, const ivf_tensor* y, const ivf_kernel* w,
                              ivf_tensor** out_x);
/* Gradients of loss L through x = solve(y, w): given dL/dx and the solved x,
 * returns dL/dy and dL/dw (zero on pinned taps). */
ivf_status ivf_inv_conv_backward(ivf_context* ctx, const ivf_tensor* grad_x,
                                 const ivf_tensor* x_solved, const ivf_kernel* w,
                                 ivf_tensor** out_grad_input, ivf_kernel** out_grad_weights);

/* ---- model -------------------------------------------------------------
 * Models are produced by ivf_cmd_train and loaded from checkpoints. Item
 * buffers are batches of n contiguous tensors in the layout above, in the
 * centred domain [-0.5, 0.5). */

ivf_status ivf_model_load(const char* checkpoint_path, ivf_model** out);
void ivf_model_destroy(ivf_model* m);
ivf_status ivf_model_shape(const ivf_model* m, int* channels, int* height, int* width);
/* out_nll/out_bpd are caller arrays of length n (either may be NULL). bpd
 * adds bpd_offset_bits (8 for 256-level quantised data). */
ivf_status ivf_model_log_prob(ivf_context* ctx, const ivf_model* m, const double* items, int n,
                              double bpd_offset_bits, double* out_nll, double* out_bpd);
/* Writes n sampled items to out_items (capacity n * channels * height *
 * width doubles). temperature scales the latent draw; 0 gives the mode path. */
ivf_status ivf_model_sample(ivf_context* ctx, const ivf_model* m, int n, double temperature,
                            uint64_t seed, double* out_items);

/* ---- commands ----------------------------------------------------------
 * Each command returns a JSON run report through out_report (free with
 * ivf_string_free). On most failures the report is absent; ivf_cmd_verify
 * returns IVF_ERR_VERIFY_FAILED *with* a report describing what failed. */

ivf_status ivf_cmd_train(const char* config_json, const char* out_checkpoint, int threads,
                         char** out_report);
ivf_status ivf_cmd_sample(const char* checkpoint_path, const char* out_image, int n,
                          double temperature, uint64_t seed, int threads, char** out_report);
ivf_status ivf_cmd_verify(int threads, int inject_mask_violation, char** out_report);
ivf_status ivf_cmd_bench(const char* sizes, const char* kernels, const char* batches,
                         const char* thread_counts, const char* out_csv, char** out_report);
void ivf_string_free(char* s);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* INVFLOW_INVFLOW_H */
