#pragma once

#include <functional>
#include <random>
#include <string>

#include "flow/layers.hpp"
#include "invconv/invconv.hpp"

namespace invflow {

struct FlowConfig {
  int channels = 1;
  int height = 28;
  int width = 28;
  int flow_steps = 2;   // K: steps per scale
  int blocks = 2;       // L: scales
  int kernel_size = 3;  // masked convolution kernel
  int hidden_width = 24;

  /// Throws std::invalid_argument listing every violated constraint.
  void validate() const;

  friend bool operator==(const FlowConfig&, const FlowConfig&) = default;
};

/// One flow step in the density direction: masked-conv solve, spline,
/// actnorm, 1x1 mixing, coupling. Sampling applies the exact inverses in
/// reverse order; the masked-conv inverse is a plain convolution.
struct FlowStep {
  Kernel conv_kernel;
  SplineActivation spline;
  ActNorm actnorm;
  Inv1x1 mix;
  Coupling coupling;

  struct Cache {
    ImageTensor x_solved, x_spline, x_act;
    Coupling::Cache coup;
  };

  ImageTensor forward(const ImageTensor& x, double* logdet, Cache* cache, ThreadPool* pool) const;
  ImageTensor inverse(const ImageTensor& y, ThreadPool* pool) const;
  ImageTensor backward(const ImageTensor& grad_out, const Cache& cache, double dlogdet,
                       FlowStep& grad, ThreadPool* pool) const;
};

/// Ordered per-scale latents; z[l] for l < L-1 are the split halves, z[L-1]
/// the final scale output.
struct LatentStack {
  std::vector<ImageTensor> z;
};

struct ParamRef {
  std::string name;
  std::vector<double>* values = nullptr;
  bool masked_kernel = false;
};

class FlowModel {
 public:
  struct LatentShape {
    int channels = 0, height = 0, width = 0;
  };

  FlowModel() = default;
  FlowModel(const FlowConfig& cfg, uint64_t init_seed);

  const FlowConfig& config() const { return cfg_; }
  const std::vector<LatentShape>& latent_shapes() const { return latent_shapes_; }
  int64_t input_dims() const {
    return static_cast<int64_t>(cfg_.channels) * cfg_.height * cfg_.width;
  }

  std::vector<std::vector<FlowStep>>& blocks() { return blocks_; }
  const std::vector<std::vector<FlowStep>>& blocks() const { return blocks_; }

  /// Fixed-order traversal of every trainable tensor. The same order on two
  /// structurally equal models pairs parameters with gradients or moments.
  void visit_params(const std::function<void(const ParamRef&)>& fn);

  void zero_params();
  void project_masks();
  int64_t param_count();

  /// Density pass for one item (input already centred). Fills latents and
  /// optionally per-step caches; returns log|det| accumulated over all steps.
  /// Throws on a non-finite intermediate, naming the failing layer.
  double forward_item(const ImageTensor& x, LatentStack& latents,
                      std::vector<FlowStep::Cache>* caches, ThreadPool* pool) const;

  /// Exact inverse of forward_item.
  ImageTensor inverse_item(const LatentStack& latents, ThreadPool* pool) const;

  /// log p(x) of one centred item.
  double log_prob_item(const ImageTensor& x, ThreadPool* pool) const;

  /// Backpropagates one item: latent gradient weight * z and logdet
  /// coefficient -weight flow into `grads`; returns the input gradient.
  ImageTensor backward_item(const LatentStack& latents,
                            const std::vector<FlowStep::Cache>& caches, double weight,
                            FlowModel& grads, ThreadPool* pool) const;

  /// Data-dependent actnorm init, walking the batch layer-synchronously so
  /// each actnorm sees its true input distribution. No-op for layers already
  /// initialised.
  void init_actnorm(const std::vector<ImageTensor>& batch, ThreadPool* pool);

  bool actnorm_initialized() const;
  void set_actnorm_initialized(bool v);

 private:
  FlowConfig cfg_;
  std::vector<std::vector<FlowStep>> blocks_;
  std::vector<LatentShape> latent_shapes_;
};

struct LogProbResult {
  std::vector<double> nll;
  std::vector<double> bpd;
  double mean_nll = 0.0;
  double mean_bpd = 0.0;
};

/// NLL and bits-per-dim of a centred batch; bpd adds the dequantisation
/// offset in bits (8 for 256-level inputs, 0 for continuous data).
LogProbResult model_log_prob(const FlowModel& model, const std::vector<ImageTensor>& batch,
                             double bpd_offset_bits, ThreadPool* pool = nullptr);

/// Mean-NLL backward over a batch; grads must be a zeroed structural clone.
/// Returns false (leaving grads unreliable) if any intermediate went
/// non-finite.
struct BatchGrad {
  double mean_nll = 0.0;
  double mean_bpd = 0.0;
  bool finite = true;
};
BatchGrad model_log_prob_backward(const FlowModel& model, const std::vector<ImageTensor>& batch,
                                  double bpd_offset_bits, FlowModel& grads,
                                  ThreadPool* pool = nullptr);

/// Draws n samples at the given temperature (z ~ N(0, T^2)) and inverts.
/// Outputs are centred model-domain tensors.
std::vector<ImageTensor> model_sample(const FlowModel& model, int n, double temperature,
                                      std::mt19937_64& rng, ThreadPool* pool = nullptr);

}  // namespace invflow
