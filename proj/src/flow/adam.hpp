#pragma once

#include "flow/model.hpp"

namespace invflow {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update on raw vectors; t is the 1-based step count
/// after this update.
void adam_update(std::vector<double>& p, const std::vector<double>& g, std::vector<double>& m,
                 std::vector<double>& v, int64_t t, const AdamConfig& cfg);

/// Optimizer state as structural clones of the model (same traversal order).
struct AdamState {
  FlowModel m;
  FlowModel v;
  int64_t t = 0;

  AdamState() = default;
  explicit AdamState(const FlowModel& model) : m(model), v(model) {
    m.zero_params();
    v.zero_params();
  }
};

/// One optimizer step over every model parameter, followed by mask projection
/// on the masked kernels. Returns false and changes nothing if any gradient
/// entry is non-finite.
bool adam_step(FlowModel& model, FlowModel& grads, AdamState& state, const AdamConfig& cfg);

}  // namespace invflow
