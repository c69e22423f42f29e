#include "flow/adam.hpp"

#include <cmath>

namespace invflow {

void adam_update(std::vector<double>& p, const std::vector<double>& g, std::vector<double>& m,
                 std::vector<double>& v, int64_t t, const AdamConfig& cfg) {
  if (p.size() != g.size() || p.size() != m.size() || p.size() != v.size())
    throw std::invalid_argument("adam_update: vector sizes differ");
  if (t < 1) throw std::invalid_argument("adam_update: t must be >= 1");
  double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (size_t i = 0; i < p.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    double mhat = m[i] / c1;
    double vhat = v[i] / c2;
    p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

bool adam_step(FlowModel& model, FlowModel& grads, AdamState& state, const AdamConfig& cfg) {
  std::vector<ParamRef> ps, gs, ms, vs;
  model.visit_params([&](const ParamRef& r) { ps.push_back(r); });
  grads.visit_params([&](const ParamRef& r) { gs.push_back(r); });
  state.m.visit_params([&](const ParamRef& r) { ms.push_back(r); });
  state.v.visit_params([&](const ParamRef& r) { vs.push_back(r); });
  if (ps.size() != gs.size() || ps.size() != ms.size() || ps.size() != vs.size())
    throw std::invalid_argument("adam_step: model and state structures differ");

  for (size_t i = 0; i < gs.size(); ++i)
    for (double g : *gs[i].values)
      if (!std::isfinite(g)) return false;

  ++state.t;
  for (size_t i = 0; i < ps.size(); ++i)
    adam_update(*ps[i].values, *gs[i].values, *ms[i].values, *vs[i].values, state.t, cfg);
  model.project_masks();
  return true;
}

}  // namespace invflow
