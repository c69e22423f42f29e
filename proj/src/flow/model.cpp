#include "flow/model.hpp"

#include <cmath>
#include <numeric>

namespace invflow {

namespace {

constexpr double kLn2 = 0.6931471805599453;

void check_finite(const ImageTensor& t, const char* layer) {
  if (!t.all_finite())
    throw std::runtime_error(std::string("non-finite activation after ") + layer);
}

ImageTensor scaled(const ImageTensor& t, double f) {
  ImageTensor out = t;
  for (auto& v : out.data()) v *= f;
  return out;
}

}  // namespace

void FlowConfig::validate() const {
  std::vector<std::string> bad;
  auto require = [&](bool ok, const std::string& msg) {
    if (!ok) bad.push_back(msg);
  };
  require(channels >= 1, "channels must be >= 1");
  require(height >= 1, "height must be >= 1");
  require(width >= 1, "width must be >= 1");
  require(flow_steps >= 1, "flow_steps must be >= 1");
  require(blocks >= 1, "blocks must be >= 1");
  require(kernel_size >= 1, "kernel_size must be >= 1");
  require(hidden_width >= 1, "hidden_width must be >= 1");
  if (blocks >= 1 && height >= 1 && width >= 1) {
    int div = 1 << blocks;
    require(height % div == 0, "height must be divisible by 2^blocks");
    require(width % div == 0, "width must be divisible by 2^blocks");
  }
  if (!bad.empty()) {
    std::string msg = "invalid flow config: ";
    for (size_t i = 0; i < bad.size(); ++i) {
      if (i) msg += "; ";
      msg += bad[i];
    }
    throw std::invalid_argument(msg);
  }
}

ImageTensor FlowStep::forward(const ImageTensor& x, double* logdet, Cache* cache,
                              ThreadPool* pool) const {
  ImageTensor x_solved = inv_conv_solve(x, conv_kernel, pool);
  check_finite(x_solved, "inv_conv");
  ImageTensor x_spline = spline.forward(x_solved, logdet);
  check_finite(x_spline, "spline");
  ImageTensor x_act = actnorm.forward(x_spline, logdet);
  check_finite(x_act, "actnorm");
  ImageTensor x_mix = mix.forward(x_act, logdet);
  check_finite(x_mix, "mix");
  ImageTensor out = coupling.forward(x_mix, logdet, cache ? &cache->coup : nullptr, pool);
  check_finite(out, "coupling");
  if (cache) {
    cache->x_solved = std::move(x_solved);
    cache->x_spline = std::move(x_spline);
    cache->x_act = std::move(x_act);
  }
  return out;
}

ImageTensor FlowStep::inverse(const ImageTensor& y, ThreadPool* pool) const {
  ImageTensor x = coupling.inverse(y, pool);
  x = mix.inverse(x);
  x = actnorm.inverse(x);
  x = spline.inverse(x);
  // The inverse of the solve is the masked convolution itself.
  return conv_forward(x, conv_kernel, pool);
}

ImageTensor FlowStep::backward(const ImageTensor& grad_out, const Cache& cache, double dlogdet,
                               FlowStep& grad, ThreadPool* pool) const {
  ImageTensor g = coupling.backward(grad_out, cache.coup, dlogdet, grad.coupling, pool);
  g = mix.backward(g, cache.x_act, dlogdet, grad.mix);
  g = actnorm.backward(g, cache.x_spline, dlogdet, grad.actnorm);
  g = spline.backward(g, cache.x_solved, dlogdet, grad.spline);
  ImageTensor u = input_grad(g, conv_kernel, pool);
  Kernel gw = weight_grad(u, cache.x_solved, conv_kernel, pool);
  auto& acc = grad.conv_kernel.weights();
  const auto& add = gw.weights();
  for (size_t i = 0; i < acc.size(); ++i) acc[i] += add[i];
  return u;
}

FlowModel::FlowModel(const FlowConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
  cfg.validate();
  std::mt19937_64 seeder(init_seed);
  int c = cfg.channels, h = cfg.height, w = cfg.width;
  blocks_.resize(static_cast<size_t>(cfg.blocks));
  for (int l = 0; l < cfg.blocks; ++l) {
    c *= 4;
    h /= 2;
    w /= 2;
    auto& steps = blocks_[static_cast<size_t>(l)];
    steps.reserve(static_cast<size_t>(cfg.flow_steps));
    for (int s = 0; s < cfg.flow_steps; ++s) {
      FlowStep step;
      step.conv_kernel = masked_identity_kernel(c, cfg.kernel_size);
      step.spline = SplineActivation(c);
      step.actnorm = ActNorm(c);
      step.mix = Inv1x1(c);
      step.coupling = Coupling(c, cfg.hidden_width, seeder());
      steps.push_back(std::move(step));
    }
    if (l < cfg.blocks - 1) {
      latent_shapes_.push_back({c / 2, h, w});
      c /= 2;
    } else {
      latent_shapes_.push_back({c, h, w});
    }
  }
}

void FlowModel::visit_params(const std::function<void(const ParamRef&)>& fn) {
  for (size_t b = 0; b < blocks_.size(); ++b)
    for (size_t s = 0; s < blocks_[b].size(); ++s) {
      FlowStep& st = blocks_[b][s];
      std::string prefix = "block" + std::to_string(b) + "/step" + std::to_string(s) + "/";
      fn({prefix + "inv_conv", &st.conv_kernel.weights(), true});
      fn({prefix + "spline/log_slopes", &st.spline.log_slopes, false});
      fn({prefix + "spline/offset", &st.spline.offset, false});
      fn({prefix + "actnorm/log_scale", &st.actnorm.log_scale, false});
      fn({prefix + "actnorm/bias", &st.actnorm.bias, false});
      fn({prefix + "mix/mat", &st.mix.mat, false});
      fn({prefix + "coupling/w1", &st.coupling.w1.weights(), false});
      fn({prefix + "coupling/b1", &st.coupling.b1, false});
      fn({prefix + "coupling/w2", &st.coupling.w2.weights(), false});
      fn({prefix + "coupling/b2", &st.coupling.b2, false});
      fn({prefix + "coupling/w3", &st.coupling.w3.weights(), false});
      fn({prefix + "coupling/b3", &st.coupling.b3, false});
    }
}

void FlowModel::zero_params() {
  visit_params([](const ParamRef& p) { std::fill(p.values->begin(), p.values->end(), 0.0); });
}

void FlowModel::project_masks() {
  for (auto& block : blocks_)
    for (auto& step : block) step.conv_kernel = mask_project(std::move(step.conv_kernel));
}

int64_t FlowModel::param_count() {
  int64_t n = 0;
  visit_params([&](const ParamRef& p) { n += static_cast<int64_t>(p.values->size()); });
  return n;
}

double FlowModel::forward_item(const ImageTensor& x, LatentStack& latents,
                               std::vector<FlowStep::Cache>* caches, ThreadPool* pool) const {
  if (x.channels() != cfg_.channels || x.height() != cfg_.height || x.width() != cfg_.width)
    throw std::invalid_argument("forward_item: input shape does not match config");
  latents.z.clear();
  if (caches) caches->resize(blocks_.size() * static_cast<size_t>(cfg_.flow_steps));
  double logdet = 0.0;
  ImageTensor cur = x;
  for (size_t b = 0; b < blocks_.size(); ++b) {
    cur = squeeze(cur);
    for (size_t s = 0; s < blocks_[b].size(); ++s) {
      FlowStep::Cache* cache =
          caches ? &(*caches)[b * static_cast<size_t>(cfg_.flow_steps) + s] : nullptr;
      try {
        cur = blocks_[b][s].forward(cur, &logdet, cache, pool);
      } catch (const std::runtime_error& e) {
        throw std::runtime_error("block " + std::to_string(b) + " step " + std::to_string(s) +
                                 ": " + e.what());
      }
    }
    if (b + 1 < blocks_.size()) {
      auto [keep, z] = split_channels(cur);
      latents.z.push_back(std::move(z));
      cur = std::move(keep);
    } else {
      latents.z.push_back(std::move(cur));
    }
  }
  return logdet;
}

ImageTensor FlowModel::inverse_item(const LatentStack& latents, ThreadPool* pool) const {
  if (latents.z.size() != latent_shapes_.size())
    throw std::invalid_argument("inverse_item: latent count does not match model");
  for (size_t i = 0; i < latents.z.size(); ++i) {
    const auto& z = latents.z[i];
    const auto& want = latent_shapes_[i];
    if (z.channels() != want.channels || z.height() != want.height || z.width() != want.width)
      throw std::invalid_argument("inverse_item: latent shape mismatch at scale " +
                                  std::to_string(i));
  }
  ImageTensor cur = latents.z.back();
  for (size_t bi = blocks_.size(); bi-- > 0;) {
    if (bi + 1 < blocks_.size()) cur = concat_channels(cur, latents.z[bi]);
    for (size_t si = blocks_[bi].size(); si-- > 0;) cur = blocks_[bi][si].inverse(cur, pool);
    cur = unsqueeze(cur);
  }
  return cur;
}

double FlowModel::log_prob_item(const ImageTensor& x, ThreadPool* pool) const {
  LatentStack latents;
  double logdet = forward_item(x, latents, nullptr, pool);
  double logp = logdet;
  for (const auto& z : latents.z) logp += gaussian_logp(z);
  return logp;
}

ImageTensor FlowModel::backward_item(const LatentStack& latents,
                                     const std::vector<FlowStep::Cache>& caches, double weight,
                                     FlowModel& grads, ThreadPool* pool) const {
  // d(weight * nll)/dz = weight * z for the standard-normal prior, and every
  // logdet term enters the loss with coefficient -weight.
  ImageTensor g = scaled(latents.z.back(), weight);
  for (size_t bi = blocks_.size(); bi-- > 0;) {
    if (bi + 1 < blocks_.size())
      g = concat_channels(g, scaled(latents.z[bi], weight));
    for (size_t si = blocks_[bi].size(); si-- > 0;) {
      const auto& cache = caches[bi * static_cast<size_t>(cfg_.flow_steps) + si];
      g = blocks_[bi][si].backward(g, cache, -weight, grads.blocks_[bi][si], pool);
    }
    g = unsqueeze(g);
  }
  return g;
}

void FlowModel::init_actnorm(const std::vector<ImageTensor>& batch, ThreadPool* pool) {
  if (batch.empty()) throw std::invalid_argument("init_actnorm: empty batch");
  std::vector<ImageTensor> xs = batch;
  for (size_t b = 0; b < blocks_.size(); ++b) {
    for (auto& x : xs) x = squeeze(x);
    for (auto& step : blocks_[b]) {
      for (auto& x : xs) {
        x = inv_conv_solve(x, step.conv_kernel, pool);
        x = step.spline.forward(x, nullptr);
      }
      if (!step.actnorm.initialized) step.actnorm.init_from_batch(xs);
      for (auto& x : xs) {
        x = step.actnorm.forward(x, nullptr);
        x = step.mix.forward(x, nullptr);
        x = step.coupling.forward(x, nullptr, nullptr, pool);
      }
    }
    if (b + 1 < blocks_.size())
      for (auto& x : xs) x = split_channels(x).first;
  }
}

bool FlowModel::actnorm_initialized() const {
  for (const auto& block : blocks_)
    for (const auto& step : block)
      if (!step.actnorm.initialized) return false;
  return true;
}

void FlowModel::set_actnorm_initialized(bool v) {
  for (auto& block : blocks_)
    for (auto& step : block) step.actnorm.initialized = v;
}

LogProbResult model_log_prob(const FlowModel& model, const std::vector<ImageTensor>& batch,
                             double bpd_offset_bits, ThreadPool* pool) {
  LogProbResult r;
  double dims = static_cast<double>(model.input_dims());
  for (const auto& x : batch) {
    double nll = -model.log_prob_item(x, pool);
    r.nll.push_back(nll);
    r.bpd.push_back(nll / (dims * kLn2) + bpd_offset_bits);
  }
  if (!batch.empty()) {
    r.mean_nll = std::accumulate(r.nll.begin(), r.nll.end(), 0.0) / static_cast<double>(r.nll.size());
    r.mean_bpd = std::accumulate(r.bpd.begin(), r.bpd.end(), 0.0) / static_cast<double>(r.bpd.size());
  }
  return r;
}

BatchGrad model_log_prob_backward(const FlowModel& model, const std::vector<ImageTensor>& batch,
                                  double bpd_offset_bits, FlowModel& grads, ThreadPool* pool) {
  BatchGrad out;
  if (batch.empty()) throw std::invalid_argument("model_log_prob_backward: empty batch");
  double dims = static_cast<double>(model.input_dims());
  double weight = 1.0 / static_cast<double>(batch.size());
  for (const auto& x : batch) {
    LatentStack latents;
    std::vector<FlowStep::Cache> caches;
    double logdet;
    try {
      logdet = model.forward_item(x, latents, &caches, pool);
    } catch (const std::runtime_error&) {
      out.finite = false;
      return out;
    }
    double logp = logdet;
    for (const auto& z : latents.z) logp += gaussian_logp(z);
    out.mean_nll += -logp * weight;
    model.backward_item(latents, caches, weight, grads, pool);
  }
  out.mean_bpd = out.mean_nll / (dims * kLn2) + bpd_offset_bits;
  return out;
}

std::vector<ImageTensor> model_sample(const FlowModel& model, int n, double temperature,
                                      std::mt19937_64& rng, ThreadPool* pool) {
  if (n < 0) throw std::invalid_argument("model_sample: n must be >= 0");
  if (temperature < 0.0) throw std::invalid_argument("model_sample: temperature must be >= 0");
  std::vector<ImageTensor> out;
  out.reserve(static_cast<size_t>(n));
  std::normal_distribution<double> dist(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    LatentStack latents;
    for (const auto& shape : model.latent_shapes()) {
      ImageTensor z(shape.channels, shape.height, shape.width);
      for (auto& v : z.data()) v = dist(rng) * temperature;
      latents.z.push_back(std::move(z));
    }
    out.push_back(model.inverse_item(latents, pool));
  }
  return out;
}

}  // namespace invflow
