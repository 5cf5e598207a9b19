#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>

#include "ba3c/checkpoint.hpp"
#include "ba3c/nn.hpp"
#include "ba3c/tensor.hpp"

namespace ba3c {

struct AdamConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double grad_clip = 0.0;  // global L2 norm threshold; 0 disables
};

/// First/second moment accumulators mirroring the parameter map.
template <typename T>
struct AdamState {
  AdamConfig cfg;
  std::uint64_t step = 0;
  std::map<std::string, Tensor<T>> m;
  std::map<std::string, Tensor<T>> v;

  std::vector<CheckpointRecord> to_records() const {
    std::vector<CheckpointRecord> recs;
    for (const auto& [name, t] : m) recs.push_back(CheckpointRecord::from_tensor("adam.m." + name, t));
    for (const auto& [name, t] : v) recs.push_back(CheckpointRecord::from_tensor("adam.v." + name, t));
    return recs;
  }
};

/// One Adam update with bias correction. Bumps params.version and state.step
/// by exactly 1. Rejects non-finite gradients before touching any state.
template <typename T>
void adam_step(ModelParams<T>& params, const GradMap<T>& grads, AdamState<T>& state) {
  if (grads.size() != params.tensors.size())
    throw std::invalid_argument("adam_step: gradient keys do not match parameters");
  for (const auto& name : params.order) {
    auto it = grads.find(name);
    if (it == grads.end())
      throw std::invalid_argument("adam_step: missing gradient for " + name);
    if (!it->second.same_shape(params.at(name)))
      throw std::invalid_argument("adam_step: gradient shape mismatch for " + name);
    if (!it->second.all_finite())
      throw std::runtime_error("adam_step: non-finite gradient for " + name);
  }

  double clip_scale = 1.0;
  if (state.cfg.grad_clip > 0.0) {
    double sq = 0.0;
    for (const auto& [name, g] : grads)
      for (std::size_t i = 0; i < g.size(); ++i) sq += double(g[i]) * double(g[i]);
    const double norm = std::sqrt(sq);
    if (norm > state.cfg.grad_clip) clip_scale = state.cfg.grad_clip / norm;
  }

  const double b1 = state.cfg.beta1, b2 = state.cfg.beta2;
  const std::uint64_t t = state.step + 1;
  const double bc1 = 1.0 - std::pow(b1, double(t));
  const double bc2 = 1.0 - std::pow(b2, double(t));
  const double lr = state.cfg.learning_rate;
  const double eps = state.cfg.epsilon;

  for (const auto& name : params.order) {
    Tensor<T>& p = params.at(name);
    const Tensor<T>& g = grads.at(name);
    auto& m = state.m.try_emplace(name, Tensor<T>(p.shape(), p.layout())).first->second;
    auto& v = state.v.try_emplace(name, Tensor<T>(p.shape(), p.layout())).first->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = double(g[i]) * clip_scale;
      const double mi = b1 * double(m[i]) + (1.0 - b1) * gi;
      const double vi = b2 * double(v[i]) + (1.0 - b2) * gi * gi;
      m[i] = T(mi);
      v[i] = T(vi);
      const double m_hat = mi / bc1;
      const double v_hat = vi / bc2;
      p[i] = T(double(p[i]) - lr * m_hat / (std::sqrt(v_hat) + eps));
    }
  }
  state.step = t;
  params.version += 1;
}

}  // namespace ba3c
