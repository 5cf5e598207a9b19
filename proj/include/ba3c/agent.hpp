#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "ba3c/nn.hpp"
#include "ba3c/rng.hpp"
#include "ba3c/tensor.hpp"

namespace ba3c {

struct AgentConfig {
  double gamma = 0.99;
  std::size_t local_t_max = 5;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
};

/// One transition: network input state, the action taken, and the n-step
/// discounted return target.
template <typename T>
struct Experience {
  Tensor<T> state;  // [h, w, c]
  std::size_t action = 0;
  double return_target = 0.0;
};

/// n-step discounted returns over a rollout chunk: R_t = r_t + g*R_{t+1},
/// seeded with 0 at a terminal cut and with the value estimate otherwise.
inline std::vector<double> compute_returns(const std::vector<double>& rewards,
                                           double bootstrap_value, bool terminal,
                                           double gamma) {
  if (rewards.empty()) throw std::invalid_argument("compute_returns: empty rewards");
  if (!terminal && !std::isfinite(bootstrap_value))
    throw std::invalid_argument("compute_returns: non-finite bootstrap value");
  std::vector<double> returns(rewards.size());
  double acc = terminal ? 0.0 : bootstrap_value;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    acc = rewards[i] + gamma * acc;
    returns[i] = acc;
  }
  return returns;
}

/// Scalar actor-critic loss, mean over the batch:
///   -log pi(a|s) * A  -  entropy_coef * H(pi)  +  value_coef * (R - V)^2
/// with the advantage A = R - V treated as a constant.
template <typename T>
double a3c_loss(const Tensor<T>& policy, const Tensor<T>& value,
                const std::vector<std::size_t>& actions, const std::vector<double>& returns,
                const AgentConfig& cfg) {
  const std::size_t B = policy.dim(0), A = policy.dim(1);
  if (B == 0 || actions.size() != B || returns.size() != B)
    throw std::invalid_argument("a3c_loss: batch size mismatch");
  double loss = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    const T* row = policy.data() + i * A;
    const double p_a = double(row[actions[i]]);
    if (p_a <= 0.0) throw std::runtime_error("a3c_loss: zero probability at taken action");
    const double adv = returns[i] - double(value[i]);
    double entropy = 0.0;
    for (std::size_t a = 0; a < A; ++a) {
      const double p = double(row[a]);
      if (p > 0.0) entropy -= p * std::log(p);
    }
    loss += -std::log(p_a) * adv - cfg.entropy_coef * entropy +
            cfg.value_coef * adv * adv;
  }
  return loss / double(B);
}

/// Gradients of the batch-mean loss at the policy logits and the value
/// output. Softmax is folded in: d(-log pi(a)*A)/dz = (pi - onehot_a)*A,
/// d(-H)/dz_j = pi_j*(log pi_j + H).
template <typename T>
void a3c_head_gradients(const Tensor<T>& policy, const Tensor<T>& value,
                        const std::vector<std::size_t>& actions,
                        const std::vector<double>& returns, const AgentConfig& cfg,
                        Tensor<T>& dlogits, Tensor<T>& dvalue) {
  const std::size_t B = policy.dim(0), A = policy.dim(1);
  dlogits = Tensor<T>({B, A}, Layout::FLAT);
  dvalue = Tensor<T>({B}, Layout::FLAT);
  const double inv_b = 1.0 / double(B);
  for (std::size_t i = 0; i < B; ++i) {
    const T* row = policy.data() + i * A;
    const double adv = returns[i] - double(value[i]);
    double entropy = 0.0;
    for (std::size_t a = 0; a < A; ++a) {
      const double p = double(row[a]);
      if (p > 0.0) entropy -= p * std::log(p);
    }
    T* out = dlogits.data() + i * A;
    for (std::size_t a = 0; a < A; ++a) {
      const double p = double(row[a]);
      double g = p * adv;
      if (a == actions[i]) g -= adv;
      g += cfg.entropy_coef * p * (std::log(std::max(p, 1e-300)) + entropy);
      out[a] = T(g * inv_b);
    }
    dvalue[i] = T(-2.0 * cfg.value_coef * adv * inv_b);
  }
}

/// Categorical sample during training; argmax (lowest index wins ties)
/// during evaluation.
template <typename T>
std::size_t select_action(const T* policy_row, std::size_t n_actions, Rng& rng,
                          bool eval_mode = false) {
  if (eval_mode) {
    std::size_t best = 0;
    for (std::size_t a = 1; a < n_actions; ++a)
      if (policy_row[a] > policy_row[best]) best = a;
    return best;
  }
  const double u = rng.uniform();
  double cum = 0.0;
  for (std::size_t a = 0; a < n_actions; ++a) {
    cum += double(policy_row[a]);
    if (u < cum) return a;
  }
  return n_actions - 1;  // guard against rounding in the row sum
}

}  // namespace ba3c
