#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ba3c/checkpoint.hpp"
#include "ba3c/conv.hpp"
#include "ba3c/rng.hpp"
#include "ba3c/tensor.hpp"

namespace ba3c {

// ---------------------------------------------------------------------------
// Architecture description
// ---------------------------------------------------------------------------

struct LayerSpec {
  enum class Kind { CONV, RELU, MAXPOOL2, FLATTEN, DENSE };
  Kind kind = Kind::RELU;
  std::string name;  // parameterized layers only
  // CONV
  std::size_t k_h = 0, k_w = 0, out_c = 0;
  // DENSE
  std::size_t units = 0;
};

/// Trunk layers followed by a softmax policy head and a scalar value head.
struct NetworkArch {
  std::size_t in_h = 0, in_w = 0, in_c = 0;
  std::size_t n_actions = 0;
  std::vector<LayerSpec> trunk;

  nlohmann::json to_json() const;
  static NetworkArch from_json(const nlohmann::json& j);
};

inline LayerSpec conv_spec(std::string name, std::size_t k, std::size_t out_c) {
  LayerSpec s;
  s.kind = LayerSpec::Kind::CONV;
  s.name = std::move(name);
  s.k_h = s.k_w = k;
  s.out_c = out_c;
  return s;
}
inline LayerSpec relu_spec() { return LayerSpec{}; }
inline LayerSpec pool_spec() {
  LayerSpec s;
  s.kind = LayerSpec::Kind::MAXPOOL2;
  return s;
}
inline LayerSpec flatten_spec() {
  LayerSpec s;
  s.kind = LayerSpec::Kind::FLATTEN;
  return s;
}
inline LayerSpec dense_spec(std::string name, std::size_t units) {
  LayerSpec s;
  s.kind = LayerSpec::Kind::DENSE;
  s.name = std::move(name);
  s.units = units;
  return s;
}

/// Default network: spatial chain 84/80/40/36/18/14/7/5 with channel
/// counts 16/32/32/64/64 and a 512-wide dense trunk.
inline NetworkArch make_paper_arch(std::size_t in_h, std::size_t in_w, std::size_t in_c,
                                   std::size_t n_actions) {
  NetworkArch a{in_h, in_w, in_c, n_actions, {}};
  a.trunk = {conv_spec("conv1", 5, 32), relu_spec(), pool_spec(),
             conv_spec("conv2", 5, 32), relu_spec(), pool_spec(),
             conv_spec("conv3", 5, 64), relu_spec(), pool_spec(),
             conv_spec("conv4", 3, 64), relu_spec(),
             flatten_spec(),
             dense_spec("dense1", 512), relu_spec()};
  return a;
}

/// Small trunk for the built-in toy environments (24x24 class inputs).
inline NetworkArch make_toy_arch(std::size_t in_h, std::size_t in_w, std::size_t in_c,
                                 std::size_t n_actions) {
  NetworkArch a{in_h, in_w, in_c, n_actions, {}};
  a.trunk = {conv_spec("conv1", 5, 8), relu_spec(), pool_spec(),
             conv_spec("conv2", 3, 16), relu_spec(), pool_spec(),
             flatten_spec(),
             dense_spec("dense1", 64), relu_spec()};
  return a;
}

inline NetworkArch make_arch(const std::string& preset, std::size_t in_h, std::size_t in_w,
                             std::size_t in_c, std::size_t n_actions) {
  if (preset == "paper") return make_paper_arch(in_h, in_w, in_c, n_actions);
  if (preset == "toy") return make_toy_arch(in_h, in_w, in_c, n_actions);
  throw std::invalid_argument("unknown net preset: " + preset);
}

inline nlohmann::json NetworkArch::to_json() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : trunk) {
    nlohmann::json e;
    switch (l.kind) {
      case LayerSpec::Kind::CONV:
        e = {{"type", "conv"}, {"name", l.name}, {"kernel", l.k_h}, {"out_channels", l.out_c}};
        break;
      case LayerSpec::Kind::RELU: e = {{"type", "relu"}}; break;
      case LayerSpec::Kind::MAXPOOL2: e = {{"type", "maxpool2"}}; break;
      case LayerSpec::Kind::FLATTEN: e = {{"type", "flatten"}}; break;
      case LayerSpec::Kind::DENSE:
        e = {{"type", "dense"}, {"name", l.name}, {"units", l.units}};
        break;
    }
    layers.push_back(e);
  }
  return {{"input", {{"h", in_h}, {"w", in_w}, {"c", in_c}}},
          {"n_actions", n_actions},
          {"trunk", layers}};
}

inline NetworkArch NetworkArch::from_json(const nlohmann::json& j) {
  NetworkArch a;
  a.in_h = j.at("input").at("h").get<std::size_t>();
  a.in_w = j.at("input").at("w").get<std::size_t>();
  a.in_c = j.at("input").at("c").get<std::size_t>();
  a.n_actions = j.at("n_actions").get<std::size_t>();
  for (const auto& e : j.at("trunk")) {
    const std::string type = e.at("type").get<std::string>();
    if (type == "conv") {
      a.trunk.push_back(conv_spec(e.at("name").get<std::string>(),
                                  e.at("kernel").get<std::size_t>(),
                                  e.at("out_channels").get<std::size_t>()));
    } else if (type == "relu") {
      a.trunk.push_back(relu_spec());
    } else if (type == "maxpool2") {
      a.trunk.push_back(pool_spec());
    } else if (type == "flatten") {
      a.trunk.push_back(flatten_spec());
    } else if (type == "dense") {
      a.trunk.push_back(dense_spec(e.at("name").get<std::string>(),
                                   e.at("units").get<std::size_t>()));
    } else {
      throw std::invalid_argument("unknown layer type: " + type);
    }
  }
  return a;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Named, ordered weight tensors plus a monotonically increasing version
/// counter bumped once per applied optimizer step.
template <typename T>
struct ModelParams {
  std::vector<std::string> order;
  std::map<std::string, Tensor<T>> tensors;
  std::uint64_t version = 0;

  Tensor<T>& at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::runtime_error("uninitialized parameter: " + name);
    return it->second;
  }
  const Tensor<T>& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::runtime_error("uninitialized parameter: " + name);
    return it->second;
  }

  void add(const std::string& name, Tensor<T> t) {
    if (tensors.count(name)) throw std::runtime_error("duplicate parameter: " + name);
    order.push_back(name);
    tensors.emplace(name, std::move(t));
  }

  std::vector<CheckpointRecord> to_records(const std::string& prefix = "") const {
    std::vector<CheckpointRecord> recs;
    for (const auto& n : order) recs.push_back(CheckpointRecord::from_tensor(prefix + n, at(n)));
    return recs;
  }
};

template <typename T>
using GradMap = std::map<std::string, Tensor<T>>;

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

/// Per-call activation cache; forward with a null cache is pure inference
/// and safe to run concurrently on a shared parameter snapshot.
template <typename T>
struct ForwardCache {
  std::vector<Tensor<T>> inputs;             // input of each trunk layer
  std::vector<std::vector<std::uint32_t>> pool_argmax;
  Tensor<T> trunk_out;                       // [B, hidden]
  Tensor<T> policy;                          // [B, n_actions]
};

template <typename T>
struct NetOutput {
  Tensor<T> policy;  // [B, n_actions], rows sum to 1
  Tensor<T> value;   // [B]
};

namespace detail {

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = y[i] > T(0) ? y[i] : T(0);
  return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& gy, const Tensor<T>& x) {
  Tensor<T> gx = gy;
  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = x[i] > T(0) ? gx[i] : T(0);
  return gx;
}

/// 2x2 stride-2 max pooling on NHWC; records flat argmax for backward.
template <typename T>
Tensor<T> maxpool2_forward(const Tensor<T>& x, std::vector<std::uint32_t>* argmax) {
  if (x.rank() != 4 || x.layout() != Layout::NHWC)
    throw std::invalid_argument("maxpool2: NHWC rank-4 input required");
  const std::size_t N = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  if (H < 2 || W < 2) throw std::invalid_argument("maxpool2: input too small");
  const std::size_t OH = H / 2, OW = W / 2;
  Tensor<T> y({N, OH, OW, C}, Layout::NHWC);
  if (argmax) argmax->assign(y.size(), 0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < OH; ++i)
      for (std::size_t j = 0; j < OW; ++j)
        for (std::size_t c = 0; c < C; ++c) {
          std::size_t best = x.offset4(n, 2 * i, 2 * j, c);
          T best_v = x[best];
          for (std::size_t u = 0; u < 2; ++u)
            for (std::size_t v = 0; v < 2; ++v) {
              const std::size_t idx = x.offset4(n, 2 * i + u, 2 * j + v, c);
              if (x[idx] > best_v) {  // first max wins ties
                best_v = x[idx];
                best = idx;
              }
            }
          const std::size_t o = y.offset4(n, i, j, c);
          y[o] = best_v;
          if (argmax) (*argmax)[o] = std::uint32_t(best);
        }
  return y;
}

template <typename T>
Tensor<T> maxpool2_backward(const Tensor<T>& gy, const std::vector<std::uint32_t>& argmax,
                            const std::vector<std::size_t>& in_shape) {
  Tensor<T> gx(in_shape, Layout::NHWC);
  for (std::size_t i = 0; i < gy.size(); ++i) gx[argmax[i]] += gy[i];
  return gx;
}

template <typename T>
Tensor<T> flatten_forward(const Tensor<T>& x) {
  Tensor<T> y({x.dim(0), x.size() / x.dim(0)}, Layout::FLAT);
  std::copy(x.data(), x.data() + x.size(), y.data());
  return y;
}

/// y = x * w^T + b with x [B,In], w [Out,In], b [Out].
template <typename T>
Tensor<T> dense_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  const std::size_t B = x.dim(0), In = x.dim(1), Out = w.dim(0);
  if (w.dim(1) != In) throw std::invalid_argument("dense: weight shape mismatch");
  Tensor<T> y({B, Out}, Layout::FLAT);
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t o = 0; o < Out; ++o) y[i * Out + o] = b[o];
    for (std::size_t k = 0; k < In; ++k) {
      const T xv = x[i * In + k];
      if (xv == T(0)) continue;
      const T* wrow = w.data() + k;  // strided column of w
      for (std::size_t o = 0; o < Out; ++o) y[i * Out + o] += xv * wrow[o * In];
    }
  }
  return y;
}

template <typename T>
void dense_backward(const Tensor<T>& gy, const Tensor<T>& x, const Tensor<T>& w,
                    Tensor<T>& gw, Tensor<T>& gb, Tensor<T>* gx) {
  const std::size_t B = x.dim(0), In = x.dim(1), Out = w.dim(0);
  for (std::size_t i = 0; i < B; ++i) {
    const T* gyr = gy.data() + i * Out;
    const T* xr = x.data() + i * In;
    for (std::size_t o = 0; o < Out; ++o) {
      const T g = gyr[o];
      gb[o] += g;
      if (g == T(0)) continue;
      T* gwr = gw.data() + o * In;
      for (std::size_t k = 0; k < In; ++k) gwr[k] += g * xr[k];
    }
    if (gx) {
      T* gxr = gx->data() + i * In;
      for (std::size_t o = 0; o < Out; ++o) {
        const T g = gyr[o];
        if (g == T(0)) continue;
        const T* wr = w.data() + o * In;
        for (std::size_t k = 0; k < In; ++k) gxr[k] += g * wr[k];
      }
    }
  }
}

/// Row-wise stabilized softmax on [B, A].
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  const std::size_t B = logits.dim(0), A = logits.dim(1);
  Tensor<T> p = logits;
  for (std::size_t i = 0; i < B; ++i) {
    T* row = p.data() + i * A;
    T mx = row[0];
    for (std::size_t a = 1; a < A; ++a) mx = std::max(mx, row[a]);
    T sum = T(0);
    for (std::size_t a = 0; a < A; ++a) {
      row[a] = std::exp(row[a] - mx);
      sum += row[a];
    }
    for (std::size_t a = 0; a < A; ++a) row[a] /= sum;
  }
  return p;
}

inline ConvShape conv_shape_at(const LayerSpec& l, std::size_t batch, std::size_t h,
                               std::size_t w, std::size_t c) {
  ConvShape s;
  s.batch = batch;
  s.in_h = h;
  s.in_w = w;
  s.in_c = c;
  s.out_c = l.out_c;
  s.k_h = l.k_h;
  s.k_w = l.k_w;
  s.stride = 1;
  return s;
}

}  // namespace detail

/// Walks the trunk geometry; returns the flattened trunk-output width and
/// checks that all layer shapes chain.
inline std::size_t trunk_output_width(const NetworkArch& a) {
  std::size_t h = a.in_h, w = a.in_w, c = a.in_c;
  bool flat = false;
  std::size_t width = 0;
  for (const auto& l : a.trunk) {
    switch (l.kind) {
      case LayerSpec::Kind::CONV: {
        if (flat) throw std::invalid_argument("arch: conv after flatten");
        if (l.k_h > h || l.k_w > w) throw std::invalid_argument("arch: kernel exceeds input");
        h = h - l.k_h + 1;
        w = w - l.k_w + 1;
        c = l.out_c;
        break;
      }
      case LayerSpec::Kind::MAXPOOL2:
        if (flat || h < 2 || w < 2) throw std::invalid_argument("arch: bad pool placement");
        h /= 2;
        w /= 2;
        break;
      case LayerSpec::Kind::FLATTEN:
        flat = true;
        width = h * w * c;
        break;
      case LayerSpec::Kind::DENSE:
        if (!flat) throw std::invalid_argument("arch: dense before flatten");
        width = l.units;
        break;
      case LayerSpec::Kind::RELU: break;
    }
  }
  if (!flat) throw std::invalid_argument("arch: trunk must end flattened");
  return width;
}

template <typename T>
ModelParams<T> init_params(const NetworkArch& a, Rng& rng) {
  ModelParams<T> p;
  std::size_t h = a.in_h, w = a.in_w, c = a.in_c;
  std::size_t width = 0;
  bool flat = false;
  auto glorot = [&rng](Tensor<T>& t, std::size_t fan_in, std::size_t fan_out) {
    const double bound = std::sqrt(6.0 / double(fan_in + fan_out));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = T(rng.uniform(-bound, bound));
  };
  for (const auto& l : a.trunk) {
    switch (l.kind) {
      case LayerSpec::Kind::CONV: {
        Tensor<T> wt({l.out_c, c, l.k_h, l.k_w}, Layout::FLAT);
        glorot(wt, c * l.k_h * l.k_w, l.out_c * l.k_h * l.k_w);
        p.add(l.name + ".w", std::move(wt));
        p.add(l.name + ".b", Tensor<T>({l.out_c}, Layout::FLAT));
        h = h - l.k_h + 1;
        w = w - l.k_w + 1;
        c = l.out_c;
        break;
      }
      case LayerSpec::Kind::MAXPOOL2:
        h /= 2;
        w /= 2;
        break;
      case LayerSpec::Kind::FLATTEN:
        flat = true;
        width = h * w * c;
        break;
      case LayerSpec::Kind::DENSE: {
        Tensor<T> wt({l.units, width}, Layout::FLAT);
        glorot(wt, width, l.units);
        p.add(l.name + ".w", std::move(wt));
        p.add(l.name + ".b", Tensor<T>({l.units}, Layout::FLAT));
        width = l.units;
        break;
      }
      case LayerSpec::Kind::RELU: break;
    }
  }
  (void)flat;
  Tensor<T> pw({a.n_actions, width}, Layout::FLAT);
  glorot(pw, width, a.n_actions);
  p.add("policy.w", std::move(pw));
  p.add("policy.b", Tensor<T>({a.n_actions}, Layout::FLAT));
  Tensor<T> vw({1, width}, Layout::FLAT);
  glorot(vw, width, 1);
  p.add("value.w", std::move(vw));
  p.add("value.b", Tensor<T>({1}, Layout::FLAT));
  return p;
}

template <typename T>
NetOutput<T> network_forward(const NetworkArch& a, const ModelParams<T>& params,
                             const Tensor<T>& x_batch, ConvImpl impl = ConvImpl::OPTIMIZED,
                             ForwardCache<T>* cache = nullptr) {
  if (x_batch.rank() != 4 || x_batch.layout() != Layout::NHWC)
    throw std::invalid_argument("network_forward: NHWC batch required");
  if (x_batch.dim(1) != a.in_h || x_batch.dim(2) != a.in_w || x_batch.dim(3) != a.in_c)
    throw std::invalid_argument("network_forward: input shape mismatch");
  const std::size_t B = x_batch.dim(0);
  Tensor<T> cur = x_batch;
  if (cache) {
    cache->inputs.clear();
    cache->pool_argmax.clear();
  }
  for (const auto& l : a.trunk) {
    if (cache) cache->inputs.push_back(cur);
    switch (l.kind) {
      case LayerSpec::Kind::CONV: {
        const auto s = detail::conv_shape_at(l, B, cur.dim(1), cur.dim(2), cur.dim(3));
        cur = conv_forward(cur, params.at(l.name + ".w"), params.at(l.name + ".b"), s, impl);
        break;
      }
      case LayerSpec::Kind::RELU:
        cur = detail::relu_forward(cur);
        break;
      case LayerSpec::Kind::MAXPOOL2: {
        std::vector<std::uint32_t> am;
        cur = detail::maxpool2_forward(cur, cache ? &am : nullptr);
        if (cache) cache->pool_argmax.push_back(std::move(am));
        break;
      }
      case LayerSpec::Kind::FLATTEN:
        cur = detail::flatten_forward(cur);
        break;
      case LayerSpec::Kind::DENSE:
        cur = detail::dense_forward(cur, params.at(l.name + ".w"), params.at(l.name + ".b"));
        break;
    }
  }
  NetOutput<T> out;
  const Tensor<T> logits =
      detail::dense_forward(cur, params.at("policy.w"), params.at("policy.b"));
  out.policy = detail::softmax_rows(logits);
  const Tensor<T> v = detail::dense_forward(cur, params.at("value.w"), params.at("value.b"));
  out.value = Tensor<T>({B}, Layout::FLAT);
  for (std::size_t i = 0; i < B; ++i) out.value[i] = v[i];
  if (cache) {
    cache->trunk_out = cur;
    cache->policy = out.policy;
  }
  return out;
}

/// Backpropagates head gradients through the whole network, accumulating
/// parameter gradients into `grads`. dlogits is the gradient at the policy
/// logits (softmax already folded in by the caller); dvalue at the value
/// scalar. Gradient w.r.t. the network input is never needed, so the first
/// conv layer skips its backward-data pass.
template <typename T>
void network_backward(const NetworkArch& a, const ModelParams<T>& params,
                      const ForwardCache<T>& cache, const Tensor<T>& dlogits,
                      const Tensor<T>& dvalue, GradMap<T>& grads,
                      ConvImpl impl = ConvImpl::OPTIMIZED) {
  const std::size_t B = dlogits.dim(0);
  auto grad_of = [&grads, &params](const std::string& name) -> Tensor<T>& {
    auto it = grads.find(name);
    if (it == grads.end()) {
      it = grads.emplace(name, Tensor<T>(params.at(name).shape(), Layout::FLAT)).first;
    }
    return it->second;
  };

  // heads
  const std::size_t hidden = cache.trunk_out.dim(1);
  Tensor<T> gtrunk({B, hidden}, Layout::FLAT);
  detail::dense_backward(dlogits, cache.trunk_out, params.at("policy.w"),
                         grad_of("policy.w"), grad_of("policy.b"), &gtrunk);
  Tensor<T> dv2({B, 1}, Layout::FLAT);
  for (std::size_t i = 0; i < B; ++i) dv2[i] = dvalue[i];
  {
    Tensor<T> gtrunk_v({B, hidden}, Layout::FLAT);
    detail::dense_backward(dv2, cache.trunk_out, params.at("value.w"), grad_of("value.w"),
                           grad_of("value.b"), &gtrunk_v);
    for (std::size_t i = 0; i < gtrunk.size(); ++i) gtrunk[i] += gtrunk_v[i];
  }

  // trunk, reverse order
  Tensor<T> g = gtrunk;
  std::size_t pool_i = cache.pool_argmax.size();
  bool first_conv_seen = false;
  // find index of first conv to skip its input gradient
  std::size_t first_conv = a.trunk.size();
  for (std::size_t i = 0; i < a.trunk.size(); ++i) {
    if (a.trunk[i].kind == LayerSpec::Kind::CONV) {
      first_conv = i;
      break;
    }
  }
  for (std::size_t li = a.trunk.size(); li-- > 0;) {
    const auto& l = a.trunk[li];
    const Tensor<T>& x = cache.inputs[li];
    switch (l.kind) {
      case LayerSpec::Kind::CONV: {
        const auto s = detail::conv_shape_at(l, B, x.dim(1), x.dim(2), x.dim(3));
        Tensor<T>& gw = grad_of(l.name + ".w");
        const Tensor<T> gw_new = conv_backward_filter(x, g, s, impl);
        for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += gw_new[i];
        Tensor<T>& gb = grad_of(l.name + ".b");
        const Tensor<T> gb_new = conv_backward_bias(g, s);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gb_new[i];
        if (li != first_conv) {
          g = conv_backward_data(g, params.at(l.name + ".w"), s, impl);
        }
        first_conv_seen = true;
        break;
      }
      case LayerSpec::Kind::RELU:
        g = detail::relu_backward(g, x);
        break;
      case LayerSpec::Kind::MAXPOOL2:
        g = detail::maxpool2_backward(g, cache.pool_argmax[--pool_i], x.shape());
        break;
      case LayerSpec::Kind::FLATTEN: {
        Tensor<T> gx(x.shape(), Layout::NHWC);
        std::copy(g.data(), g.data() + g.size(), gx.data());
        g = std::move(gx);
        break;
      }
      case LayerSpec::Kind::DENSE: {
        Tensor<T> gx({B, x.dim(1)}, Layout::FLAT);
        detail::dense_backward(g, x, params.at(l.name + ".w"), grad_of(l.name + ".w"),
                               grad_of(l.name + ".b"), &gx);
        g = std::move(gx);
        break;
      }
    }
  }
  (void)first_conv_seen;
}

}  // namespace ba3c
