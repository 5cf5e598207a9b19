#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "ba3c/rng.hpp"
#include "ba3c/tensor.hpp"

// Test-only oracles, independent of the library kernels they check.

namespace testutil {

template <typename T>
void fill_random(ba3c::Tensor<T>& t, ba3c::Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = T(rng.uniform(lo, hi));
}

/// Direct 7-nested-loop convolution oracle (VALID padding, stride s),
/// written from the definition with purely logical indexing.
template <typename T>
ba3c::Tensor<T> oracle_conv_forward(const ba3c::Tensor<T>& x, const ba3c::Tensor<T>& w,
                                    const ba3c::Tensor<T>& bias, const ba3c::ConvShape& s) {
  ba3c::Tensor<T> y(s.output_shape(), ba3c::Layout::NHWC);
  for (std::size_t n = 0; n < s.batch; ++n)
    for (std::size_t i = 0; i < s.out_h(); ++i)
      for (std::size_t j = 0; j < s.out_w(); ++j)
        for (std::size_t o = 0; o < s.out_c; ++o) {
          double acc = double(bias[o]);
          for (std::size_t c = 0; c < s.in_c; ++c)
            for (std::size_t u = 0; u < s.k_h; ++u)
              for (std::size_t v = 0; v < s.k_w; ++v) {
                const std::size_t xi =
                    ((n * s.in_h + (i * s.stride + u)) * s.in_w + (j * s.stride + v)) * s.in_c + c;
                const std::size_t wi = ((o * s.in_c + c) * s.k_h + u) * s.k_w + v;
                acc += double(x[xi]) * double(w[wi]);
              }
          y[((n * s.out_h() + i) * s.out_w() + j) * s.out_c + o] = T(acc);
        }
  return y;
}

/// Direct-loop input-gradient oracle: scatter each output gradient through
/// the kernel definition, logical indexing only.
template <typename T>
ba3c::Tensor<T> oracle_conv_backward_data(const ba3c::Tensor<T>& gy, const ba3c::Tensor<T>& w,
                                          const ba3c::ConvShape& s) {
  ba3c::Tensor<double> acc(s.input_shape(), ba3c::Layout::NHWC);
  for (std::size_t n = 0; n < s.batch; ++n)
    for (std::size_t i = 0; i < s.out_h(); ++i)
      for (std::size_t j = 0; j < s.out_w(); ++j)
        for (std::size_t o = 0; o < s.out_c; ++o) {
          const double g = double(gy[((n * s.out_h() + i) * s.out_w() + j) * s.out_c + o]);
          for (std::size_t c = 0; c < s.in_c; ++c)
            for (std::size_t u = 0; u < s.k_h; ++u)
              for (std::size_t v = 0; v < s.k_w; ++v)
                acc[((n * s.in_h + (i * s.stride + u)) * s.in_w + (j * s.stride + v)) * s.in_c +
                    c] += g * double(w[((o * s.in_c + c) * s.k_h + u) * s.k_w + v]);
        }
  ba3c::Tensor<T> gx(s.input_shape(), ba3c::Layout::NHWC);
  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = T(acc[i]);
  return gx;
}

/// Direct-loop filter-gradient oracle.
template <typename T>
ba3c::Tensor<T> oracle_conv_backward_filter(const ba3c::Tensor<T>& x, const ba3c::Tensor<T>& gy,
                                            const ba3c::ConvShape& s) {
  ba3c::Tensor<T> gw(s.weight_shape(), ba3c::Layout::FLAT);
  for (std::size_t o = 0; o < s.out_c; ++o)
    for (std::size_t c = 0; c < s.in_c; ++c)
      for (std::size_t u = 0; u < s.k_h; ++u)
        for (std::size_t v = 0; v < s.k_w; ++v) {
          double acc = 0.0;
          for (std::size_t n = 0; n < s.batch; ++n)
            for (std::size_t i = 0; i < s.out_h(); ++i)
              for (std::size_t j = 0; j < s.out_w(); ++j)
                acc += double(x[((n * s.in_h + (i * s.stride + u)) * s.in_w +
                                 (j * s.stride + v)) * s.in_c + c]) *
                       double(gy[((n * s.out_h() + i) * s.out_w() + j) * s.out_c + o]);
          gw[((o * s.in_c + c) * s.k_h + u) * s.k_w + v] = T(acc);
        }
  return gw;
}

inline double rel_err(double got, double want) {
  const double denom = std::max(std::abs(want), 1e-8);
  return std::abs(got - want) / denom;
}

/// Relative error with a floor at 1% of the reference tensor's magnitude,
/// so exact cancellations near zero don't register as huge errors.
template <typename T>
double max_rel_err(const ba3c::Tensor<T>& got, const ba3c::Tensor<T>& want) {
  double scale = 0.0;
  for (std::size_t i = 0; i < want.size(); ++i)
    scale = std::max(scale, std::abs(double(want[i])));
  const double floor = std::max(0.01 * scale, 1e-8);
  double m = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    const double denom = std::max(std::abs(double(want[i])), floor);
    m = std::max(m, std::abs(double(got[i]) - double(want[i])) / denom);
  }
  return m;
}

/// Central finite differences of a scalar function of a flat parameter
/// vector: g_i ~= (f(p + h e_i) - f(p - h e_i)) / 2h.
inline std::vector<double> finite_diff(const std::function<double(const std::vector<double>&)>& f,
                                       std::vector<double> p, double h = 1e-5) {
  std::vector<double> g(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double orig = p[i];
    p[i] = orig + h;
    const double up = f(p);
    p[i] = orig - h;
    const double down = f(p);
    p[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

inline std::vector<char> read_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace testutil
