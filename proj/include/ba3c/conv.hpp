#pragma once

#include <cstddef>
#include <stdexcept>
#include <thread>
#include <vector>

#include "ba3c/tensor.hpp"

namespace ba3c {

enum class ConvImpl { NAIVE, OPTIMIZED };

inline const char* conv_impl_name(ConvImpl i) {
  return i == ConvImpl::NAIVE ? "naive" : "optimized";
}

namespace detail {

inline void check_conv_input(const ConvShape& s, const std::vector<std::size_t>& x_shape) {
  if (x_shape != s.input_shape()) throw std::invalid_argument("conv: input shape mismatch");
}
inline void check_conv_weights(const ConvShape& s, const std::vector<std::size_t>& w_shape) {
  if (w_shape != s.weight_shape()) throw std::invalid_argument("conv: weight shape mismatch");
}
inline void check_conv_grad_out(const ConvShape& s, const std::vector<std::size_t>& g_shape) {
  if (g_shape != s.output_shape()) throw std::invalid_argument("conv: grad_out shape mismatch");
}

/// C[M,N] += A[M,K] * B[K,N], all row-major. Accumulates in double so the
/// reduction keeps full precision even for float inputs.
template <typename T>
void gemm_acc(const T* A, const T* B, double* C, std::size_t M, std::size_t N, std::size_t K) {
  constexpr std::size_t KB = 256;  // K panel kept hot in L1/L2
  for (std::size_t k0 = 0; k0 < K; k0 += KB) {
    const std::size_t k1 = std::min(K, k0 + KB);
    for (std::size_t i = 0; i < M; ++i) {
      double* c_row = C + i * N;
      for (std::size_t k = k0; k < k1; ++k) {
        const double a = A[i * K + k];
        const T* b_row = B + k * N;
        for (std::size_t j = 0; j < N; ++j) c_row[j] += a * double(b_row[j]);
      }
    }
  }
}

/// C[K,N] += A^T * B where A is [M,K], B is [M,N], all row-major; double
/// accumulation as above.
template <typename T>
void gemm_at_b_acc(const T* A, const T* B, double* C, std::size_t M, std::size_t N,
                   std::size_t K) {
  for (std::size_t m = 0; m < M; ++m) {
    const T* a_row = A + m * K;
    const T* b_row = B + m * N;
    for (std::size_t k = 0; k < K; ++k) {
      const double a = a_row[k];
      double* c_row = C + k * N;
      for (std::size_t j = 0; j < N; ++j) c_row[j] += a * double(b_row[j]);
    }
  }
}

/// Unfold one NHWC sample into patch rows: col[(i*OW+j), (u*KW+v)*C+c].
template <typename T>
void im2col(const T* x, const ConvShape& s, T* col) {
  const std::size_t OH = s.out_h(), OW = s.out_w();
  const std::size_t C = s.in_c, W = s.in_w;
  std::size_t row = 0;
  for (std::size_t i = 0; i < OH; ++i) {
    for (std::size_t j = 0; j < OW; ++j, ++row) {
      T* dst = col + row * (s.k_h * s.k_w * C);
      for (std::size_t u = 0; u < s.k_h; ++u) {
        const T* src = x + ((i * s.stride + u) * W + j * s.stride) * C;
        // k_w*C contiguous scalars per kernel row
        for (std::size_t t = 0; t < s.k_w * C; ++t) dst[t] = src[t];
        dst += s.k_w * C;
      }
    }
  }
}

/// Scatter-add of patch rows back into one NHWC sample (inverse of im2col).
template <typename T>
void col2im_acc(const T* col, const ConvShape& s, T* x) {
  const std::size_t OH = s.out_h(), OW = s.out_w();
  const std::size_t C = s.in_c, W = s.in_w;
  std::size_t row = 0;
  for (std::size_t i = 0; i < OH; ++i) {
    for (std::size_t j = 0; j < OW; ++j, ++row) {
      const T* src = col + row * (s.k_h * s.k_w * C);
      for (std::size_t u = 0; u < s.k_h; ++u) {
        T* dst = x + ((i * s.stride + u) * W + j * s.stride) * C;
        for (std::size_t t = 0; t < s.k_w * C; ++t) dst[t] += src[t];
        src += s.k_w * C;
      }
    }
  }
}

/// Reorder weights [O,C,Kh,Kw] -> [Kh*Kw*C, O] to match im2col column order.
template <typename T>
std::vector<T> weights_to_col_major(const Tensor<T>& w, const ConvShape& s) {
  std::vector<T> wt(w.size());
  for (std::size_t o = 0; o < s.out_c; ++o)
    for (std::size_t c = 0; c < s.in_c; ++c)
      for (std::size_t u = 0; u < s.k_h; ++u)
        for (std::size_t v = 0; v < s.k_w; ++v) {
          const std::size_t k = (u * s.k_w + v) * s.in_c + c;
          wt[k * s.out_c + o] = w[((o * s.in_c + c) * s.k_h + u) * s.k_w + v];
        }
  return wt;
}

inline std::size_t conv_worker_count(std::size_t batch) {
  const std::size_t hw = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  return std::min(hw, batch);
}

template <typename F>
void parallel_over_batch(std::size_t batch, F body) {
  const std::size_t workers = conv_worker_count(batch);
  if (workers <= 1) {
    body(0, batch);
    return;
  }
  std::vector<std::thread> threads;
  threads.reserve(workers);
  const std::size_t chunk = (batch + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = w * chunk, hi = std::min(batch, lo + chunk);
    if (lo >= hi) break;
    threads.emplace_back(body, lo, hi);
  }
  for (auto& t : threads) t.join();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Naive direct kernels: the plain nested-loop definition, no staging.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv_forward_naive(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                             const ConvShape& s) {
  detail::check_conv_input(s, x.shape());
  detail::check_conv_weights(s, w.shape());
  Tensor<T> y(s.output_shape(), Layout::NHWC);
  const std::size_t OH = s.out_h(), OW = s.out_w();
  for (std::size_t n = 0; n < s.batch; ++n)
    for (std::size_t i = 0; i < OH; ++i)
      for (std::size_t j = 0; j < OW; ++j)
        for (std::size_t o = 0; o < s.out_c; ++o) {
          double acc = double(bias[o]);
          for (std::size_t c = 0; c < s.in_c; ++c)
            for (std::size_t u = 0; u < s.k_h; ++u)
              for (std::size_t v = 0; v < s.k_w; ++v)
                acc += double(x.at4(n, i * s.stride + u, j * s.stride + v, c)) *
                       double(w[((o * s.in_c + c) * s.k_h + u) * s.k_w + v]);
          y.at4(n, i, j, o) = T(acc);
        }
  return y;
}

template <typename T>
Tensor<T> conv_backward_data_naive(const Tensor<T>& grad_out, const Tensor<T>& w,
                                   const ConvShape& s) {
  detail::check_conv_grad_out(s, grad_out.shape());
  detail::check_conv_weights(s, w.shape());
  Tensor<T> gx(s.input_shape(), Layout::NHWC);
  Tensor<double> gacc(s.input_shape(), Layout::NHWC);
  const std::size_t OH = s.out_h(), OW = s.out_w();
  for (std::size_t n = 0; n < s.batch; ++n)
    for (std::size_t i = 0; i < OH; ++i)
      for (std::size_t j = 0; j < OW; ++j)
        for (std::size_t o = 0; o < s.out_c; ++o) {
          const double g = double(grad_out.at4(n, i, j, o));
          for (std::size_t c = 0; c < s.in_c; ++c)
            for (std::size_t u = 0; u < s.k_h; ++u)
              for (std::size_t v = 0; v < s.k_w; ++v)
                gacc.at4(n, i * s.stride + u, j * s.stride + v, c) +=
                    g * double(w[((o * s.in_c + c) * s.k_h + u) * s.k_w + v]);
        }
  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = T(gacc[i]);
  return gx;
}

template <typename T>
Tensor<T> conv_backward_filter_naive(const Tensor<T>& x, const Tensor<T>& grad_out,
                                     const ConvShape& s) {
  detail::check_conv_input(s, x.shape());
  detail::check_conv_grad_out(s, grad_out.shape());
  Tensor<T> gw(s.weight_shape(), Layout::FLAT);
  const std::size_t OH = s.out_h(), OW = s.out_w();
  for (std::size_t o = 0; o < s.out_c; ++o)
    for (std::size_t c = 0; c < s.in_c; ++c)
      for (std::size_t u = 0; u < s.k_h; ++u)
        for (std::size_t v = 0; v < s.k_w; ++v) {
          double acc = 0.0;
          for (std::size_t n = 0; n < s.batch; ++n)
            for (std::size_t i = 0; i < OH; ++i)
              for (std::size_t j = 0; j < OW; ++j)
                acc += double(x.at4(n, i * s.stride + u, j * s.stride + v, c)) *
                       double(grad_out.at4(n, i, j, o));
          gw[((o * s.in_c + c) * s.k_h + u) * s.k_w + v] = T(acc);
        }
  return gw;
}

// ---------------------------------------------------------------------------
// Optimized kernels: im2col staging + blocked GEMM, data-parallel over batch.
// Accept and produce NHWC; any staging layout is private scratch.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv_forward_optimized(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                                 const ConvShape& s) {
  detail::check_conv_input(s, x.shape());
  detail::check_conv_weights(s, w.shape());
  Tensor<T> y(s.output_shape(), Layout::NHWC);
  const std::size_t M = s.out_h() * s.out_w();
  const std::size_t K = s.k_h * s.k_w * s.in_c;
  const std::size_t in_stride = s.in_h * s.in_w * s.in_c;
  const std::size_t out_stride = M * s.out_c;
  const std::vector<T> wt = detail::weights_to_col_major(w, s);

  detail::parallel_over_batch(s.batch, [&](std::size_t lo, std::size_t hi) {
    std::vector<T> col(M * K);
    std::vector<double> acc(M * s.out_c);
    for (std::size_t n = lo; n < hi; ++n) {
      detail::im2col(x.data() + n * in_stride, s, col.data());
      for (std::size_t m = 0; m < M; ++m)
        for (std::size_t o = 0; o < s.out_c; ++o) acc[m * s.out_c + o] = double(bias[o]);
      detail::gemm_acc(col.data(), wt.data(), acc.data(), M, s.out_c, K);
      T* out = y.data() + n * out_stride;
      for (std::size_t i = 0; i < acc.size(); ++i) out[i] = T(acc[i]);
    }
  });
  return y;
}

template <typename T>
Tensor<T> conv_backward_data_optimized(const Tensor<T>& grad_out, const Tensor<T>& w,
                                       const ConvShape& s) {
  detail::check_conv_grad_out(s, grad_out.shape());
  detail::check_conv_weights(s, w.shape());
  Tensor<T> gx(s.input_shape(), Layout::NHWC);
  const std::size_t M = s.out_h() * s.out_w();
  const std::size_t K = s.k_h * s.k_w * s.in_c;
  const std::size_t in_stride = s.in_h * s.in_w * s.in_c;
  const std::size_t out_stride = M * s.out_c;
  // W as [O, K] row-major in im2col column order: dcol = G * W
  std::vector<T> wmat(w.size());
  for (std::size_t o = 0; o < s.out_c; ++o)
    for (std::size_t c = 0; c < s.in_c; ++c)
      for (std::size_t u = 0; u < s.k_h; ++u)
        for (std::size_t v = 0; v < s.k_w; ++v)
          wmat[o * K + (u * s.k_w + v) * s.in_c + c] =
              w[((o * s.in_c + c) * s.k_h + u) * s.k_w + v];

  detail::parallel_over_batch(s.batch, [&](std::size_t lo, std::size_t hi) {
    std::vector<double> dcol(M * K);
    std::vector<double> gacc(in_stride);
    for (std::size_t n = lo; n < hi; ++n) {
      std::fill(dcol.begin(), dcol.end(), 0.0);
      detail::gemm_acc(grad_out.data() + n * out_stride, wmat.data(), dcol.data(), M, K,
                       s.out_c);
      std::fill(gacc.begin(), gacc.end(), 0.0);
      detail::col2im_acc(dcol.data(), s, gacc.data());
      T* out = gx.data() + n * in_stride;
      for (std::size_t i = 0; i < in_stride; ++i) out[i] = T(gacc[i]);
    }
  });
  return gx;
}

template <typename T>
Tensor<T> conv_backward_filter_optimized(const Tensor<T>& x, const Tensor<T>& grad_out,
                                         const ConvShape& s) {
  detail::check_conv_input(s, x.shape());
  detail::check_conv_grad_out(s, grad_out.shape());
  const std::size_t M = s.out_h() * s.out_w();
  const std::size_t K = s.k_h * s.k_w * s.in_c;
  const std::size_t in_stride = s.in_h * s.in_w * s.in_c;
  const std::size_t out_stride = M * s.out_c;

  const std::size_t workers = detail::conv_worker_count(s.batch);
  std::vector<std::vector<double>> partials(workers, std::vector<double>(K * s.out_c, 0.0));
  std::vector<std::thread> threads;
  const std::size_t chunk = (s.batch + workers - 1) / workers;
  auto body = [&](std::size_t widx, std::size_t lo, std::size_t hi) {
    std::vector<T> col(M * K);
    double* acc = partials[widx].data();
    for (std::size_t n = lo; n < hi; ++n) {
      detail::im2col(x.data() + n * in_stride, s, col.data());
      // acc[K, O] += col^T * grad_out_n
      detail::gemm_at_b_acc(col.data(), grad_out.data() + n * out_stride, acc, M, s.out_c, K);
    }
  };
  if (workers <= 1) {
    body(0, 0, s.batch);
  } else {
    for (std::size_t wdx = 0; wdx < workers; ++wdx) {
      const std::size_t lo = wdx * chunk, hi = std::min(s.batch, lo + chunk);
      if (lo >= hi) break;
      threads.emplace_back(body, wdx, lo, hi);
    }
    for (auto& t : threads) t.join();
    for (std::size_t wdx = 1; wdx < partials.size(); ++wdx)
      for (std::size_t i = 0; i < partials[0].size(); ++i) partials[0][i] += partials[wdx][i];
  }

  // reorder [K, O] scratch back to [O, C, Kh, Kw]
  Tensor<T> gw(s.weight_shape(), Layout::FLAT);
  const double* acc = partials[0].data();
  for (std::size_t o = 0; o < s.out_c; ++o)
    for (std::size_t c = 0; c < s.in_c; ++c)
      for (std::size_t u = 0; u < s.k_h; ++u)
        for (std::size_t v = 0; v < s.k_w; ++v)
          gw[((o * s.in_c + c) * s.k_h + u) * s.k_w + v] =
              T(acc[((u * s.k_w + v) * s.in_c + c) * s.out_c + o]);
  return gw;
}

// Dispatch on the implementation selector.

template <typename T>
Tensor<T> conv_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                       const ConvShape& s, ConvImpl impl) {
  return impl == ConvImpl::NAIVE ? conv_forward_naive(x, w, bias, s)
                                 : conv_forward_optimized(x, w, bias, s);
}

template <typename T>
Tensor<T> conv_backward_data(const Tensor<T>& grad_out, const Tensor<T>& w, const ConvShape& s,
                             ConvImpl impl) {
  return impl == ConvImpl::NAIVE ? conv_backward_data_naive(grad_out, w, s)
                                 : conv_backward_data_optimized(grad_out, w, s);
}

template <typename T>
Tensor<T> conv_backward_filter(const Tensor<T>& x, const Tensor<T>& grad_out,
                               const ConvShape& s, ConvImpl impl) {
  return impl == ConvImpl::NAIVE ? conv_backward_filter_naive(x, grad_out, s)
                                 : conv_backward_filter_optimized(x, grad_out, s);
}

/// Bias gradient shared by both paths: sum of grad_out over batch and space.
template <typename T>
Tensor<T> conv_backward_bias(const Tensor<T>& grad_out, const ConvShape& s) {
  detail::check_conv_grad_out(s, grad_out.shape());
  Tensor<T> gb({s.out_c}, Layout::FLAT);
  const T* g = grad_out.data();
  const std::size_t positions = s.batch * s.out_h() * s.out_w();
  for (std::size_t p = 0; p < positions; ++p)
    for (std::size_t o = 0; o < s.out_c; ++o) gb[o] += g[p * s.out_c + o];
  return gb;
}

}  // namespace ba3c
