#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace ba3c {

enum class Layout : std::uint8_t { NHWC, NCHW, FLAT };

inline const char* layout_name(Layout l) {
  switch (l) {
    case Layout::NHWC: return "NHWC";
    case Layout::NCHW: return "NCHW";
    case Layout::FLAT: return "FLAT";
  }
  return "?";
}

enum class Dtype : std::uint8_t { F32 = 0, F64 = 1 };

template <typename T>
struct dtype_of;
template <>
struct dtype_of<float> {
  static constexpr Dtype value = Dtype::F32;
};
template <>
struct dtype_of<double> {
  static constexpr Dtype value = Dtype::F64;
};

/// Dense numeric array, rank 1-4, contiguous row-major in the axis order
/// given by the layout tag. NHWC/NCHW are only valid at rank 4.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  Tensor(std::vector<std::size_t> shape, Layout layout, T fill = T(0))
      : shape_(std::move(shape)), layout_(layout) {
    validate_shape();
    data_.assign(element_count(), fill);
  }

  static Tensor flat(std::vector<std::size_t> shape, T fill = T(0)) {
    return Tensor(std::move(shape), Layout::FLAT, fill);
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  Layout layout() const { return layout_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  std::size_t dim(std::size_t i) const { return shape_.at(i); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& buffer() { return data_; }
  const std::vector<T>& buffer() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// Logical (n,h,w,c) access independent of the physical layout.
  /// The shape vector is in the layout's own axis order, so an NCHW tensor
  /// has shape [N,C,H,W].
  T& at4(std::size_t n, std::size_t h, std::size_t w, std::size_t c) {
    return data_[offset4(n, h, w, c)];
  }
  const T& at4(std::size_t n, std::size_t h, std::size_t w, std::size_t c) const {
    return data_[offset4(n, h, w, c)];
  }

  std::size_t offset4(std::size_t n, std::size_t h, std::size_t w, std::size_t c) const {
    if (layout_ == Layout::NHWC) {
      return ((n * shape_[1] + h) * shape_[2] + w) * shape_[3] + c;
    }
    // NCHW shape is [N,C,H,W]
    return ((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](T v) { return std::isfinite(static_cast<double>(v)); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.layout_ == b.layout_ && a.data_ == b.data_;
  }

 private:
  void validate_shape() const {
    if (shape_.empty() || shape_.size() > 4) {
      throw std::invalid_argument("tensor rank must be 1..4");
    }
    for (std::size_t e : shape_) {
      if (e == 0) throw std::invalid_argument("tensor extents must be >= 1");
    }
    const bool image = layout_ == Layout::NHWC || layout_ == Layout::NCHW;
    if (image && shape_.size() != 4) {
      throw std::invalid_argument("NHWC/NCHW layouts require rank 4");
    }
    if (!image && shape_.size() == 4) {
      // rank-4 FLAT is allowed for weight tensors [O,C,Kh,Kw]
    }
  }

  std::size_t element_count() const {
    return std::accumulate(shape_.begin(), shape_.end(), std::size_t(1),
                           std::multiplies<>());
  }

  std::vector<std::size_t> shape_;
  Layout layout_ = Layout::FLAT;
  std::vector<T> data_;
};

/// Physical reorder between NHWC and NCHW. Logical (n,h,w,c) values are
/// preserved; converting back is a bitwise identity.
template <typename T>
Tensor<T> convert_layout(const Tensor<T>& t, Layout target) {
  if (t.rank() != 4) throw std::invalid_argument("convert_layout: rank-4 tensor required");
  if (t.layout() != Layout::NHWC && t.layout() != Layout::NCHW) {
    throw std::invalid_argument("convert_layout: source must be NHWC or NCHW");
  }
  if (target != Layout::NHWC && target != Layout::NCHW) {
    throw std::invalid_argument("convert_layout: target must be NHWC or NCHW");
  }
  if (target == t.layout()) {
    return t;  // bit-identical copy
  }
  const bool to_nchw = target == Layout::NCHW;
  // source shape is in its own axis order
  std::size_t N, H, W, C;
  if (t.layout() == Layout::NHWC) {
    N = t.dim(0), H = t.dim(1), W = t.dim(2), C = t.dim(3);
  } else {
    N = t.dim(0), C = t.dim(1), H = t.dim(2), W = t.dim(3);
  }
  std::vector<std::size_t> out_shape =
      to_nchw ? std::vector<std::size_t>{N, C, H, W} : std::vector<std::size_t>{N, H, W, C};
  Tensor<T> out(out_shape, target);
  if (to_nchw) {
    // NHWC -> NCHW: scan the source contiguously.
    const T* src = t.data();
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w)
          for (std::size_t c = 0; c < C; ++c)
            out.data()[((n * C + c) * H + h) * W + w] = *src++;
  } else {
    const T* src = t.data();
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t w = 0; w < W; ++w)
            out.data()[((n * H + h) * W + w) * C + c] = *src++;
  }
  return out;
}

template <typename T, typename F>
Tensor<T> tensor_map(F f, const Tensor<T>& x) {
  Tensor<T> out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(out[i]);
  return out;
}

/// y += a * x, in place on y.
template <typename T>
void tensor_axpy(T a, const Tensor<T>& x, Tensor<T>& y) {
  if (!x.same_shape(y)) throw std::invalid_argument("axpy: shape mismatch");
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

template <typename T>
T tensor_dot(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("dot: shape mismatch");
  T acc = T(0);
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

/// Valid-padding convolution geometry shared by all conv kernels.
struct ConvShape {
  std::size_t batch = 1;
  std::size_t in_h = 1, in_w = 1;
  std::size_t in_c = 1, out_c = 1;
  std::size_t k_h = 1, k_w = 1;
  std::size_t stride = 1;

  std::size_t out_h() const {
    check();
    return (in_h - k_h) / stride + 1;
  }
  std::size_t out_w() const { return (in_w - k_w) / stride + 1; }

  void check() const {
    if (stride == 0) throw std::invalid_argument("conv stride must be >= 1");
    if (k_h > in_h || k_w > in_w) {
      throw std::invalid_argument("conv kernel larger than input (VALID padding)");
    }
  }

  std::vector<std::size_t> input_shape() const { return {batch, in_h, in_w, in_c}; }
  std::vector<std::size_t> output_shape() const { return {batch, out_h(), out_w(), out_c}; }
  std::vector<std::size_t> weight_shape() const { return {out_c, in_c, k_h, k_w}; }
};

}  // namespace ba3c
