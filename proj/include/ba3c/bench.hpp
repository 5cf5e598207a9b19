#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ba3c/conv.hpp"
#include "ba3c/rng.hpp"
#include "ba3c/tensor.hpp"

namespace ba3c {

enum class BenchOp { FORWARD, BWD_DATA, BWD_FILTER, CONVERT };

inline const char* bench_op_name(BenchOp op) {
  switch (op) {
    case BenchOp::FORWARD: return "forward";
    case BenchOp::BWD_DATA: return "bwd_data";
    case BenchOp::BWD_FILTER: return "bwd_filter";
    case BenchOp::CONVERT: return "convert";
  }
  return "?";
}

struct BenchCase {
  ConvShape shape;
  BenchOp op = BenchOp::FORWARD;
  std::size_t repeats = 20;
  std::size_t warmup = 3;
  bool first_layer = false;  // input gradient undefined: BWD_DATA reported N/A

  void validate() const {
    if (repeats < 3) throw std::invalid_argument("bench: repeats must be >= 3");
  }
};

struct BenchRow {
  std::string op;
  std::string input_shape;
  std::string kernel_shape;
  std::string impl;
  double median_ms = 0.0, p10_ms = 0.0, p90_ms = 0.0;
  double speedup = 0.0;  // naive_median / this_impl_median
  bool not_applicable = false;
  std::string note;
};

namespace detail {

inline std::string shape_str(std::initializer_list<std::size_t> dims) {
  std::ostringstream os;
  bool first = true;
  for (std::size_t d : dims) {
    os << (first ? "" : "x") << d;
    first = false;
  }
  return os.str();
}

inline double percentile(std::vector<double> xs, double p) {
  std::sort(xs.begin(), xs.end());
  const double idx = p * double(xs.size() - 1);
  const std::size_t lo = std::size_t(idx);
  const std::size_t hi = std::min(lo + 1, xs.size() - 1);
  const double frac = idx - double(lo);
  return xs[lo] * (1.0 - frac) + xs[hi] * frac;
}

template <typename Fn>
std::vector<double> time_ms(Fn&& fn, std::size_t repeats, std::size_t warmup) {
  for (std::size_t i = 0; i < warmup; ++i) fn();
  std::vector<double> ms;
  ms.reserve(repeats);
  for (std::size_t i = 0; i < repeats; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return ms;
}

/// Correctness gate: never time a wrong kernel. Relative disagreement above
/// 1e-5 (with a floor against near-zero cancellation) aborts the benchmark.
template <typename T>
void gate(const Tensor<T>& naive, const Tensor<T>& optimized, const std::string& what) {
  if (naive.shape() != optimized.shape())
    throw std::runtime_error("bench gate: shape mismatch in " + what);
  double scale = 0.0;
  for (std::size_t i = 0; i < naive.size(); ++i)
    scale = std::max(scale, std::abs(double(naive[i])));
  const double floor = std::max(0.01 * scale, 1e-8);
  for (std::size_t i = 0; i < naive.size(); ++i) {
    const double want = double(naive[i]), got = double(optimized[i]);
    const double rel = std::abs(got - want) / std::max(std::abs(want), floor);
    if (!(rel <= 1e-5))
      throw std::runtime_error("bench gate: implementations disagree on " + what +
                               " (rel " + std::to_string(rel) + ")");
  }
}

}  // namespace detail

/// The four layer shapes of the reference network at full batch, each with
/// forward, backward-data and backward-filter passes (stride 1 everywhere;
/// pooling provides the downsampling between layers).
inline std::vector<BenchCase> canonical_cases(std::size_t repeats = 20, std::size_t warmup = 3) {
  struct L {
    std::size_t in_hw, in_c, out_c, k;
    bool first;
  };
  const L layers[] = {{84, 16, 32, 5, true},
                      {40, 32, 32, 5, false},
                      {18, 32, 64, 5, false},
                      {7, 64, 64, 3, false}};
  std::vector<BenchCase> cases;
  for (const auto& l : layers) {
    ConvShape s{128, l.in_hw, l.in_hw, l.in_c, l.out_c, l.k, l.k, 1};
    for (BenchOp op : {BenchOp::FORWARD, BenchOp::BWD_DATA, BenchOp::BWD_FILTER})
      cases.push_back({s, op, repeats, warmup, l.first});
  }
  return cases;
}

/// Times one conv case for both implementations (correctness-gated) and
/// returns a naive row plus an optimized row with its speedup.
inline std::vector<BenchRow> run_bench(const std::vector<BenchCase>& cases,
                                       std::uint64_t seed = 12345) {
  std::vector<BenchRow> rows;
  Rng rng(seed);
  for (const auto& c : cases) {
    c.validate();
    const auto& s = c.shape;
    BenchRow base;
    base.op = bench_op_name(c.op);
    base.input_shape = detail::shape_str({s.batch, s.in_h, s.in_w, s.in_c});
    base.kernel_shape = detail::shape_str({s.in_c, s.out_c, s.k_h, s.k_w});

    if (c.op == BenchOp::BWD_DATA && c.first_layer) {
      // the first layer never needs an input gradient
      for (const char* impl : {"naive", "optimized"}) {
        BenchRow row = base;
        row.impl = impl;
        row.not_applicable = true;
        row.note = "N/A (first layer)";
        rows.push_back(row);
      }
      continue;
    }

    Tensor<float> x(s.input_shape(), Layout::NHWC);
    Tensor<float> w(s.weight_shape(), Layout::FLAT);
    Tensor<float> bias({s.out_c}, Layout::FLAT);
    Tensor<float> gy(s.output_shape(), Layout::NHWC);
    for (auto* t : {&x, &w, &gy})
      for (std::size_t i = 0; i < t->size(); ++i) (*t)[i] = float(rng.uniform(-1, 1));
    for (std::size_t i = 0; i < bias.size(); ++i) bias[i] = float(rng.uniform(-1, 1));

    auto run_impl = [&](ConvImpl impl) -> Tensor<float> {
      switch (c.op) {
        case BenchOp::FORWARD: return conv_forward(x, w, bias, s, impl);
        case BenchOp::BWD_DATA: return conv_backward_data(gy, w, s, impl);
        case BenchOp::BWD_FILTER: return conv_backward_filter(x, gy, s, impl);
        default: throw std::logic_error("bench: convert case in conv harness");
      }
    };

    detail::gate(run_impl(ConvImpl::NAIVE), run_impl(ConvImpl::OPTIMIZED), base.op);

    double naive_median = 0.0;
    for (ConvImpl impl : {ConvImpl::NAIVE, ConvImpl::OPTIMIZED}) {
      const auto ms = detail::time_ms([&] { run_impl(impl); }, c.repeats, c.warmup);
      BenchRow row = base;
      row.impl = impl == ConvImpl::NAIVE ? "naive" : "optimized";
      row.median_ms = detail::percentile(ms, 0.5);
      row.p10_ms = detail::percentile(ms, 0.1);
      row.p90_ms = detail::percentile(ms, 0.9);
      if (impl == ConvImpl::NAIVE) naive_median = row.median_ms;
      row.speedup = naive_median / row.median_ms;
      rows.push_back(row);
    }
  }
  return rows;
}

/// Layout-conversion timing over the canonical activation shapes, gated on
/// bitwise round-trip correctness.
inline std::vector<BenchRow> run_convert_bench(
    const std::vector<std::vector<std::size_t>>& shapes, std::size_t repeats = 20,
    std::size_t warmup = 3, std::uint64_t seed = 12345) {
  std::vector<BenchRow> rows;
  Rng rng(seed);
  for (const auto& dims : shapes) {
    if (dims.size() != 4) throw std::invalid_argument("convert bench: rank-4 shapes only");
    Tensor<float> x({dims[0], dims[1], dims[2], dims[3]}, Layout::NHWC);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = float(rng.uniform(-1, 1));

    // round-trip gate: NHWC -> NCHW -> NHWC must be bitwise identical
    const auto there = convert_layout(x, Layout::NCHW);
    const auto back = convert_layout(there, Layout::NHWC);
    if (!(back == x)) throw std::runtime_error("convert bench: round trip not bitwise stable");

    for (const auto& [from, to, label] :
         {std::tuple{Layout::NHWC, Layout::NCHW, "nhwc->nchw"},
          std::tuple{Layout::NCHW, Layout::NHWC, "nchw->nhwc"},
          std::tuple{Layout::NHWC, Layout::NHWC, "nhwc->nhwc"}}) {
      const Tensor<float>& src = from == Layout::NHWC ? x : there;
      const auto ms =
          detail::time_ms([&] { convert_layout(src, to); }, repeats, warmup);
      BenchRow row;
      row.op = "convert";
      row.input_shape = detail::shape_str({dims[0], dims[1], dims[2], dims[3]});
      row.kernel_shape = "-";
      row.impl = label;
      row.median_ms = detail::percentile(ms, 0.5);
      row.p10_ms = detail::percentile(ms, 0.1);
      row.p90_ms = detail::percentile(ms, 0.9);
      row.speedup = 1.0;
      if (from == to) row.note = "identity";
      rows.push_back(row);
    }
  }
  return rows;
}

inline void write_bench_csv(const std::string& path, const std::vector<BenchRow>& rows) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path);
  os << "op,input_shape,kernel_shape,impl,median_ms,p10_ms,p90_ms,speedup\n";
  for (const auto& r : rows) {
    os << r.op << "," << r.input_shape << "," << r.kernel_shape << "," << r.impl << ",";
    if (r.not_applicable)
      os << "N/A,N/A,N/A,N/A";
    else
      os << r.median_ms << "," << r.p10_ms << "," << r.p90_ms << "," << r.speedup;
    os << "\n";
  }
}

inline std::string bench_markdown(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << "| op | input | kernel | impl | median ms | p10 ms | p90 ms | speedup |\n"
     << "|---|---|---|---|---|---|---|---|\n";
  char buf[64];
  for (const auto& r : rows) {
    os << "| " << r.op << " | " << r.input_shape << " | " << r.kernel_shape << " | " << r.impl
       << " | ";
    if (r.not_applicable) {
      os << "N/A | N/A | N/A | N/A |";
    } else {
      std::snprintf(buf, sizeof buf, "%.3f | %.3f | %.3f | %.2f |", r.median_ms, r.p10_ms,
                    r.p90_ms, r.speedup);
      os << buf;
    }
    if (!r.note.empty()) os << " " << r.note;
    os << "\n";
  }
  return os.str();
}

}  // namespace ba3c
