#include <catch2/catch_amalgamated.hpp>

#include "ba3c/conv.hpp"
#include "ba3c/rng.hpp"
#include "helpers.hpp"

using namespace ba3c;

namespace {

ConvShape shape(std::size_t n, std::size_t hw, std::size_t ic, std::size_t oc, std::size_t k,
                std::size_t stride = 1) {
  ConvShape s;
  s.batch = n;
  s.in_h = s.in_w = hw;
  s.in_c = ic;
  s.out_c = oc;
  s.k_h = s.k_w = k;
  s.stride = stride;
  return s;
}

template <typename T>
struct ConvProblem {
  Tensor<T> x, w, b;
};

template <typename T>
ConvProblem<T> random_problem(const ConvShape& s, Rng& rng) {
  ConvProblem<T> p{Tensor<T>(s.input_shape(), Layout::NHWC),
                   Tensor<T>(s.weight_shape(), Layout::FLAT),
                   Tensor<T>({s.out_c}, Layout::FLAT)};
  testutil::fill_random(p.x, rng);
  testutil::fill_random(p.w, rng);
  testutil::fill_random(p.b, rng);
  return p;
}

}  // namespace

TEST_CASE("conv_forward 1x1 kernel scales input") {
  const auto s = shape(1, 3, 1, 1, 1);
  Tensor<float> x(s.input_shape(), Layout::NHWC, 1.0f);
  Tensor<float> w(s.weight_shape(), Layout::FLAT, 2.0f);
  Tensor<float> b({1}, Layout::FLAT, 0.0f);
  for (auto impl : {ConvImpl::NAIVE, ConvImpl::OPTIMIZED}) {
    const auto y = conv_forward(x, w, b, s, impl);
    REQUIRE(y.shape() == std::vector<std::size_t>{1, 3, 3, 1});
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == 2.0f);
  }
}

TEST_CASE("conv_forward output shape follows the layer chain") {
  const auto s = shape(128, 84, 16, 32, 5);
  Tensor<float> x(s.input_shape(), Layout::NHWC);
  CHECK(s.output_shape() == std::vector<std::size_t>{128, 80, 80, 32});
  // spatial chain of the four bench layers: 84->80, 40->36, 18->14, 7->5
  CHECK(shape(1, 40, 32, 32, 5).out_h() == 36);
  CHECK(shape(1, 18, 32, 64, 5).out_h() == 14);
  CHECK(shape(1, 7, 64, 64, 3).out_h() == 5);
}

TEST_CASE("conv_forward matches the direct-loop oracle (F64)") {
  Rng rng(11);
  const auto s = shape(2, 6, 3, 4, 3);
  const auto p = random_problem<double>(s, rng);
  const auto want = testutil::oracle_conv_forward(p.x, p.w, p.b, s);
  for (auto impl : {ConvImpl::NAIVE, ConvImpl::OPTIMIZED}) {
    const auto y = conv_forward(p.x, p.w, p.b, s, impl);
    CHECK(testutil::max_rel_err(y, want) < 1e-6);
  }
}

TEST_CASE("conv_forward shape errors") {
  const auto s = shape(2, 6, 3, 4, 3);
  Tensor<float> x({2, 6, 6, 2}, Layout::NHWC);
  Tensor<float> w(s.weight_shape(), Layout::FLAT);
  Tensor<float> b({4}, Layout::FLAT);
  CHECK_THROWS(conv_forward(x, w, b, s, ConvImpl::NAIVE));
  CHECK_THROWS(conv_forward(x, w, b, s, ConvImpl::OPTIMIZED));
}

TEST_CASE("naive and optimized agree on randomized shapes") {
  Rng rng(23);
  for (int rep = 0; rep < 25; ++rep) {
    const std::size_t k = 1 + rng.below(3);
    const std::size_t hw = k + 1 + rng.below(8);
    const auto s = shape(1 + rng.below(3), hw, 1 + rng.below(4), 1 + rng.below(5), k,
                         1 + rng.below(2));
    const auto p = random_problem<float>(s, rng);
    const auto a = conv_forward_naive(p.x, p.w, p.b, s);
    const auto b = conv_forward_optimized(p.x, p.w, p.b, s);
    REQUIRE(testutil::max_rel_err(b, a) < 1e-5);

    Tensor<float> gout(s.output_shape(), Layout::NHWC);
    testutil::fill_random(gout, rng);
    const auto gd_a = conv_backward_data_naive(gout, p.w, s);
    const auto gd_b = conv_backward_data_optimized(gout, p.w, s);
    REQUIRE(testutil::max_rel_err(gd_b, gd_a) < 1e-5);

    const auto gw_a = conv_backward_filter_naive(p.x, gout, s);
    const auto gw_b = conv_backward_filter_optimized(p.x, gout, s);
    REQUIRE(testutil::max_rel_err(gw_b, gw_a) < 1e-5);
  }
}

TEST_CASE("conv_backward_data: 1x1 kernel is plain scaling") {
  const auto s = shape(1, 4, 1, 1, 1);
  Tensor<double> w(s.weight_shape(), Layout::FLAT, 3.0);
  Tensor<double> gout(s.output_shape(), Layout::NHWC, 1.0);
  for (auto impl : {ConvImpl::NAIVE, ConvImpl::OPTIMIZED}) {
    const auto gx = conv_backward_data(gout, w, s, impl);
    for (std::size_t i = 0; i < gx.size(); ++i) CHECK(gx[i] == 3.0);
  }
}

TEST_CASE("conv_backward_data matches finite differences of forward (F64)") {
  Rng rng(31);
  const auto s = shape(2, 6, 3, 4, 3);
  const auto p = random_problem<double>(s, rng);
  Tensor<double> gout(s.output_shape(), Layout::NHWC);
  testutil::fill_random(gout, rng);

  // scalar loss: <gout, conv_forward(x)>
  auto loss_of_x = [&](const std::vector<double>& flat) {
    Tensor<double> x2 = p.x;
    std::copy(flat.begin(), flat.end(), x2.data());
    const auto y = testutil::oracle_conv_forward(x2, p.w, p.b, s);
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += y[i] * gout[i];
    return acc;
  };
  const std::vector<double> x_flat(p.x.data(), p.x.data() + p.x.size());
  const auto fd = testutil::finite_diff(loss_of_x, x_flat);

  for (auto impl : {ConvImpl::NAIVE, ConvImpl::OPTIMIZED}) {
    const auto gx = conv_backward_data(gout, p.w, s, impl);
    double max_err = 0.0;
    for (std::size_t i = 0; i < gx.size(); ++i)
      max_err = std::max(max_err, testutil::rel_err(gx[i], fd[i]));
    CHECK(max_err < 1e-6);
  }
}

TEST_CASE("conv_backward_filter: trivial cases") {
  const auto s = shape(1, 2, 1, 1, 1);
  Tensor<double> x(s.input_shape(), Layout::NHWC, 1.0);

  Tensor<double> zeros(s.output_shape(), Layout::NHWC, 0.0);
  for (auto impl : {ConvImpl::NAIVE, ConvImpl::OPTIMIZED}) {
    const auto gw0 = conv_backward_filter(x, zeros, s, impl);
    for (std::size_t i = 0; i < gw0.size(); ++i) CHECK(gw0[i] == 0.0);

    Tensor<double> ones(s.output_shape(), Layout::NHWC, 1.0);
    const auto gw = conv_backward_filter(x, ones, s, impl);
    REQUIRE(gw.size() == 1);
    CHECK(gw[0] == 4.0);  // 2x2 positions, all ones
  }
}

TEST_CASE("conv_backward_filter matches finite differences (F64)") {
  Rng rng(37);
  const auto s = shape(2, 6, 3, 4, 3);
  const auto p = random_problem<double>(s, rng);
  Tensor<double> gout(s.output_shape(), Layout::NHWC);
  testutil::fill_random(gout, rng);

  auto loss_of_w = [&](const std::vector<double>& flat) {
    Tensor<double> w2 = p.w;
    std::copy(flat.begin(), flat.end(), w2.data());
    const auto y = testutil::oracle_conv_forward(p.x, w2, p.b, s);
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += y[i] * gout[i];
    return acc;
  };
  const std::vector<double> w_flat(p.w.data(), p.w.data() + p.w.size());
  const auto fd = testutil::finite_diff(loss_of_w, w_flat);

  for (auto impl : {ConvImpl::NAIVE, ConvImpl::OPTIMIZED}) {
    const auto gw = conv_backward_filter(p.x, gout, s, impl);
    double max_err = 0.0;
    for (std::size_t i = 0; i < gw.size(); ++i)
      max_err = std::max(max_err, testutil::rel_err(gw[i], fd[i]));
    CHECK(max_err < 1e-6);
  }
}

TEST_CASE("conv_backward_bias sums grad_out over positions") {
  Rng rng(41);
  const auto s = shape(2, 5, 2, 3, 2);
  Tensor<double> gout(s.output_shape(), Layout::NHWC);
  testutil::fill_random(gout, rng);
  const auto gb = conv_backward_bias(gout, s);
  for (std::size_t o = 0; o < s.out_c; ++o) {
    double want = 0.0;
    for (std::size_t n = 0; n < s.batch; ++n)
      for (std::size_t i = 0; i < s.out_h(); ++i)
        for (std::size_t j = 0; j < s.out_w(); ++j) want += gout.at4(n, i, j, o);
    CHECK(testutil::rel_err(gb[o], want) < 1e-12);
  }
}
