#include <catch2/catch_amalgamated.hpp>

#include "ba3c/nn.hpp"
#include "ba3c/rng.hpp"
#include "helpers.hpp"

using namespace ba3c;

TEST_CASE("maxpool forward picks maxima, backward routes to argmax") {
  Tensor<double> x({1, 2, 2, 1}, Layout::NHWC);
  x.at4(0, 0, 0, 0) = 1;
  x.at4(0, 0, 1, 0) = 2;
  x.at4(0, 1, 0, 0) = 3;
  x.at4(0, 1, 1, 0) = 4;
  std::vector<std::uint32_t> am;
  const auto y = detail::maxpool2_forward(x, &am);
  REQUIRE(y.size() == 1);
  CHECK(y[0] == 4.0);

  Tensor<double> gy({1, 1, 1, 1}, Layout::NHWC, 7.0);
  const auto gx = detail::maxpool2_backward(gy, am, x.shape());
  CHECK(gx.at4(0, 1, 1, 0) == 7.0);
  CHECK(gx.at4(0, 0, 0, 0) == 0.0);
  CHECK(gx.at4(0, 0, 1, 0) == 0.0);
  CHECK(gx.at4(0, 1, 0, 0) == 0.0);
}

TEST_CASE("softmax of identical logits is uniform") {
  Tensor<double> logits({2, 3}, Layout::FLAT, 0.7);
  const auto p = detail::softmax_rows(logits);
  for (std::size_t i = 0; i < p.size(); ++i) CHECK_THAT(p[i], Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-12));
}

TEST_CASE("dense backward matches finite differences (F64)") {
  Rng rng(5);
  const std::size_t B = 3, In = 4, Out = 2;
  Tensor<double> x({B, In}, Layout::FLAT);
  Tensor<double> w({Out, In}, Layout::FLAT);
  Tensor<double> b({Out}, Layout::FLAT);
  Tensor<double> gy({B, Out}, Layout::FLAT);
  testutil::fill_random(x, rng);
  testutil::fill_random(w, rng);
  testutil::fill_random(b, rng);
  testutil::fill_random(gy, rng);

  auto loss_of_w = [&](const std::vector<double>& flat) {
    Tensor<double> w2 = w;
    std::copy(flat.begin(), flat.end(), w2.data());
    const auto y = detail::dense_forward(x, w2, b);
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += y[i] * gy[i];
    return acc;
  };
  const auto fd = testutil::finite_diff(loss_of_w, {w.data(), w.data() + w.size()});

  Tensor<double> gw({Out, In}, Layout::FLAT), gb({Out}, Layout::FLAT), gx({B, In}, Layout::FLAT);
  detail::dense_backward(gy, x, w, gw, gb, &gx);
  for (std::size_t i = 0; i < gw.size(); ++i)
    CHECK(testutil::rel_err(gw[i], fd[i]) < 1e-6);

  auto loss_of_x = [&](const std::vector<double>& flat) {
    Tensor<double> x2 = x;
    std::copy(flat.begin(), flat.end(), x2.data());
    const auto y = detail::dense_forward(x2, w, b);
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += y[i] * gy[i];
    return acc;
  };
  const auto fdx = testutil::finite_diff(loss_of_x, {x.data(), x.data() + x.size()});
  for (std::size_t i = 0; i < gx.size(); ++i)
    CHECK(testutil::rel_err(gx[i], fdx[i]) < 1e-6);
}

TEST_CASE("network_forward: policy rows are distributions") {
  Rng rng(9);
  const auto arch = make_toy_arch(24, 24, 4, 3);
  const auto params = init_params<double>(arch, rng);
  Tensor<double> x({2, 24, 24, 4}, Layout::NHWC);
  testutil::fill_random(x, rng, 0.0, 1.0);
  const auto out = network_forward(arch, params, x);
  REQUIRE(out.policy.shape() == std::vector<std::size_t>{2, 3});
  REQUIRE(out.value.shape() == std::vector<std::size_t>{2});
  for (std::size_t i = 0; i < 2; ++i) {
    double sum = 0.0;
    for (std::size_t a = 0; a < 3; ++a) {
      CHECK(out.policy[i * 3 + a] > 0.0);
      sum += out.policy[i * 3 + a];
    }
    CHECK_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-6));
    CHECK(std::isfinite(out.value[i]));
  }
}

TEST_CASE("network_forward: batch row equals single-sample forward") {
  Rng rng(13);
  const auto arch = make_toy_arch(16, 16, 2, 4);
  const auto params = init_params<double>(arch, rng);
  Tensor<double> batch({2, 16, 16, 2}, Layout::NHWC);
  testutil::fill_random(batch, rng, 0.0, 1.0);

  const auto both = network_forward(arch, params, batch);
  for (std::size_t b = 0; b < 2; ++b) {
    Tensor<double> single({1, 16, 16, 2}, Layout::NHWC);
    const std::size_t stride = 16 * 16 * 2;
    std::copy(batch.data() + b * stride, batch.data() + (b + 1) * stride, single.data());
    const auto one = network_forward(arch, params, single);
    for (std::size_t a = 0; a < 4; ++a)
      CHECK_THAT(both.policy[b * 4 + a], Catch::Matchers::WithinAbs(one.policy[a], 1e-6));
    CHECK_THAT(both.value[b], Catch::Matchers::WithinAbs(one.value[0], 1e-6));
  }
}

TEST_CASE("zero-weight heads give uniform policy and zero value") {
  Rng rng(17);
  const auto arch = make_toy_arch(24, 24, 1, 3);
  auto params = init_params<double>(arch, rng);
  auto& pw = params.at("policy.w");
  for (std::size_t i = 0; i < pw.size(); ++i) pw[i] = 0.0;
  auto& vw = params.at("value.w");
  for (std::size_t i = 0; i < vw.size(); ++i) vw[i] = 0.0;

  Tensor<double> x({1, 24, 24, 1}, Layout::NHWC);
  testutil::fill_random(x, rng, 0.0, 1.0);
  const auto out = network_forward(arch, params, x);
  for (std::size_t a = 0; a < 3; ++a)
    CHECK_THAT(out.policy[a], Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-12));
  CHECK(out.value[0] == 0.0);
}

TEST_CASE("uninitialized params raise") {
  const auto arch = make_toy_arch(24, 24, 1, 3);
  ModelParams<double> empty;
  Tensor<double> x({1, 24, 24, 1}, Layout::NHWC);
  CHECK_THROWS(network_forward(arch, empty, x));
}

TEST_CASE("naive and optimized forward agree through the network") {
  Rng rng(19);
  const auto arch = make_toy_arch(24, 24, 4, 3);
  const auto params = init_params<float>(arch, rng);
  Tensor<float> x({3, 24, 24, 4}, Layout::NHWC);
  testutil::fill_random(x, rng, 0.0, 1.0);
  const auto a = network_forward(arch, params, x, ConvImpl::NAIVE);
  const auto b = network_forward(arch, params, x, ConvImpl::OPTIMIZED);
  CHECK(testutil::max_rel_err(b.policy, a.policy) < 1e-5);
}

TEST_CASE("paper arch walks the published spatial chain") {
  const auto arch = make_paper_arch(84, 84, 16, 18);
  CHECK(trunk_output_width(arch) == 512);
  const auto json = arch.to_json();
  const auto back = NetworkArch::from_json(json);
  CHECK(back.to_json() == json);
  CHECK(trunk_output_width(back) == 512);
}

TEST_CASE("arch rejects broken chains") {
  NetworkArch bad{8, 8, 1, 3, {conv_spec("c", 16, 4)}};
  CHECK_THROWS(trunk_output_width(bad));
}
