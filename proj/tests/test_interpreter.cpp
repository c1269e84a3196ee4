#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "requant/interpreter.hpp"
#include "requant/passes.hpp"

#include "fixtures.hpp"
#include "oracle.hpp"

using namespace requant;

namespace {

// single 1x1 conv graph with hand-picked params
ModelGraph one_by_one_conv(double w, double b, double s_w, double s_i, double s_o) {
  ModelGraph g;
  g.input_shape = {1, 1, 1, 1};
  g.input_qp.scale = s_i;
  g.input_qp.zero_point = 0;
  g.input_qp.is_signed = true;
  g.input_qp.scheme = Scheme::Symmetric;
  g.input_qp.range_min = -s_i * 127;
  g.input_qp.range_max = s_i * 127;

  LayerNode conv;
  conv.id = "conv";
  conv.kind = LayerKind::Conv2D;
  conv.input_ids = {kGraphInput};
  conv.weights_float = TensorBuffer::from_floats({1, 1, 1, 1}, {static_cast<float>(w)});
  conv.weight_qp = g.input_qp;
  conv.weight_qp->scale = s_w;
  conv.weight_qp->range_min = -s_w * 127;
  conv.weight_qp->range_max = s_w * 127;
  conv.bias_float = TensorBuffer::from_floats({1}, {static_cast<float>(b)});
  conv.input_qp = g.input_qp;
  conv.output_qp = g.input_qp;
  conv.output_qp.scale = s_o;
  conv.output_qp.range_min = -s_o * 127;
  conv.output_qp.range_max = s_o * 127;
  conv.weights_quant = quantize_tensor(*conv.weights_float, *conv.weight_qp);
  conv.bias_quant = quantize_bias(*conv.bias_float, s_w, s_i);
  g.layers.push_back(std::move(conv));
  g.output_id = "conv";
  return g;
}

}  // namespace

TEST_CASE("float path identity and scaling") {
  auto g = one_by_one_conv(1.0, 0.0, 1.0, 1.0, 1.0);
  auto in = TensorBuffer::from_floats({1, 1, 1, 1}, {3.0f});
  auto trace = run_float(g, in);
  CHECK(trace.at("conv").floats()[0] == 3.0f);

  g = one_by_one_conv(2.0, 0.5, 1.0, 1.0, 1.0);
  trace = run_float(g, in);
  CHECK(trace.at("conv").floats()[0] == 6.5f);
}

TEST_CASE("quant path unit multiplier") {
  auto g = one_by_one_conv(2.0, 0.0, 1.0, 1.0, 1.0);
  auto in = TensorBuffer::from_floats({1, 1, 1, 1}, {3.0f});
  auto trace = run_quant(g, in);
  CHECK(trace.at("conv").ints()[0] == 6);

  // same layer with S_o = 2: M = 0.5, q_o = 3
  g = one_by_one_conv(2.0, 0.0, 1.0, 1.0, 2.0);
  trace = run_quant(g, in);
  CHECK(trace.at("conv").ints()[0] == 3);
}

TEST_CASE("float path matches scalar oracle on random graphs") {
  for (uint32_t seed = 1; seed <= 8; ++seed) {
    fixtures::ConvnetOptions opt;
    opt.with_clamp = seed % 2;
    opt.with_depthwise = seed % 3 == 0;
    opt.with_pool = seed % 4 == 0;
    opt.with_fc = seed % 5 == 0;
    auto g = fixtures::random_convnet(seed, opt);
    std::mt19937 rng(seed * 977);
    auto in = fixtures::random_floats(rng, g.input_shape, 0.5);
    auto trace = run_float(g, in);
    auto expected = oracle::run_float(g, in);
    for (const auto& l : g.layers) {
      const auto& a = trace.at(l.id).floats();
      const auto& b = expected.at(l.id).floats();
      REQUIRE(a.size() == b.size());
      for (size_t i = 0; i < a.size(); ++i)
        // f32 storage between layers permits ~1 ulp drift per accumulation order
        REQUIRE_THAT(a[i], Catch::Matchers::WithinRel(b[i], 1e-4f) ||
                               Catch::Matchers::WithinAbs(b[i], 1e-5f));
    }
  }
}

TEST_CASE("quant path matches scalar integer oracle bit-exactly") {
  for (uint32_t seed = 1; seed <= 10; ++seed) {
    fixtures::ConvnetOptions opt;
    opt.with_clamp = seed % 2;
    opt.with_depthwise = seed % 3 == 0;
    opt.with_pool = seed % 4 == 0;
    opt.with_add = seed % 5 == 0;
    auto g = fixtures::random_convnet(seed, opt);
    std::mt19937 rng(seed * 1301);
    auto in = fixtures::random_floats(rng, g.input_shape, 0.5);
    auto trace = run_quant(g, in);
    auto expected = oracle::run_quant(g, in);
    for (const auto& l : g.layers)
      REQUIRE(trace.at(l.id).ints() == expected.at(l.id).ints());
  }
}

TEST_CASE("symmetric reduction: affine path with zero Z equals the reduced form") {
  // on a symmetric graph the zero-point terms vanish; check quant outputs are
  // still bit-exact against the oracle (which uses the reduced form)
  auto g0 = fixtures::random_convnet(77);
  auto g = symmetrize_ranges(g0);
  for (const auto& l : g.layers) {
    CHECK(l.input_qp.zero_point == 0);
    CHECK(l.output_qp.zero_point == 0);
  }
  std::mt19937 rng(123);
  auto in = fixtures::random_floats(rng, g.input_shape, 0.5);
  auto trace = run_quant(g, in);
  auto expected = oracle::run_quant(g, in);
  for (const auto& l : g.layers)
    REQUIRE(trace.at(l.id).ints() == expected.at(l.id).ints());
}

TEST_CASE("quantized outputs track float outputs within the quantization bound") {
  for (uint32_t seed = 20; seed < 25; ++seed) {
    fixtures::ConvnetOptions opt;
    opt.layers = 1;
    auto g = fixtures::random_convnet(seed, opt);
    std::mt19937 rng(seed);
    auto in = fixtures::random_floats(rng, g.input_shape, 0.4);
    auto tf = run_float(g, in);
    Interpreter interp(g);
    auto tq = interp.dequantize_trace(interp.run_quant(in));
    const auto& l = g.layers[0];
    const int64_t fan_in =
        l.weights_float->shape()[1] * l.weights_float->shape()[2] * l.weights_float->shape()[3];
    // input quantization error per term ~ S_i/2 * |w|, weight error ~ S_w/2 * |x|
    double max_w = 0.0, max_x = 0.0;
    for (float v : l.weights_float->floats()) max_w = std::max(max_w, std::abs(double(v)));
    for (float v : in.floats()) max_x = std::max(max_x, std::abs(double(v)));
    const double eps_accum =
        fan_in * (g.input_qp.scale / 2 * max_w + l.weight_qp->scale / 2 * (max_x + 1.0)) +
        l.weight_qp->scale * g.input_qp.scale / 2;
    const double bound = l.output_qp.scale * 0.5 + eps_accum;
    const auto& a = tf.at(l.id).floats();
    const auto& b = tq.at(l.id).floats();
    for (size_t i = 0; i < a.size(); ++i) {
      const double clamped = std::clamp(static_cast<double>(a[i]), l.output_qp.range_min,
                                        l.output_qp.range_max);
      REQUIRE(std::abs(clamped - b[i]) <= bound);
    }
  }
}

TEST_CASE("shape mismatch raises") {
  auto g = fixtures::random_convnet(3);
  std::mt19937 rng(3);
  auto bad = fixtures::random_floats(rng, {1, 2, 2, 1}, 0.5);
  CHECK_THROWS_AS(run_float(g, bad), ShapeMismatch);
  CHECK_THROWS_AS(run_quant(g, bad), ShapeMismatch);
}

TEST_CASE("accumulator preflight rejects impossible layers") {
  auto g = one_by_one_conv(2.0, 0.0, 1.0, 1.0, 1.0);
  // inflate fan-in artificially: giant bias forces the bound over int32
  g.layers[0].bias_quant->ints()[0] = INT32_MAX;
  auto in = TensorBuffer::from_floats({1, 1, 1, 1}, {1.0f});
  CHECK_THROWS_AS(run_quant(g, in), AccumulatorOverflow);
}
