#include <catch2/catch_amalgamated.hpp>

#include "mfm/grad_check.hpp"
#include "mfm/ops.hpp"
#include "mfm/tape.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using mfm::Shape;
using mfm::Tape;
using Tensor = mfm::Tensor<double>;
namespace tu = testutil;

namespace {

// Probe-weighted sum makes the scalar sensitive to every output element, so
// permutation or indexing mistakes cannot cancel out.
Tensor probe_sum(const Tensor& y, const Tensor& probe) {
  return mfm::reduce_sum(mfm::mul(y, probe));
}

}  // namespace

TEST_CASE("grad of sum is ones") {
  mfm::Rng rng(1);
  auto x = tu::random_tensor<double>(Shape(1, 3, 3, 2), rng);
  double err = mfm::grad_check<double>(
      [](const Tensor& t) { return mfm::reduce_sum(t); }, x);
  CHECK(err <= 1e-10);
}

TEST_CASE("grad of sum(x*x) is 2x") {
  mfm::Rng rng(2);
  auto x = tu::random_tensor<double>(Shape(1, 2, 3, 2), rng);
  double err = mfm::grad_check<double>(
      [](const Tensor& t) { return mfm::reduce_sum(mfm::mul(t, t)); }, x);
  CHECK(err <= 1e-8);

  // spot-check the analytic value directly
  Tape<double> tape;
  Tape<double>::Scope scope(tape);
  x.set_requires_grad(true);
  auto loss = mfm::reduce_sum(mfm::mul(x, x));
  tape.backward(loss);
  for (std::size_t i = 0; i < x.numel(); ++i)
    CHECK(x.grad_view()[i] == Catch::Approx(2.0 * x.data()[i]));
}

TEST_CASE("grad_check rejects non-scalar f") {
  mfm::Rng rng(3);
  auto x = tu::random_tensor<double>(Shape(1, 2, 2, 1), rng);
  CHECK_THROWS_AS(
      mfm::grad_check<double>([](const Tensor& t) { return mfm::mul(t, t); }, x),
      mfm::ParamError);
}

TEST_CASE("backward requires scalar loss and visits each op once") {
  mfm::Rng rng(4);
  auto x = tu::random_tensor<double>(Shape(1, 2, 2, 2), rng);
  x.set_requires_grad(true);
  Tape<double> tape;
  {
    Tape<double>::Scope scope(tape);
    auto y = mfm::gelu(mfm::mul(x, x));
    CHECK_THROWS_AS(tape.backward(y), mfm::ParamError);
    auto loss = mfm::reduce_sum(y);
    CHECK(tape.size() == 3);
    CHECK(tape.backward(loss) == 3);
  }
}

TEST_CASE("tensor used twice accumulates both paths") {
  mfm::Rng rng(5);
  auto x = tu::random_tensor<double>(Shape(1, 2, 2, 1), rng);
  auto a = tu::random_tensor<double>(x.shape, rng);
  auto b = tu::random_tensor<double>(x.shape, rng);
  double err = mfm::grad_check<double>(
      [&](const Tensor& t) {
        return mfm::reduce_sum(mfm::add(mfm::mul(t, a), mfm::mul(t, b)));
      },
      x);
  CHECK(err <= 1e-8);
}

TEST_CASE("conv2d gradients, all dilations, 10 seeds") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    mfm::Rng rng(100 + seed);
    const int d = 1 + static_cast<int>(seed % 4);
    const int k = (seed % 2 == 0) ? 3 : 1;
    auto x = tu::random_tensor<double>(Shape(2, 5, 4, 3), rng);
    auto ker = tu::random_tensor<double>(Shape(k, k, 3, 2), rng);
    auto bias = tu::random_tensor<double>(Shape(1, 1, 1, 2), rng);
    auto probe = tu::random_tensor<double>(Shape(2, 5, 4, 2), rng);
    double err = mfm::grad_check_leaves<double>(
        [&]() {
          return probe_sum(mfm::conv2d(x, mfm::ConvWeights<double>(ker, bias, d)), probe);
        },
        {x, ker, bias});
    INFO("seed " << seed << " d=" << d << " k=" << k);
    CHECK(err <= 1e-4);
  }
}

TEST_CASE("conv1d_channel gradients, 10 seeds") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    mfm::Rng rng(200 + seed);
    const int C = 4 + static_cast<int>(rng.below(8));
    auto v = tu::random_tensor<double>(Shape(2, 1, 1, C), rng);
    auto k = tu::random_tensor<double>(Shape(1, 1, 1, 3), rng);
    auto b = tu::random_tensor<double>(Shape(1, 1, 1, 1), rng);
    auto probe = tu::random_tensor<double>(Shape(2, 1, 1, C), rng);
    double err = mfm::grad_check_leaves<double>(
        [&]() {
          return probe_sum(mfm::conv1d_channel(v, mfm::Conv1dWeights<double>{k, b}), probe);
        },
        {v, k, b});
    CHECK(err <= 1e-4);
  }
}

TEST_CASE("global_avg_pool gradient, 10 seeds") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    mfm::Rng rng(300 + seed);
    auto x = tu::random_tensor<double>(Shape(2, 4, 5, 3), rng);
    auto probe = tu::random_tensor<double>(Shape(2, 1, 1, 3), rng);
    double err = mfm::grad_check<double>(
        [&](const Tensor& t) { return probe_sum(mfm::global_avg_pool(t), probe); }, x);
    CHECK(err <= 1e-4);
  }
}

TEST_CASE("pixel_shuffle and channel_shuffle gradients, 10 seeds") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    mfm::Rng rng(400 + seed);
    const int r = 2 + static_cast<int>(seed % 3);
    auto x = tu::random_tensor<double>(Shape(1, 3, 3, r * r * 2), rng);
    auto probe = tu::random_tensor<double>(Shape(1, 3 * r, 3 * r, 2), rng);
    double err = mfm::grad_check<double>(
        [&](const Tensor& t) { return probe_sum(mfm::pixel_shuffle(t, r), probe); }, x);
    CHECK(err <= 1e-4);

    auto c = tu::random_tensor<double>(Shape(2, 3, 3, 8), rng);
    auto probe2 = tu::random_tensor<double>(c.shape, rng);
    double err2 = mfm::grad_check<double>(
        [&](const Tensor& t) { return probe_sum(mfm::channel_shuffle(t, 4), probe2); }, c);
    CHECK(err2 <= 1e-4);

    auto u = tu::random_tensor<double>(Shape(1, 2 * r, 2 * r, 3), rng);
    auto probe3 = tu::random_tensor<double>(Shape(1, 2, 2, 3 * r * r), rng);
    double err3 = mfm::grad_check<double>(
        [&](const Tensor& t) { return probe_sum(mfm::pixel_unshuffle(t, r), probe3); }, u);
    CHECK(err3 <= 1e-4);
  }
}

TEST_CASE("layer_norm gradients wrt x, gamma, beta, 10 seeds") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    mfm::Rng rng(500 + seed);
    const int C = 4 + 2 * static_cast<int>(seed % 3);
    auto x = tu::random_tensor<double>(Shape(1, 3, 3, C), rng);
    auto gamma = tu::random_tensor<double>(Shape(1, 1, 1, C), rng, 0.5, 1.5);
    auto beta = tu::random_tensor<double>(Shape(1, 1, 1, C), rng);
    auto probe = tu::random_tensor<double>(x.shape, rng);
    double err = mfm::grad_check_leaves<double>(
        [&]() { return probe_sum(mfm::layer_norm(x, gamma, beta, 1e-6), probe); },
        {x, gamma, beta}, 1e-4);
    CHECK(err <= 1e-4);
  }
}

TEST_CASE("activation gradients, 10 seeds") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    mfm::Rng rng(600 + seed);
    // keep prelu inputs away from the kink at zero
    auto x = tu::random_tensor<double>(Shape(1, 3, 4, 2), rng, 0.1, 1.5);
    for (auto& v : x.data())
      if (rng.uniform() < 0.5) v = -v;
    auto alpha = Tensor::from_data(Shape(1, 1, 1, 1), {0.25});
    auto probe = tu::random_tensor<double>(x.shape, rng);

    double eg = mfm::grad_check<double>(
        [&](const Tensor& t) { return probe_sum(mfm::gelu(t), probe); }, x);
    CHECK(eg <= 1e-4);

    double es = mfm::grad_check<double>(
        [&](const Tensor& t) { return probe_sum(mfm::sigmoid(t), probe); }, x);
    CHECK(es <= 1e-4);

    double ep = mfm::grad_check_leaves<double>(
        [&]() { return probe_sum(mfm::prelu(x, alpha), probe); }, {x, alpha});
    CHECK(ep <= 1e-4);
  }
}

TEST_CASE("broadcast add/mul gradients, 10 seeds") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    mfm::Rng rng(700 + seed);
    auto big = tu::random_tensor<double>(Shape(2, 3, 4, 3), rng);
    auto chan = tu::random_tensor<double>(Shape(1, 1, 1, 3), rng);
    auto spat = tu::random_tensor<double>(Shape(2, 3, 4, 1), rng);
    auto probe = tu::random_tensor<double>(big.shape, rng);

    double e1 = mfm::grad_check_leaves<double>(
        [&]() { return probe_sum(mfm::mul(big, chan), probe); }, {big, chan});
    CHECK(e1 <= 1e-4);

    double e2 = mfm::grad_check_leaves<double>(
        [&]() { return probe_sum(mfm::add(spat, chan), probe); }, {spat, chan});
    CHECK(e2 <= 1e-4);
  }
}

TEST_CASE("broadcast gradient equals explicit-tiling oracle") {
  mfm::Rng rng(800);
  auto small = tu::random_tensor<double>(Shape(1, 1, 1, 4), rng);
  auto big = tu::random_tensor<double>(Shape(2, 3, 3, 4), rng);
  small.set_requires_grad(true);

  Tape<double> tape;
  {
    Tape<double>::Scope scope(tape);
    auto loss = mfm::reduce_sum(mfm::mul(small, big));
    tape.backward(loss);
  }

  // d sum(small * big) / d small[c] = sum of big over the tiled axes
  for (int c = 0; c < 4; ++c) {
    double expect = 0;
    for (int b = 0; b < 2; ++b)
      for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 3; ++x) expect += big.at(b, y, x, c);
    CHECK(small.grad_view()[c] == Catch::Approx(expect).epsilon(1e-6));
  }
}

TEST_CASE("concat_channels gradients") {
  mfm::Rng rng(900);
  auto a = tu::random_tensor<double>(Shape(1, 2, 2, 2), rng);
  auto b = tu::random_tensor<double>(Shape(1, 2, 2, 3), rng);
  auto probe = tu::random_tensor<double>(Shape(1, 2, 2, 5), rng);
  double err = mfm::grad_check_leaves<double>(
      [&]() { return probe_sum(mfm::concat_channels<double>({a, b}), probe); }, {a, b});
  CHECK(err <= 1e-4);
}

TEST_CASE("no recording outside a tape scope") {
  mfm::Rng rng(1000);
  auto x = tu::random_tensor<double>(Shape(1, 2, 2, 2), rng);
  x.set_requires_grad(true);
  auto y = mfm::gelu(x);
  CHECK_FALSE(y.has_grad());
  CHECK(Tape<double>::active() == nullptr);

  Tape<double> tape;
  {
    Tape<double>::Scope scope(tape);
    auto z = mfm::gelu(x);
    (void)z;
    CHECK(tape.size() == 1);
  }
  CHECK(Tape<double>::active() == nullptr);
}
