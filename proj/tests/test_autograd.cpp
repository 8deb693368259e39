#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "smtl/errors.hpp"
#include "smtl/gradcheck.hpp"
#include "smtl/rng.hpp"
#include "smtl/tensor.hpp"
#include "test_util.hpp"

using namespace smtl;
using ag::Graph;
using ag::Op;
using ag::Shape;
using ag::Tensor;
using testutil::fd_max_rel_err;
using testutil::random_tensor;
using testutil::random_tensor_nonzero;

TEST_CASE("relu, sigmoid, softmax forward definitions") {
  Graph g;
  const Tensor r = g.relu(g.leaf(Tensor({3}, {-1.0, 0.0, 2.0})));
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 0.0);
  CHECK(r[2] == 2.0);

  const Tensor s = g.sigmoid(g.leaf(Tensor::scalar(0.0)));
  CHECK(s[0] == doctest::Approx(0.5).epsilon(1e-15));

  const Tensor m = g.softmax(g.leaf(Tensor({3}, {0.0, 0.0, 0.0})), 0);
  for (int i = 0; i < 3; ++i)
    CHECK(m[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("softmax output is a distribution along its axis") {
  rng::Stream s(7);
  for (int trial = 0; trial < 20; ++trial) {
    Graph g;
    const Tensor x = random_tensor({2, 5, 3}, s, -4.0, 4.0);
    const int axis = static_cast<int>(s.uniform_int(0, 2));
    const Tensor y = g.softmax(g.leaf(x), axis);
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(y[i] >= 0.0);
    // Sum along the axis must be 1 within 1e-12, for every lane.
    const auto& shape = y.shape;
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= shape[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i)
      inner *= shape[i];
    const int64_t n = shape[static_cast<size_t>(axis)];
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t in = 0; in < inner; ++in) {
        double acc = 0.0;
        for (int64_t j = 0; j < n; ++j) acc += y[(o * n + j) * inner + in];
        CHECK(acc == doctest::Approx(1.0).epsilon(1e-12));
      }
  }
}

TEST_CASE("shape mismatches are rejected with the kind and shapes") {
  Graph g;
  const Tensor a = g.leaf(Tensor({2}, {1.0, 2.0}));
  const Tensor b = g.leaf(Tensor({3}, {1.0, 2.0, 3.0}));
  CHECK_THROWS_WITH_AS(g.add(a, b),
                       doctest::Contains("add"), std::invalid_argument);
  try {
    g.add(a, b);
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("[2]") != std::string::npos);
    CHECK(std::string(e.what()).find("[3]") != std::string::npos);
  }
  CHECK_THROWS_WITH_AS(g.softmax(b, 1), doctest::Contains("axis"),
                       std::invalid_argument);
  CHECK_THROWS_AS(g.softmax(b, -1), std::invalid_argument);
}

TEST_CASE("backward: sum yields all-ones gradient") {
  Graph g;
  const Tensor x = g.leaf(Tensor({2, 3}, 2.5));
  const Tensor loss = g.sum(x);
  const auto grads = g.backward(loss);
  const Tensor& gx = grads.at(x.node);
  for (int64_t i = 0; i < gx.numel(); ++i) CHECK(gx[i] == 1.0);
  CHECK(grads.at(loss.node)[0] == 1.0);
}

TEST_CASE("backward: d(sum x^2)/dx = 2x") {
  Graph g;
  const Tensor x = g.leaf(Tensor({1}, {3.0}));
  const Tensor loss = g.sum(g.mul(x, x));
  const auto grads = g.backward(loss);
  CHECK(grads.at(x.node)[0] == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("backward: bce(sigmoid(z), y=1) at z=0 has gradient -0.5") {
  Graph g;
  const Tensor z = g.leaf(Tensor::scalar(0.0));
  const Tensor loss =
      g.binary_cross_entropy(g.sigmoid(z), g.leaf(Tensor::scalar(1.0)));
  const auto grads = g.backward(loss);
  CHECK(grads.at(z.node)[0] == doctest::Approx(-0.5).epsilon(1e-12));

  // Same value from the finite-difference oracle.
  auto f = [](const Tensor& t) {
    Graph g2;
    const Tensor zz = g2.leaf(t);
    return g2.binary_cross_entropy(g2.sigmoid(zz),
                                   g2.leaf(Tensor::scalar(1.0)))[0];
  };
  const Tensor analytic({1}, {grads.at(z.node)[0]});
  const auto res = ag::grad_check(f, analytic, Tensor::scalar(0.0), 1e-6);
  CHECK(res.ok(1e-6));
}

TEST_CASE("backward rejects non-scalar and foreign losses") {
  Graph g;
  const Tensor x = g.leaf(Tensor({3}, {1.0, 2.0, 3.0}));
  CHECK_THROWS_AS(g.backward(x), std::invalid_argument);
  Tensor detached({1}, {0.0});
  CHECK_THROWS_AS(g.backward(detached), std::invalid_argument);
}

TEST_CASE("gradients exist exactly for nodes on a path to the loss") {
  Graph g;
  const Tensor x = g.leaf(Tensor({2}, {1.0, 2.0}));
  const Tensor unused = g.relu(g.leaf(Tensor({2}, {3.0, 4.0})));
  const Tensor loss = g.sum(x);
  const auto grads = g.backward(loss);
  CHECK(grads.count(x.node) == 1);
  CHECK(grads.count(loss.node) == 1);
  CHECK(grads.count(unused.node) == 0);
  CHECK(grads.size() == 2);
}

TEST_CASE("backward is deterministic: bit-identical gradients") {
  rng::Stream s(11);
  Graph g;
  const Tensor x = g.leaf(random_tensor({3, 4}, s));
  const Tensor w = g.leaf(random_tensor({4, 12}, s));
  const Tensor h = g.dropout(g.relu(g.matvec(w, g.concat({x}, {12}))), 0.6,
                             true, 99);
  const Tensor loss = g.sum(g.mul(h, h));
  const auto g1 = g.backward(loss);
  const auto g2 = g.backward(loss);
  REQUIRE(g1.size() == g2.size());
  for (const auto& [node, grad] : g1) {
    const Tensor& other = g2.at(node);
    REQUIRE(grad.numel() == other.numel());
    CHECK(std::memcmp(grad.data.data(), other.data.data(),
                      grad.data.size() * sizeof(double)) == 0);
  }
}

TEST_CASE("dropout: eval identity, keep=1 identity, train expectation") {
  rng::Stream s(13);
  const Tensor x = random_tensor({4, 4}, s, 0.5, 1.5);

  Graph g;
  const Tensor ev = g.dropout(g.leaf(x), 0.5, false, 1);
  CHECK(std::memcmp(ev.data.data(), x.data.data(),
                    x.data.size() * sizeof(double)) == 0);
  const Tensor k1 = g.dropout(g.leaf(x), 1.0, true, 1);
  CHECK(std::memcmp(k1.data.data(), x.data.data(),
                    x.data.size() * sizeof(double)) == 0);

  // Inverted scaling keeps the expectation equal to the input.
  const Tensor ones({4, 4}, 1.0);
  const double keep = 0.5;
  double grand = 0.0;
  const int draws = 10000;
  for (int d = 0; d < draws; ++d) {
    Graph g2;
    const Tensor out = g2.dropout(g2.leaf(ones), keep, true,
                                  1000 + static_cast<uint64_t>(d));
    for (double v : out.data) grand += v;
  }
  grand /= static_cast<double>(draws) * static_cast<double>(ones.numel());
  CHECK(grand == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("finite differences validate every operation kind") {
  // 100 random instances per kind, shapes at most 4x4x4x4, h = 1e-5.
  constexpr double kTol = 1e-4;
  constexpr int kSeeds = 100;

  auto probe_reduce = [](Graph& g, const Tensor& t,
                         uint64_t seed) -> Tensor {
    // Weighted sum with a fixed probe so the incoming gradient varies.
    rng::Stream ps(seed);
    Tensor probe(t.shape);
    for (double& v : probe.data) v = ps.uniform(-1.0, 1.0);
    return g.sum(g.mul(t, g.leaf(probe)));
  };

  SUBCASE("linear") {
    for (int t = 0; t < kSeeds; ++t) {
      rng::Stream s(100 + static_cast<uint64_t>(t));
      const int64_t m = s.uniform_int(1, 4), n = s.uniform_int(1, 4);
      const double err = fd_max_rel_err(
          [&](Graph& g, const std::vector<Tensor>& in) {
            return probe_reduce(g, g.linear(in[0], in[1], in[2]), 500 + t);
          },
          {random_tensor({m, n}, s), random_tensor({n}, s),
           random_tensor({m}, s)});
      CHECK(err < kTol);
    }
  }

  SUBCASE("conv3d") {
    for (int t = 0; t < kSeeds; ++t) {
      rng::Stream s(200 + static_cast<uint64_t>(t));
      const int64_t cin = s.uniform_int(1, 2), cout = s.uniform_int(1, 3);
      const int64_t sp = s.uniform_int(3, 4);
      const int stride = static_cast<int>(s.uniform_int(1, 2));
      const int pad = static_cast<int>(s.uniform_int(0, 1));
      if ((sp + 2 * pad - 3) / stride + 1 < 1) continue;
      const double err = fd_max_rel_err(
          [&](Graph& g, const std::vector<Tensor>& in) {
            return probe_reduce(g, g.conv3d(in[0], in[1], in[2], stride, pad),
                                600 + t);
          },
          {random_tensor({cin, sp, sp, sp}, s),
           random_tensor({cout, cin, 3, 3, 3}, s), random_tensor({cout}, s)});
      CHECK(err < kTol);
    }
  }

  SUBCASE("relu") {
    for (int t = 0; t < kSeeds; ++t) {
      rng::Stream s(300 + static_cast<uint64_t>(t));
      const double err = fd_max_rel_err(
          [&](Graph& g, const std::vector<Tensor>& in) {
            return probe_reduce(g, g.relu(in[0]), 700 + t);
          },
          {random_tensor_nonzero({2, 3, 4}, s)});
      CHECK(err < kTol);
    }
  }

  SUBCASE("sigmoid") {
    for (int t = 0; t < kSeeds; ++t) {
      rng::Stream s(400 + static_cast<uint64_t>(t));
      const double err = fd_max_rel_err(
          [&](Graph& g, const std::vector<Tensor>& in) {
            return probe_reduce(g, g.sigmoid(in[0]), 800 + t);
          },
          {random_tensor({4, 4}, s, -3.0, 3.0)});
      CHECK(err < kTol);
    }
  }

  SUBCASE("softmax") {
    for (int t = 0; t < kSeeds; ++t) {
      rng::Stream s(500 + static_cast<uint64_t>(t));
      const int axis = static_cast<int>(s.uniform_int(0, 1));
      const double err = fd_max_rel_err(
          [&](Graph& g, const std::vector<Tensor>& in) {
            return probe_reduce(g, g.softmax(in[0], axis), 900 + t);
          },
          {random_tensor({3, 4}, s, -2.0, 2.0)});
      CHECK(err < kTol);
    }
  }

  SUBCASE("add sub mul scale") {
    for (int t = 0; t < kSeeds; ++t) {
      rng::Stream s(600 + static_cast<uint64_t>(t));
      const Tensor a = random_tensor({2, 3}, s);
      const Tensor b = random_tensor({2, 3}, s);
      const double c = s.uniform(-2.0, 2.0);
      const double err = fd_max_rel_err(
          [&](Graph& g, const std::vector<Tensor>& in) {
            const Tensor mixed =
                g.add(g.sub(in[0], in[1]), g.scale(g.mul(in[0], in[1]), c));
            return probe_reduce(g, mixed, 1000 + t);
          },
          {a, b});
      CHECK(err < kTol);
    }
  }

  SUBCASE("mul with suffix broadcast") {
    for (int t = 0; t < kSeeds; ++t) {
      rng::Stream s(700 + static_cast<uint64_t>(t));
      const double err = fd_max_rel_err(
          [&](Graph& g, const std::vector<Tensor>& in) {
            return probe_reduce(g, g.mul(in[0], in[1]), 1100 + t);
          },
          {random_tensor({3, 2, 2, 2}, s), random_tensor({2, 2, 2}, s)});
      CHECK(err < kTol);
    }
  }

  SUBCASE("reductions") {
    for (int t = 0; t < kSeeds; ++t) {
      rng::Stream s(800 + static_cast<uint64_t>(t));
      // Channel max needs a clear margin between the top two channels so
      // the finite-difference step cannot flip the argmax.
      Tensor x = random_tensor({3, 2, 2, 2}, s);
      const int64_t sp = 8;
      for (int64_t i = 0; i < sp; ++i) {
        for (int64_t c = 0; c < 3; ++c) x[c * sp + i] += 0.2 * static_cast<double>(c * ((i + c) % 3));
        double top1 = -1e9, top2 = -1e9;
        for (int64_t c = 0; c < 3; ++c) {
          const double v = x[c * sp + i];
          if (v > top1) {
            top2 = top1;
            top1 = v;
          } else if (v > top2) {
            top2 = v;
          }
        }
        if (top1 - top2 < 1e-3) x[i] += 0.01;  // nudge channel 0
      }
      const double err = fd_max_rel_err(
          [&](Graph& g, const std::vector<Tensor>& in) {
            const Tensor parts = g.concat(
                {g.sum_spatial(in[0]),
                 g.concat({g.mean(in[0]), g.sum(in[0])}, {2}),
                 probe_reduce(g, g.mean_channel(in[0]), 1200 + t),
                 probe_reduce(g, g.max_channel(in[0]), 1300 + t)},
                {7});
            return probe_reduce(g, parts, 1400 + t);
          },
          {x});
      CHECK(err < kTol);
    }
  }

  SUBCASE("concat gather") {
    for (int t = 0; t < kSeeds; ++t) {
      rng::Stream s(900 + static_cast<uint64_t>(t));
      std::vector<int64_t> idx;
      for (int i = 0; i < 4; ++i) idx.push_back(s.uniform_int(0, 5));
      const double err = fd_max_rel_err(
          [&](Graph& g, const std::vector<Tensor>& in) {
            const Tensor cat = g.concat({in[0], in[1]}, {6});
            return probe_reduce(g, g.gather(cat, idx), 1500 + t);
          },
          {random_tensor({2}, s), random_tensor({4}, s)});
      CHECK(err < kTol);
    }
  }

  SUBCASE("dropout train mode with fixed mask") {
    for (int t = 0; t < kSeeds; ++t) {
      rng::Stream s(1000 + static_cast<uint64_t>(t));
      const double err = fd_max_rel_err(
          [&](Graph& g, const std::vector<Tensor>& in) {
            return probe_reduce(
                g, g.dropout(in[0], 0.7, true, 42 + static_cast<uint64_t>(t)),
                1600 + t);
          },
          {random_tensor({3, 3}, s)});
      CHECK(err < kTol);
    }
  }

  SUBCASE("squared error and binary cross-entropy") {
    for (int t = 0; t < kSeeds; ++t) {
      rng::Stream s(1100 + static_cast<uint64_t>(t));
      const double err_mse = fd_max_rel_err(
          [&](Graph& g, const std::vector<Tensor>& in) {
            return g.squared_error(in[0], in[1]);
          },
          {random_tensor({4}, s), random_tensor({4}, s)});
      CHECK(err_mse < kTol);

      const double err_bce = fd_max_rel_err(
          [&](Graph& g, const std::vector<Tensor>& in) {
            return g.binary_cross_entropy(in[0], in[1]);
          },
          {random_tensor({3}, s, 0.05, 0.95), random_tensor({3}, s, 0.0, 1.0)});
      CHECK(err_bce < kTol);
    }
  }
}

TEST_CASE("grad_check utility") {
  // f(x) = sum x^2: exact for quadratics up to roundoff.
  auto f = [](const Tensor& t) {
    double acc = 0.0;
    for (double v : t.data) acc += v * v;
    return acc;
  };
  const Tensor x({2}, {3.0, -1.5});
  Tensor analytic({2}, {6.0, -3.0});
  auto res = ag::grad_check(f, analytic, x, 1e-5);
  CHECK(res.finite);
  CHECK(res.max_rel_err < 1e-6);

  // Constant function: zero analytic gradient, zero difference.
  auto fc = [](const Tensor&) { return 4.2; };
  const Tensor zeros({2}, {0.0, 0.0});
  res = ag::grad_check(fc, zeros, x, 1e-5);
  CHECK(res.max_rel_err == 0.0);

  // Non-finite values are reported with the coordinate index.
  auto fbad = [](const Tensor& t) { return std::log(t[0]); };
  res = ag::grad_check(fbad, zeros, Tensor({2}, {1e-6, 1.0}), 1e-5);
  CHECK_FALSE(res.finite);
  CHECK(res.worst_index == 0);
}

TEST_CASE("non-finite forward values are rejected") {
  Graph g;
  const Tensor x = g.leaf(Tensor({1}, {1e308}));
  CHECK_THROWS_AS(g.mul(g.scale(x, 10.0), x), NumericError);
}
