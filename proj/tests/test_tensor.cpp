#include <cmath>
#include <numeric>

#include "coffe/error.hpp"
#include "coffe/tensor.hpp"
#include "doctest.h"
#include "support/gradcheck.hpp"

using namespace coffe;
using coffe::testing::check_gradients;
using coffe::testing::random_tensor;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// loss = sum(op(x) * r) with a fixed random r, so upstream gradients are not all ones.
Tensor weighted_sum(Graph& g, const Tensor& y, const Tensor& r) { return sum(g, mul(g, y, r)); }

}  // namespace

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  CHECK_THROWS_AS(Tensor({0}, {}), DimensionError);
  Tensor s = Tensor::scalar(2.5);
  CHECK(s.numel() == 1);
  CHECK(s.item() == 2.5);
  Tensor t = Tensor::zeros({2, 2}, true);
  t.ensure_grad();
  CHECK(t.grad().size() == t.numel());
}

TEST_CASE("matmul") {
  Graph g(false);
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor eye({2, 2}, {1, 0, 0, 1});
  CHECK(values(matmul(g, a, eye)) == std::vector<double>{1, 2, 3, 4});
  CHECK(values(matmul(g, Tensor({1, 2}, {1, 2}), Tensor({2, 1}, {3, 4}))) ==
        std::vector<double>{11});
  CHECK_THROWS_AS(matmul(g, a, Tensor({3, 1}, {1, 2, 3})), DimensionError);

  SUBCASE("matches a triple-loop oracle") {
    Rng rng(3);
    Tensor x = random_tensor({3, 4}, rng), y = random_tensor({4, 2}, rng);
    Tensor z = matmul(g, x, y);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 2; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < 4; ++k) acc += x.data()[i * 4 + k] * y.data()[k * 2 + j];
        CHECK(std::abs(z.data()[i * 2 + j] - acc) <= 1e-12);
      }
  }
}

TEST_CASE("conv1d") {
  Graph g(false);
  Tensor x({1, 5}, {1, 2, 3, 4, 5});
  CHECK(values(conv1d(g, x, Tensor({1, 1, 3}, {0, 1, 0}), Tensor({1}, {0}))) ==
        std::vector<double>{2, 3, 4});
  CHECK(values(conv1d(g, x, Tensor({1, 1, 3}, {1, 1, 1}), Tensor({1}, {1}))) ==
        std::vector<double>{7, 10, 13});
  Tensor long_in = Tensor::zeros({1, 768});
  CHECK(conv1d(g, long_in, Tensor::zeros({4, 1, 3}), Tensor::zeros({4})).shape() == Shape{4, 766});
  CHECK_THROWS_AS(conv1d(g, Tensor::zeros({1, 2}), Tensor::zeros({1, 1, 3}), Tensor::zeros({1})),
                  DimensionError);
  CHECK_THROWS_AS(conv1d(g, Tensor::zeros({2, 5}), Tensor::zeros({1, 1, 3}), Tensor::zeros({1})),
                  DimensionError);

  SUBCASE("batched matches per-sample") {
    Rng rng(11);
    Tensor xb = random_tensor({3, 2, 9}, rng);
    Tensor w = random_tensor({4, 2, 3}, rng), b = random_tensor({4}, rng);
    Tensor yb = conv1d(g, xb, w, b);
    for (std::size_t s = 0; s < 3; ++s) {
      std::vector<double> slice(xb.data().begin() + s * 18, xb.data().begin() + (s + 1) * 18);
      Tensor ys = conv1d(g, Tensor({2, 9}, slice), w, b);
      for (std::size_t i = 0; i < ys.numel(); ++i) CHECK(ys.data()[i] == yb.data()[s * 28 + i]);
    }
  }
}

TEST_CASE("maxpool1d") {
  Graph g(false);
  CHECK(values(maxpool1d(g, Tensor({1, 4}, {1, 3, 2, 5}))) == std::vector<double>{3, 5});
  CHECK(values(maxpool1d(g, Tensor({1, 5}, {1, 3, 2, 5, 4}))) == std::vector<double>{3, 5});
  CHECK_THROWS_AS(maxpool1d(g, Tensor({1, 1}, {1})), DimensionError);

  SUBCASE("ties route the gradient to the first element") {
    Graph gr;
    Tensor x({1, 2}, {7, 7}, true);
    Tensor y = maxpool1d(gr, x);
    CHECK(y.item() == 7);
    gr.backward(sum(gr, y));
    CHECK(values(Tensor({2}, {x.grad()[0], x.grad()[1]})) == std::vector<double>{1, 0});
  }
  SUBCASE("output length is floor(L/2)") {
    for (std::size_t len = 2; len < 40; ++len)
      CHECK(maxpool1d(g, Tensor::zeros({3, len})).shape() == Shape{3, len / 2});
  }
}

TEST_CASE("relu") {
  Graph g;
  Tensor x({3}, {-1, 0, 2}, true);
  Tensor y = relu(g, x);
  CHECK(values(y) == std::vector<double>{0, 0, 2});
  g.backward(sum(g, y));
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 0.0);
  CHECK(x.grad()[2] == 1.0);
  Graph g2(false);
  Tensor pos({3}, {0.5, 1, 9});
  CHECK(values(relu(g2, pos)) == values(pos));
}

TEST_CASE("softmax") {
  Graph g(false);
  const Tensor uniform = softmax(g, Tensor({4}, {0, 0, 0, 0}));
  for (double v : uniform.data()) CHECK(v == doctest::Approx(0.25));
  Tensor two = softmax(g, Tensor({2}, {0, std::log(2.0)}));
  CHECK(two.data()[0] == doctest::Approx(1.0 / 3).epsilon(1e-14));
  CHECK(two.data()[1] == doctest::Approx(2.0 / 3).epsilon(1e-14));
  Tensor big = softmax(g, Tensor({2}, {1000, 1000}));
  CHECK(big.data()[0] == 0.5);
  CHECK(big.data()[1] == 0.5);
  CHECK_THROWS_AS(softmax(g, Tensor({2}, {0, NAN})), NumericError);

  SUBCASE("simplex and scaling-invariant argmax") {
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
      Tensor x = random_tensor({9}, rng, 3.0);
      Tensor y = softmax(g, x);
      const double total = std::accumulate(y.data().begin(), y.data().end(), 0.0);
      CHECK(std::abs(total - 1.0) <= 1e-9);
      for (double v : y.data()) CHECK(v > 0.0);
      const double c = 0.1 + 5.0 * rng.uniform();
      Tensor ys = softmax(g, scale(g, x, c));
      auto argmax = [](const Tensor& t) {
        return std::max_element(t.data().begin(), t.data().end()) - t.data().begin();
      };
      CHECK(argmax(ys) == argmax(x));
    }
  }
}

TEST_CASE("backward basics") {
  SUBCASE("sum gives all-ones") {
    Graph g;
    Tensor x = Tensor::zeros({2, 3}, true);
    g.backward(sum(g, x));
    for (double v : x.grad()) CHECK(v == 1.0);
  }
  SUBCASE("x*x at 3 gives 6") {
    Graph g;
    Tensor x = Tensor::scalar(3.0, true);
    g.backward(mul(g, x, x));
    CHECK(x.grad()[0] == 6.0);
  }
  SUBCASE("non-scalar loss is rejected") {
    Graph g;
    Tensor x = Tensor::zeros({2}, true);
    CHECK_THROWS_AS(g.backward(scale(g, x, 2.0)), UsageError);
  }
  SUBCASE("ops are swept in reverse order") {
    Graph g;
    Tensor x({1, 4}, {1, -2, 3, 4}, true);
    Tensor y = sum(g, maxpool1d(g, relu(g, x)));
    CHECK(g.op_names() == std::vector<std::string>{"relu", "maxpool1d", "sum"});
    g.backward(y);
    CHECK(values(Tensor({4}, {x.grad().begin(), x.grad().end()})) ==
          std::vector<double>{1, 0, 0, 1});
  }
  SUBCASE("unused leaves still receive a zero gradient") {
    Graph g;
    Tensor a = Tensor::scalar(1.0, true), b = Tensor::scalar(2.0, true);
    Tensor y = mul(g, a, Tensor::scalar(5.0));
    Tensor unused = add(g, b, Tensor::scalar(1.0));
    g.backward(y);
    CHECK(a.grad()[0] == 5.0);
    CHECK(b.has_grad());
    CHECK(b.grad()[0] == 0.0);
  }
}

TEST_CASE("per-op gradients match central differences") {
  // Each op is checked on several random draws; across all draws every op
  // sees well over 100 random points.
  Rng rng(2024);
  constexpr double kTol = 1e-4;
  std::size_t total_points = 0;
  auto expect_ok = [&](const char* op, const coffe::testing::GradCheckResult& r) {
    INFO(op << ": " << r.worst);
    CHECK(r.max_error <= kTol);
    total_points += r.checked;
  };
  for (int trial = 0; trial < 4; ++trial) {
    {
      Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 5}, rng);
      Tensor r = random_tensor({3, 5}, rng);
      expect_ok("matmul", check_gradients({a, b}, [&](Graph& g) { return weighted_sum(g, matmul(g, a, b), r); }));
    }
    {
      Tensor x = random_tensor({2, 3, 9}, rng), w = random_tensor({4, 3, 3}, rng),
             b = random_tensor({4}, rng), r = random_tensor({2, 4, 7}, rng);
      expect_ok("conv1d", check_gradients({x, w, b}, [&](Graph& g) {
                  return weighted_sum(g, conv1d(g, x, w, b), r);
                }));
    }
    {
      Tensor x = random_tensor({3, 11}, rng), r = random_tensor({3, 5}, rng);
      expect_ok("maxpool1d", check_gradients({x}, [&](Graph& g) { return weighted_sum(g, maxpool1d(g, x), r); }));
    }
    {
      Tensor x = random_tensor({30}, rng), r = random_tensor({30}, rng);
      expect_ok("relu", check_gradients({x}, [&](Graph& g) { return weighted_sum(g, relu(g, x), r); }));
    }
    {
      Tensor x = random_tensor({3, 8}, rng, 2.0), r = random_tensor({3, 8}, rng);
      expect_ok("softmax", check_gradients({x}, [&](Graph& g) { return weighted_sum(g, softmax(g, x), r); }));
    }
    {
      Tensor x = random_tensor({4, 6}, rng), b = random_tensor({6}, rng), r = random_tensor({4, 6}, rng);
      expect_ok("add_bias", check_gradients({x, b}, [&](Graph& g) { return weighted_sum(g, add_bias(g, x, b), r); }));
    }
    {
      Tensor a = random_tensor({2, 3}, rng), b = random_tensor({2, 5}, rng), r = random_tensor({2, 8}, rng);
      expect_ok("concat_cols", check_gradients({a, b}, [&](Graph& g) {
                  return weighted_sum(g, concat_cols(g, a, b), r);
                }));
    }
    {
      Tensor x = random_tensor({2, 3, 6}, rng), r = random_tensor({2, 12}, rng);
      expect_ok("narrow+flatten", check_gradients({x}, [&](Graph& g) {
                  return weighted_sum(g, flatten(g, narrow_last(g, x, 4)), r);
                }));
    }
    {
      Tensor x = random_tensor({5, 7}, rng), r = random_tensor({5, 7}, rng);
      expect_ok("dropout", check_gradients({x}, [&](Graph& g) {
                  return weighted_sum(g, dropout(g, x, 0.3, 99), r);
                }));
    }
    {
      Tensor a = random_tensor({6}, rng), b = random_tensor({6}, rng);
      expect_ok("mul/add/scale/mean", check_gradients({a, b}, [&](Graph& g) {
                  return mean(g, scale(g, add(g, mul(g, a, b), a), 1.7));
                }));
    }
  }
  CHECK(total_points >= 100 * 10);
}

TEST_CASE("dropout") {
  Graph g(false);
  Tensor x = Tensor({1000}, std::vector<double>(1000, 1.0));
  Tensor a = dropout(g, x, 0.3, 42), b = dropout(g, x, 0.3, 42), c = dropout(g, x, 0.3, 43);
  CHECK(values(a) == values(b));
  CHECK(values(a) != values(c));
  std::size_t dropped = 0;
  for (double v : a.data()) {
    CHECK((v == 0.0 || std::abs(v - 1.0 / 0.7) < 1e-15));
    dropped += v == 0.0;
  }
  CHECK(dropped > 230);
  CHECK(dropped < 370);
  CHECK_THROWS_AS(dropout(g, x, 1.0, 1), UsageError);
}

TEST_CASE("replayed op sequences are bit-identical") {
  auto run = [] {
    Rng rng(77);
    Tensor x = random_tensor({4, 2, 12}, rng), w = random_tensor({5, 2, 3}, rng, 0.5);
    Tensor b = random_tensor({5}, rng), wd = random_tensor({25, 3}, rng);
    x.set_requires_grad(true);
    w.set_requires_grad(true);
    Graph g;
    Tensor h = flatten(g, maxpool1d(g, relu(g, conv1d(g, x, w, b))));
    Tensor y = softmax(g, matmul(g, h, wd));
    Tensor loss = sum(g, mul(g, y, y));
    g.backward(loss);
    std::vector<double> out = values(y);
    out.insert(out.end(), w.grad().begin(), w.grad().end());
    out.insert(out.end(), x.grad().begin(), x.grad().end());
    return out;
  };
  CHECK(run() == run());
}
