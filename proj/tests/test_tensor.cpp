#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <vector>

#include "star/rng.hpp"
#include "star/tensor.hpp"
#include "support/finite_diff.hpp"

using namespace star;
using testsupport::check_gradients;
using testsupport::random_leaf;

namespace {

constexpr double kPrimitiveTol = 1e-5;
constexpr double kCompositeTol = 1e-4;

void expect_grad_ok(std::vector<Tensor<double>>& leaves,
                    const std::function<Tensor<double>()>& build,
                    double tol = kPrimitiveTol) {
  auto result = check_gradients(leaves, build);
  INFO(result.worst);
  REQUIRE(result.max_rel_error <= tol);
}

}  // namespace

TEST_CASE("finite differences agree with every primitive", "[tensor][grad]") {
  SplitMix64 rng(2024);

  SECTION("add, same shape") {
    std::vector<Tensor<double>> leaves{random_leaf<double>({2, 3}, rng),
                                       random_leaf<double>({2, 3}, rng)};
    expect_grad_ok(leaves, [&] { return sum_all(multiply(add(leaves[0], leaves[1]), leaves[0])); });
  }
  SECTION("add, trailing broadcast") {
    std::vector<Tensor<double>> leaves{random_leaf<double>({2, 4, 3}, rng),
                                       random_leaf<double>({3}, rng)};
    expect_grad_ok(leaves, [&] {
      auto y = add(leaves[0], leaves[1]);
      return sum_all(multiply(y, y));
    });
  }
  SECTION("subtract") {
    std::vector<Tensor<double>> leaves{random_leaf<double>({3, 2}, rng),
                                       random_leaf<double>({3, 2}, rng)};
    expect_grad_ok(leaves, [&] {
      auto y = subtract(leaves[0], leaves[1]);
      return sum_all(multiply(y, y));
    });
  }
  SECTION("multiply and scale") {
    std::vector<Tensor<double>> leaves{random_leaf<double>({4}, rng),
                                       random_leaf<double>({4}, rng)};
    expect_grad_ok(leaves,
                   [&] { return sum_all(scale(multiply(leaves[0], leaves[1]), 0.37)); });
  }
  SECTION("relu") {
    std::vector<Tensor<double>> leaves{random_leaf<double>({3, 5}, rng)};
    expect_grad_ok(leaves, [&] { return sum_all(multiply(relu(leaves[0]), leaves[0])); });
  }
  SECTION("matmul 2d x 2d") {
    std::vector<Tensor<double>> leaves{random_leaf<double>({3, 4}, rng),
                                       random_leaf<double>({4, 2}, rng)};
    expect_grad_ok(leaves, [&] {
      auto y = matmul(leaves[0], leaves[1]);
      return sum_all(multiply(y, y));
    });
  }
  SECTION("matmul batched") {
    std::vector<Tensor<double>> leaves{random_leaf<double>({2, 3, 4}, rng),
                                       random_leaf<double>({2, 4, 2}, rng)};
    expect_grad_ok(leaves, [&] {
      auto y = matmul(leaves[0], leaves[1]);
      return sum_all(multiply(y, y));
    });
  }
  SECTION("matmul batched lhs, plain rhs") {
    std::vector<Tensor<double>> leaves{random_leaf<double>({2, 3, 4}, rng),
                                       random_leaf<double>({4, 5}, rng)};
    expect_grad_ok(leaves, [&] { return sum_all(matmul(leaves[0], leaves[1])); });
  }
  SECTION("matmul plain lhs, batched rhs") {
    std::vector<Tensor<double>> leaves{random_leaf<double>({3, 4}, rng),
                                       random_leaf<double>({2, 4, 5}, rng)};
    expect_grad_ok(leaves, [&] { return sum_all(matmul(leaves[0], leaves[1])); });
  }
  SECTION("transpose_last2") {
    std::vector<Tensor<double>> leaves{random_leaf<double>({2, 3, 4}, rng)};
    expect_grad_ok(leaves, [&] {
      auto y = transpose_last2(leaves[0]);
      return sum_all(multiply(y, y));
    });
  }
  SECTION("softmax_lastdim") {
    std::vector<Tensor<double>> leaves{random_leaf<double>({3, 4}, rng),
                                       random_leaf<double>({3, 4}, rng)};
    expect_grad_ok(leaves,
                   [&] { return sum_all(multiply(softmax_lastdim(leaves[0]), leaves[1])); });
  }
  SECTION("cross_entropy_from_logits") {
    std::vector<Tensor<double>> leaves{random_leaf<double>({4, 5}, rng)};
    const std::vector<int64_t> targets{0, 3, 2, 4};
    expect_grad_ok(leaves, [&] { return cross_entropy_from_logits(leaves[0], targets); });
  }
  SECTION("sum_all and mean_all") {
    std::vector<Tensor<double>> leaves{random_leaf<double>({2, 3}, rng)};
    expect_grad_ok(leaves, [&] { return mean_all(multiply(leaves[0], leaves[0])); });
  }
  SECTION("sum_axis and mean_axis on every axis") {
    for (int64_t axis = 0; axis < 3; ++axis) {
      std::vector<Tensor<double>> leaves{random_leaf<double>({2, 3, 4}, rng)};
      expect_grad_ok(leaves, [&] {
        auto y = mean_axis(leaves[0], axis);
        return sum_all(multiply(y, y));
      });
      expect_grad_ok(leaves, [&] {
        auto y = sum_axis(leaves[0], axis);
        return sum_all(multiply(y, y));
      });
    }
  }
  SECTION("reshape") {
    std::vector<Tensor<double>> leaves{random_leaf<double>({2, 6}, rng)};
    expect_grad_ok(leaves, [&] {
      auto y = reshape(leaves[0], {3, 4});
      return sum_all(multiply(y, y));
    });
  }
  SECTION("mean_pool_axis") {
    std::vector<Tensor<double>> leaves{random_leaf<double>({2, 6, 3}, rng)};
    expect_grad_ok(leaves, [&] {
      auto y = mean_pool_axis(leaves[0], 1, 3);
      return sum_all(multiply(y, y));
    });
  }
  SECTION("concat_lastdim") {
    std::vector<Tensor<double>> leaves{random_leaf<double>({2, 2}, rng),
                                       random_leaf<double>({2, 3}, rng),
                                       random_leaf<double>({2, 1}, rng)};
    expect_grad_ok(leaves, [&] {
      auto y = concat_lastdim<double>({leaves[0], leaves[1], leaves[2]});
      return sum_all(multiply(y, y));
    });
  }
  SECTION("slice_lastdim") {
    std::vector<Tensor<double>> leaves{random_leaf<double>({3, 6}, rng)};
    expect_grad_ok(leaves, [&] {
      auto y = slice_lastdim(leaves[0], 1, 3);
      return sum_all(multiply(y, y));
    });
  }
  SECTION("gather_rows with repeats") {
    std::vector<Tensor<double>> leaves{random_leaf<double>({4, 3}, rng)};
    const std::vector<int64_t> idx{2, 0, 2, 3};
    expect_grad_ok(leaves, [&] {
      auto y = gather_rows(leaves[0], idx);
      return sum_all(multiply(y, y));
    });
  }
  SECTION("l2_normalize_lastdim") {
    std::vector<Tensor<double>> leaves{random_leaf<double>({3, 4}, rng),
                                       random_leaf<double>({3, 4}, rng)};
    expect_grad_ok(leaves,
                   [&] { return sum_all(multiply(l2_normalize_lastdim(leaves[0]), leaves[1])); });
  }
}

TEST_CASE("composite graph passes a finite-difference check", "[tensor][grad]") {
  SplitMix64 rng(77);
  std::vector<Tensor<double>> leaves{
      random_leaf<double>({2, 3}, rng), random_leaf<double>({3, 4}, rng),
      random_leaf<double>({4}, rng), random_leaf<double>({2, 4}, rng)};
  const std::vector<int64_t> targets{1, 3};
  auto build = [&] {
    auto h = relu(add(matmul(leaves[0], leaves[1]), leaves[2]));
    auto z = multiply(l2_normalize_lastdim(h), softmax_lastdim(leaves[3]));
    return cross_entropy_from_logits(z, targets);
  };
  auto result = check_gradients<double>(leaves, build);
  INFO(result.worst);
  REQUIRE(result.max_rel_error <= kCompositeTol);
}

TEST_CASE("matmul worked examples", "[tensor]") {
  auto eye = Tensor<double>::from_data({2, 2}, {1, 0, 0, 1});
  auto m = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4});
  auto prod = matmul(eye, m);
  for (int i = 0; i < 4; ++i) REQUIRE(prod.data()[i] == m.data()[i]);

  auto row = Tensor<double>::from_data({1, 2}, {1, 2});
  auto col = Tensor<double>::from_data({2, 1}, {3, 4});
  REQUIRE(matmul(row, col).item() == 11.0);
}

TEST_CASE("softmax is stable for extreme logits", "[tensor]") {
  auto y = softmax_lastdim(Tensor<double>::from_data({1, 2}, {1000.0, 0.0}));
  REQUIRE(y.data()[0] == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(y.data()[1] == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("linear and quadratic gradient identities", "[tensor]") {
  auto p = Tensor<double>::from_data({2, 3}, {1, -2, 3, 0.5, -0.5, 4}, true);
  sum_all(p).backward();
  for (int i = 0; i < 6; ++i) REQUIRE(p.grad()[i] == Catch::Approx(1.0));
  p.zero_grad();
  scale(sum_all(multiply(p, p)), 0.5).backward();
  for (int i = 0; i < 6; ++i) REQUIRE(p.grad()[i] == Catch::Approx(p.data()[i]));
}

TEST_CASE("cross entropy matches a naive exp/normalize computation", "[tensor]") {
  SplitMix64 rng(31);
  auto logits = random_leaf<double>({8, 5}, rng);
  std::vector<int64_t> targets;
  for (int i = 0; i < 8; ++i) targets.push_back(static_cast<int64_t>(rng.next_below(5)));
  double naive = 0.0;
  for (int64_t i = 0; i < 8; ++i) {
    double denom = 0.0;
    for (int64_t j = 0; j < 5; ++j) denom += std::exp(logits.data()[i * 5 + j]);
    naive += -std::log(std::exp(logits.data()[i * 5 + targets[static_cast<size_t>(i)]]) / denom);
  }
  naive /= 8.0;
  REQUIRE(cross_entropy_from_logits(logits, targets).item() ==
          Catch::Approx(naive).epsilon(1e-12));
}

TEST_CASE("single sgd steps match hand arithmetic", "[tensor]") {
  ParameterStore<double> store;
  auto p = store.add("p", Tensor<double>::from_data({1}, {1.0}));
  sum_all(p).backward();  // grad = 1
  sgd_step(store, 0.1, 0.0);
  REQUIRE(p.data()[0] == Catch::Approx(0.9).epsilon(1e-12));

  ParameterStore<double> store2;
  auto q = store2.add("q", Tensor<double>::from_data({1}, {1.0}));
  q.zero_grad();  // grad = 0, decay only
  sgd_step(store2, 0.1, 5e-4);
  REQUIRE(q.data()[0] == Catch::Approx(0.99995).epsilon(1e-12));
}

TEST_CASE("matmul agrees with a naive triple loop", "[tensor]") {
  SplitMix64 rng(8);
  auto a = random_leaf<double>({5, 7}, rng);
  auto b = random_leaf<double>({7, 4}, rng);
  auto c = matmul(a, b);
  for (int64_t i = 0; i < 5; ++i) {
    for (int64_t j = 0; j < 4; ++j) {
      double acc = 0.0;
      for (int64_t k = 0; k < 7; ++k) acc += a.data()[i * 7 + k] * b.data()[k * 4 + j];
      REQUIRE(c.data()[i * 4 + j] == Catch::Approx(acc).margin(1e-12));
    }
  }
}

TEST_CASE("cross entropy reproduces closed-form values", "[tensor]") {
  SECTION("two equal logits give ln 2") {
    auto logits = Tensor<double>::from_data({1, 2}, {0.0, 0.0});
    REQUIRE(cross_entropy_from_logits(logits, {0}).item() ==
            Catch::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SECTION("three equal logits give ln 3") {
    auto logits = Tensor<double>::from_data({1, 3}, {5.0, 5.0, 5.0});
    REQUIRE(cross_entropy_from_logits(logits, {2}).item() ==
            Catch::Approx(std::log(3.0)).epsilon(1e-12));
  }
  SECTION("margin-2 pair gives ln(1 + e^-2)") {
    auto logits = Tensor<double>::from_data({1, 2}, {2.0, 0.0});
    REQUIRE(cross_entropy_from_logits(logits, {0}).item() ==
            Catch::Approx(std::log(1.0 + std::exp(-2.0))).epsilon(1e-12));
  }
  SECTION("mean over rows") {
    auto logits = Tensor<double>::from_data({2, 2}, {0.0, 0.0, 2.0, 0.0});
    const double want = 0.5 * (std::log(2.0) + std::log(1.0 + std::exp(-2.0)));
    REQUIRE(cross_entropy_from_logits(logits, {0, 0}).item() ==
            Catch::Approx(want).epsilon(1e-12));
  }
  SECTION("shift invariance") {
    auto a = Tensor<double>::from_data({1, 3}, {1.0, -0.5, 0.25});
    auto b = Tensor<double>::from_data({1, 3}, {101.0, 99.5, 100.25});
    REQUIRE(cross_entropy_from_logits(a, {1}).item() ==
            Catch::Approx(cross_entropy_from_logits(b, {1}).item()).epsilon(1e-12));
  }
}

TEST_CASE("softmax rows are positive and sum to one", "[tensor]") {
  SplitMix64 rng(9);
  auto x = random_leaf<double>({4, 6}, rng);
  auto y = softmax_lastdim(x);
  for (int64_t i = 0; i < 4; ++i) {
    double sum = 0.0;
    for (int64_t j = 0; j < 6; ++j) {
      const double v = y.data()[i * 6 + j];
      REQUIRE(v > 0.0);
      sum += v;
    }
    REQUIRE(sum == Catch::Approx(1.0).epsilon(1e-12));
  }
  auto uniform = softmax_lastdim(Tensor<double>::from_data({1, 4}, {3.0, 3.0, 3.0, 3.0}));
  for (int64_t j = 0; j < 4; ++j) {
    REQUIRE(uniform.data()[j] == Catch::Approx(0.25).epsilon(1e-12));
  }
}

TEST_CASE("l2_normalize produces unit rows that keep direction", "[tensor]") {
  auto x = Tensor<double>::from_data({2, 2}, {3.0, 4.0, -5.0, 12.0});
  auto y = l2_normalize_lastdim(x);
  REQUIRE(y.data()[0] == Catch::Approx(0.6).epsilon(1e-12));
  REQUIRE(y.data()[1] == Catch::Approx(0.8).epsilon(1e-12));
  REQUIRE(y.data()[2] == Catch::Approx(-5.0 / 13.0).epsilon(1e-12));
  REQUIRE(y.data()[3] == Catch::Approx(12.0 / 13.0).epsilon(1e-12));
}

TEST_CASE("shape and index violations raise typed errors", "[tensor]") {
  auto a = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4});
  auto b = Tensor<double>::from_data({3}, {1, 2, 3});
  REQUIRE_THROWS_AS(add(a, b), DimensionError);
  REQUIRE_THROWS_AS(subtract(a, b), DimensionError);
  REQUIRE_THROWS_AS(matmul(a, b), DimensionError);
  REQUIRE_THROWS_AS(reshape(a, {5}), DimensionError);
  REQUIRE_THROWS_AS(slice_lastdim(a, 1, 2), DimensionError);
  REQUIRE_THROWS_AS(gather_rows(a, {2}), IndexError);
  REQUIRE_THROWS_AS(cross_entropy_from_logits(a, {0, 2}), IndexError);
  REQUIRE_THROWS_AS(mean_pool_axis(a, 0, 3), ConfigError);
  REQUIRE_THROWS_AS(sum_axis(a, 2), DimensionError);
  REQUIRE_THROWS_AS(a.backward(), ContractError);
  REQUIRE_THROWS_AS(a.grad(), ContractError);
}

TEST_CASE("non-finite values are rejected as soon as they appear", "[tensor]") {
  REQUIRE_THROWS_AS(Tensor<double>::from_data({2}, {1.0, std::nan("")}, false), NumericError);
  auto huge = Tensor<double>::full({2}, 1e200);
  REQUIRE_THROWS_AS(multiply(huge, huge), NumericError);
  auto zero = Tensor<double>::zeros({1, 2});
  REQUIRE_THROWS_AS(l2_normalize_lastdim(zero), NumericError);
}

TEST_CASE("backward accumulates across repeated calls", "[tensor]") {
  auto x = Tensor<double>::from_data({2}, {1.0, 2.0}, true);
  auto loss = sum_all(multiply(x, x));
  loss.backward();
  REQUIRE(x.grad()[0] == Catch::Approx(2.0));
  REQUIRE(x.grad()[1] == Catch::Approx(4.0));
  loss.backward();
  REQUIRE(x.grad()[0] == Catch::Approx(4.0));
  REQUIRE(x.grad()[1] == Catch::Approx(8.0));
}

TEST_CASE("a leaf used twice collects both contributions", "[tensor]") {
  auto x = Tensor<double>::from_data({2}, {3.0, -1.0}, true);
  auto loss = sum_all(add(multiply(x, x), x));  // d/dx = 2x + 1
  loss.backward();
  REQUIRE(x.grad()[0] == Catch::Approx(7.0));
  REQUIRE(x.grad()[1] == Catch::Approx(-1.0));
}

TEST_CASE("constant inputs stay out of the backward graph", "[tensor]") {
  auto p = Tensor<double>::from_data({2}, {1.0, 1.0}, true);
  auto c = Tensor<double>::from_data({2}, {5.0, 6.0});
  auto loss = sum_all(multiply(p, c));
  loss.backward();
  REQUIRE(p.grad()[0] == Catch::Approx(5.0));
  REQUIRE_FALSE(c.has_grad());
}

TEST_CASE("sgd_step applies lr, weight decay, and grad reset", "[tensor]") {
  ParameterStore<double> store;
  auto p = store.add("p", Tensor<double>::from_data({2}, {1.0, 2.0}));
  auto loss = sum_all(multiply(p, Tensor<double>::from_data({2}, {0.2, -0.4})));
  loss.backward();
  sgd_step(store, 0.5, 0.0);
  REQUIRE(p.data()[0] == Catch::Approx(0.9).epsilon(1e-12));
  REQUIRE(p.data()[1] == Catch::Approx(2.2).epsilon(1e-12));
  // Grads were zeroed, so a plain decay-only step moves p by -lr*wd*p.
  sgd_step(store, 0.1, 0.5);
  REQUIRE(p.data()[0] == Catch::Approx(0.9 * 0.95).epsilon(1e-12));
  REQUIRE(p.data()[1] == Catch::Approx(2.2 * 0.95).epsilon(1e-12));
}

TEST_CASE("sgd_step contract violations", "[tensor]") {
  ParameterStore<double> store;
  store.add("p", Tensor<double>::from_data({1}, {1.0}));
  REQUIRE_THROWS_AS(sgd_step(store, 0.0, 0.0), ContractError);
  REQUIRE_THROWS_AS(sgd_step(store, 0.1, -1.0), ContractError);
  REQUIRE_THROWS_AS(sgd_step(store, 0.1, 0.0), ContractError);  // no grads yet
  REQUIRE_THROWS_AS(store.add("p", Tensor<double>::zeros({1})), ValidationError);
}

TEST_CASE("frozen parameters are skipped by sgd_step", "[tensor]") {
  ParameterStore<double> store;
  auto p = store.add("live", Tensor<double>::from_data({1}, {1.0}));
  auto q = store.add("frozen", Tensor<double>::from_data({1}, {4.0}));
  q.set_requires_grad(false);
  auto loss = sum_all(p);
  loss.backward();
  sgd_step(store, 0.5, 0.0);
  REQUIRE(p.data()[0] == Catch::Approx(0.5));
  REQUIRE(q.data()[0] == Catch::Approx(4.0));
}

TEST_CASE("gradient descent drives a quadratic to its minimum", "[tensor]") {
  ParameterStore<double> store;
  auto p = store.add("p", Tensor<double>::from_data({1}, {-4.0}));
  for (int step = 0; step < 200; ++step) {
    auto diff = subtract(p, Tensor<double>::from_data({1}, {3.0}));
    auto loss = sum_all(multiply(diff, diff));
    loss.backward();
    sgd_step(store, 0.1, 0.0);
  }
  REQUIRE(std::fabs(p.data()[0] - 3.0) < 1e-3);
}

TEST_CASE("identical seeds give bit-identical computation", "[tensor]") {
  auto run = [] {
    SplitMix64 rng(123);
    auto a = random_leaf<float>({8, 8}, rng);
    auto b = random_leaf<float>({8, 8}, rng);
    auto y = softmax_lastdim(matmul(relu(a), transpose_last2(b)));
    std::vector<float> out(y.data().begin(), y.data().end());
    return out;
  };
  auto r1 = run();
  auto r2 = run();
  REQUIRE(std::memcmp(r1.data(), r2.data(), r1.size() * sizeof(float)) == 0);
}
