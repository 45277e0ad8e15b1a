#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "star/skeleton.hpp"
#include "star/visual.hpp"
#include "support/finite_diff.hpp"

using namespace star;
using testsupport::random_leaf;

namespace {

// Explicit-loop reference for prompt-queried multi-head attention. Written
// against the math, not the tensor ops, so it exercises none of the code it
// checks.
struct NaiveAttention {
  std::vector<double> output;          // m x C
  std::vector<double> weights;         // heads x m x N softmax rows
};

NaiveAttention naive_cross_attention(const std::vector<double>& tokens, int64_t n,
                                     const std::vector<double>& prompt, int64_t m,
                                     const std::vector<double>& wq,
                                     const std::vector<double>& wk,
                                     const std::vector<double>& wv,
                                     const std::vector<double>& wo, int64_t c, int64_t heads) {
  const int64_t d = c / heads;
  auto matvec = [&](const std::vector<double>& rows, int64_t row, const std::vector<double>& w,
                    int64_t col) {
    double acc = 0.0;
    for (int64_t i = 0; i < c; ++i) acc += rows[row * c + i] * w[i * c + col];
    return acc;
  };
  std::vector<double> q(m * c), k(n * c), v(n * c);
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < c; ++j) q[i * c + j] = matvec(prompt, i, wq, j);
  }
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < c; ++j) {
      k[i * c + j] = matvec(tokens, i, wk, j);
      v[i * c + j] = matvec(tokens, i, wv, j);
    }
  }
  NaiveAttention result;
  result.weights.assign(static_cast<size_t>(heads * m * n), 0.0);
  std::vector<double> concat(m * c, 0.0);
  for (int64_t h = 0; h < heads; ++h) {
    for (int64_t qi = 0; qi < m; ++qi) {
      std::vector<double> scores(static_cast<size_t>(n));
      for (int64_t ki = 0; ki < n; ++ki) {
        double dot = 0.0;
        for (int64_t x = 0; x < d; ++x) dot += q[qi * c + h * d + x] * k[ki * c + h * d + x];
        scores[static_cast<size_t>(ki)] = dot / std::sqrt(static_cast<double>(d));
      }
      double denom = 0.0;
      for (double s : scores) denom += std::exp(s);
      for (int64_t ki = 0; ki < n; ++ki) {
        const double w = std::exp(scores[static_cast<size_t>(ki)]) / denom;
        result.weights[static_cast<size_t>((h * m + qi) * n + ki)] = w;
        for (int64_t x = 0; x < d; ++x) concat[qi * c + h * d + x] += w * v[ki * c + h * d + x];
      }
    }
  }
  result.output.assign(static_cast<size_t>(m * c), 0.0);
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < c; ++j) result.output[i * c + j] = matvec(concat, i, wo, j);
  }
  return result;
}

std::vector<double> to_vec(const Tensor<double>& t) {
  return {t.data().begin(), t.data().end()};
}

}  // namespace

TEST_CASE("toy encoder produces the documented grid shape", "[visual]") {
  // 3x32x25x1 input, six parts, C=16, stride 4: the arm part (6 joints)
  // becomes an 8x6 grid of 16-channel tokens.
  ParameterStore<float> store;
  ToyEncoder<float> enc(store, 11, 16, 4);
  const auto layout = JointLayout::ntu25();
  const auto six = PartitionStrategy::from_regions(layout, 6);
  SplitMix64 rng(2);
  auto x = random_leaf<float>({3, 32, 25, 1}, rng);
  auto parts = decompose_parts(x, six);
  const int64_t arm = 2;
  REQUIRE(six.part_names[static_cast<size_t>(arm)] == "arm");
  auto tokens = batch_token_inputs<float>({&parts[static_cast<size_t>(arm)]}, 0);
  REQUIRE(tokens.shape() == Shape{1, 32 * 6, 6});
  auto feats = enc.encode(tokens, 32, 6);
  REQUIRE(feats.shape() == Shape{1, 8 * 6, 16});
}

TEST_CASE("constant-in-time inputs stay constant after pooling", "[visual]") {
  ParameterStore<float> store;
  ToyEncoder<float> enc(store, 3, 8, 2);
  // one joint fixed in space over 8 frames
  std::vector<float> data(static_cast<size_t>(3 * 8 * 1 * 1));
  for (int64_t c = 0; c < 3; ++c) {
    for (int64_t t = 0; t < 8; ++t) data[static_cast<size_t>(c * 8 + t)] = 0.3f * (c + 1);
  }
  auto part = Tensor<float>::from_data({3, 8, 1, 1}, std::move(data));
  auto feats = enc.encode(batch_token_inputs<float>({&part}, 0), 8, 1);
  REQUIRE(feats.shape() == Shape{1, 4, 8});
  for (int64_t t = 1; t < 4; ++t) {
    for (int64_t ch = 0; ch < 8; ++ch) {
      REQUIRE(feats.data()[t * 8 + ch] == Catch::Approx(feats.data()[ch]).margin(1e-6));
    }
  }
}

TEST_CASE("token inputs carry coordinates and temporal differences", "[visual]") {
  std::vector<float> data(static_cast<size_t>(3 * 2 * 1 * 1));
  // frame 0: (1, 2, 3); frame 1: (1.5, 1.0, 3.25)
  data[0] = 1.0f; data[1] = 1.5f;
  data[2] = 2.0f; data[3] = 1.0f;
  data[4] = 3.0f; data[5] = 3.25f;
  auto part = Tensor<float>::from_data({3, 2, 1, 1}, std::move(data));
  auto row = person_token_input(part, 0);
  REQUIRE(row.size() == 12);
  REQUIRE(row[0] == 1.0f);   // x at t=0
  REQUIRE(row[3] == 0.0f);   // dx at t=0
  REQUIRE(row[6] == 1.5f);   // x at t=1
  REQUIRE(row[9] == 0.5f);   // dx
  REQUIRE(row[10] == -1.0f); // dy
  REQUIRE(row[11] == 0.25f); // dz
}

TEST_CASE("cross attention matches the explicit-loop reference", "[visual][attention]") {
  SplitMix64 rng(77);
  SECTION("documented instance: m=3, N=5, heads=2, width=8") {
    auto tokens = random_leaf<double>({5, 8}, rng);
    auto prompt = random_leaf<double>({3, 8}, rng);
    auto wq = random_leaf<double>({8, 8}, rng);
    auto wk = random_leaf<double>({8, 8}, rng);
    auto wv = random_leaf<double>({8, 8}, rng);
    auto wo = random_leaf<double>({8, 8}, rng);
    auto got = cross_attend(tokens, prompt, wq, wk, wv, wo, 2);
    auto want = naive_cross_attention(to_vec(tokens), 5, to_vec(prompt), 3, to_vec(wq),
                                      to_vec(wk), to_vec(wv), to_vec(wo), 8, 2);
    REQUIRE(got.shape() == Shape{3, 8});
    for (int64_t i = 0; i < got.numel(); ++i) {
      REQUIRE(got.data()[i] == Catch::Approx(want.output[static_cast<size_t>(i)]).margin(1e-6));
    }
    for (double w : want.weights) REQUIRE(w >= 0.0);
    for (int64_t row = 0; row < 2 * 3; ++row) {
      double sum = 0.0;
      for (int64_t kk = 0; kk < 5; ++kk) sum += want.weights[static_cast<size_t>(row * 5 + kk)];
      REQUIRE(sum == Catch::Approx(1.0).epsilon(1e-6));
    }
  }
  SECTION("randomized small instances") {
    for (int trial = 0; trial < 30; ++trial) {
      const int64_t m = 1 + static_cast<int64_t>(rng.next_below(4));
      const int64_t n = 1 + static_cast<int64_t>(rng.next_below(6));
      const int64_t heads = 1 + static_cast<int64_t>(rng.next_below(2));
      const int64_t c = heads * (2 + static_cast<int64_t>(rng.next_below(3)));
      auto tokens = random_leaf<double>({n, c}, rng);
      auto prompt = random_leaf<double>({m, c}, rng);
      auto wq = random_leaf<double>({c, c}, rng);
      auto wk = random_leaf<double>({c, c}, rng);
      auto wv = random_leaf<double>({c, c}, rng);
      auto wo = random_leaf<double>({c, c}, rng);
      auto got = cross_attend(tokens, prompt, wq, wk, wv, wo, heads);
      auto want = naive_cross_attention(to_vec(tokens), n, to_vec(prompt), m, to_vec(wq),
                                        to_vec(wk), to_vec(wv), to_vec(wo), c, heads);
      REQUIRE(got.shape() == Shape{m, c});
      for (int64_t i = 0; i < got.numel(); ++i) {
        REQUIRE(got.data()[i] ==
                Catch::Approx(want.output[static_cast<size_t>(i)]).margin(1e-6));
      }
    }
  }
}

TEST_CASE("single-token attention collapses to the value projection", "[visual][attention]") {
  SplitMix64 rng(31);
  auto token = random_leaf<double>({1, 6}, rng);
  auto wq = random_leaf<double>({6, 6}, rng);
  auto wk = random_leaf<double>({6, 6}, rng);
  auto wv = random_leaf<double>({6, 6}, rng);
  auto wo = random_leaf<double>({6, 6}, rng);
  auto expected = matmul(matmul(token, wv), wo);  // 1 x 6

  auto prompt_a = random_leaf<double>({4, 6}, rng);
  auto prompt_b = random_leaf<double>({4, 6}, rng);
  auto out_a = cross_attend(token, prompt_a, wq, wk, wv, wo, 3);
  auto out_b = cross_attend(token, prompt_b, wq, wk, wv, wo, 3);
  for (int64_t i = 0; i < 4; ++i) {
    for (int64_t j = 0; j < 6; ++j) {
      REQUIRE(out_a.data()[i * 6 + j] == Catch::Approx(expected.data()[j]).margin(1e-12));
      REQUIRE(out_b.data()[i * 6 + j] == Catch::Approx(expected.data()[j]).margin(1e-12));
    }
  }

  SECTION("two identical tokens give the same result") {
    std::vector<double> doubled(token.data().begin(), token.data().end());
    doubled.insert(doubled.end(), token.data().begin(), token.data().end());
    auto twin = Tensor<double>::from_data({2, 6}, std::move(doubled));
    auto out = cross_attend(twin, prompt_a, wq, wk, wv, wo, 3);
    for (int64_t i = 0; i < 4; ++i) {
      for (int64_t j = 0; j < 6; ++j) {
        REQUIRE(out.data()[i * 6 + j] == Catch::Approx(expected.data()[j]).margin(1e-12));
      }
    }
  }
}

TEST_CASE("attention output row count tracks the prompt, not the tokens", "[visual]") {
  SplitMix64 rng(5);
  auto prompt = random_leaf<double>({3, 4}, rng);
  auto wq = random_leaf<double>({4, 4}, rng);
  auto wk = random_leaf<double>({4, 4}, rng);
  auto wv = random_leaf<double>({4, 4}, rng);
  auto wo = random_leaf<double>({4, 4}, rng);
  for (int64_t n : {1, 2, 7}) {
    auto tokens = random_leaf<double>({n, 4}, rng);
    REQUIRE(cross_attend(tokens, prompt, wq, wk, wv, wo, 2).shape() == Shape{3, 4});
  }
  auto batched = random_leaf<double>({2, 5, 4}, rng);
  REQUIRE(cross_attend(batched, prompt, wq, wk, wv, wo, 2).shape() == Shape{2, 3, 4});
  auto bad = random_leaf<double>({5, 6}, rng);
  REQUIRE_THROWS_AS(cross_attend(bad, prompt, wq, wk, wv, wo, 2), DimensionError);
}

TEST_CASE("part latent zero and constant-row cases", "[visual]") {
  ParameterStore<double> store;
  auto ffn = Mlp2<double>::create(store, 3, "ffn", 4, 4, 4);
  for (auto& p : store.all()) {
    auto d = p.value.mutable_data();
    std::fill(d.begin(), d.end(), 0.0);
  }
  SplitMix64 rng(9);
  auto attended = random_leaf<double>({2, 3, 4}, rng);
  auto projection = random_leaf<double>({4, 5}, rng);

  SECTION("zero FFN and zero prompt give zero") {
    auto prompt = Tensor<double>::zeros({3, 4});
    auto out = part_latent(attended, prompt, ffn, projection);
    REQUIRE(out.shape() == Shape{2, 5});
    for (int64_t i = 0; i < out.numel(); ++i) REQUIRE(out.data()[i] == 0.0);
  }
  SECTION("constant residual rows reduce to one projected row") {
    std::vector<double> rows;
    const std::vector<double> base{0.3, -1.2, 0.8, 2.0};
    for (int i = 0; i < 3; ++i) rows.insert(rows.end(), base.begin(), base.end());
    auto prompt = Tensor<double>::from_data({3, 4}, std::move(rows));
    auto out = part_latent(attended, prompt, ffn, projection);
    auto want = matmul(Tensor<double>::from_data({1, 4}, base), projection);
    for (int64_t b = 0; b < 2; ++b) {
      for (int64_t j = 0; j < 5; ++j) {
        REQUIRE(out.data()[b * 5 + j] == Catch::Approx(want.data()[j]).margin(1e-12));
      }
    }
  }
}

TEST_CASE("part latent gradient w.r.t. the prompt matches finite differences",
          "[visual][grad]") {
  ParameterStore<double> store;
  auto ffn = Mlp2<double>::create(store, 21, "ffn", 4, 3, 4);
  SplitMix64 rng(13);
  std::vector<Tensor<double>> leaves{random_leaf<double>({3, 4}, rng)};  // prompt
  auto attended = random_leaf<double>({2, 3, 4}, rng);
  auto projection = random_leaf<double>({4, 2}, rng);
  auto probe = random_leaf<double>({2, 2}, rng);
  auto build = [&] {
    return sum_all(multiply(part_latent(attended, leaves[0], ffn, projection), probe));
  };
  auto result = testsupport::check_gradients<double>(leaves, build);
  INFO(result.worst);
  REQUIRE(result.max_rel_error <= 1e-5);
}

TEST_CASE("global representation sums parts order-independently", "[visual]") {
  SplitMix64 rng(8);
  auto a = random_leaf<double>({2, 3}, rng);
  auto b = random_leaf<double>({2, 3}, rng);
  auto c = random_leaf<double>({2, 3}, rng);
  auto abc = global_representation<double>({a, b, c});
  auto cba = global_representation<double>({c, b, a});
  for (int64_t i = 0; i < abc.numel(); ++i) {
    REQUIRE(abc.data()[i] == Catch::Approx(cba.data()[i]).margin(1e-12));
  }
  auto single = global_representation<double>({a});
  for (int64_t i = 0; i < a.numel(); ++i) REQUIRE(single.data()[i] == a.data()[i]);
  REQUIRE_THROWS_AS(global_representation<double>({}), ContractError);
}

TEST_CASE("visual stream end-to-end gradients pass at composite tolerance",
          "[visual][grad]") {
  const auto layout = JointLayout::toy4();
  const auto two = PartitionStrategy::from_regions(layout, 2);
  VisualConfig config;
  config.channels = 4;
  config.temporal_stride = 2;
  config.heads = 2;
  config.prompt_count = 2;
  config.d_lat = 3;
  config.ffn_hidden = 4;

  ParameterStore<double> store;
  ToyEncoder<double> encoder(store, 55, config.channels, config.temporal_stride);
  VisualStream<double> stream(store, config, two, 55);

  SplitMix64 rng(4);
  auto x0 = random_leaf<double>({3, 4, 4, 1}, rng);
  auto x1 = random_leaf<double>({3, 4, 4, 1}, rng);
  auto probe = random_leaf<double>({2, 3}, rng);

  std::vector<Tensor<double>> leaves;
  for (auto& p : store.all()) leaves.push_back(p.value);

  auto build = [&] {
    std::vector<Tensor<double>> feats;
    for (int64_t e = 0; e < 2; ++e) {
      std::vector<Tensor<double>> parts0 = decompose_parts(x0, two);
      std::vector<Tensor<double>> parts1 = decompose_parts(x1, two);
      auto tokens = batch_token_inputs<double>(
          {&parts0[static_cast<size_t>(e)], &parts1[static_cast<size_t>(e)]}, 0);
      feats.push_back(encoder.encode(tokens, 4, 2));
    }
    auto out = stream.forward(feats);
    return sum_all(multiply(out.global, probe));
  };
  auto result = testsupport::check_gradients<double>(leaves, build);
  INFO(result.worst);
  REQUIRE(result.max_rel_error <= 1e-4);
}

TEST_CASE("attention-off mode broadcasts the token mean", "[visual]") {
  const auto layout = JointLayout::toy4();
  const auto two = PartitionStrategy::from_regions(layout, 2);
  VisualConfig config;
  config.channels = 4;
  config.temporal_stride = 1;
  config.heads = 2;
  config.prompt_count = 3;
  config.d_lat = 2;
  config.use_attention = false;

  ParameterStore<double> store;
  VisualStream<double> stream(store, config, two, 5);
  SplitMix64 rng(6);
  auto tokens = random_leaf<double>({2, 5, 4}, rng);
  auto out = stream.attend(0, tokens);
  REQUIRE(out.shape() == Shape{2, 3, 4});
  for (int64_t b = 0; b < 2; ++b) {
    for (int64_t j = 0; j < 4; ++j) {
      double mean = 0.0;
      for (int64_t t = 0; t < 5; ++t) mean += tokens.data()[(b * 5 + t) * 4 + j];
      mean /= 5.0;
      for (int64_t row = 0; row < 3; ++row) {
        REQUIRE(out.data()[(b * 3 + row) * 4 + j] == Catch::Approx(mean).margin(1e-12));
      }
    }
  }
}

TEST_CASE("prompts-off mode pins the prompt bank to zero", "[visual]") {
  const auto layout = JointLayout::toy4();
  const auto two = PartitionStrategy::from_regions(layout, 2);
  VisualConfig config;
  config.channels = 4;
  config.heads = 2;
  config.prompt_count = 3;
  config.d_lat = 2;
  config.use_prompts = false;
  ParameterStore<double> store;
  VisualStream<double> stream(store, config, two, 5);
  for (int64_t e = 0; e < 2; ++e) {
    REQUIRE_FALSE(stream.prompt(e).requires_grad());
    for (int64_t i = 0; i < stream.prompt(e).numel(); ++i) {
      REQUIRE(stream.prompt(e).data()[i] == 0.0);
    }
  }
}

TEST_CASE("batched forward equals per-sample forward", "[visual]") {
  const auto layout = JointLayout::toy4();
  const auto two = PartitionStrategy::from_regions(layout, 2);
  VisualConfig config;
  config.channels = 4;
  config.temporal_stride = 2;
  config.heads = 2;
  config.prompt_count = 2;
  config.d_lat = 3;

  ParameterStore<double> store;
  ToyEncoder<double> encoder(store, 77, config.channels, config.temporal_stride);
  VisualStream<double> stream(store, config, two, 77);

  SplitMix64 rng(14);
  std::vector<Tensor<double>> samples;
  for (int i = 0; i < 3; ++i) samples.push_back(random_leaf<double>({3, 4, 4, 1}, rng));

  auto forward_batch = [&](const std::vector<const Tensor<double>*>& batch) {
    std::vector<Tensor<double>> feats;
    for (int64_t e = 0; e < 2; ++e) {
      std::vector<std::vector<Tensor<double>>> decomposed;
      std::vector<const Tensor<double>*> part_ptrs;
      for (auto* s : batch) decomposed.push_back(decompose_parts(*s, two));
      for (auto& d : decomposed) part_ptrs.push_back(&d[static_cast<size_t>(e)]);
      feats.push_back(encoder.encode(batch_token_inputs<double>(part_ptrs, 0), 4, 2));
    }
    return stream.forward(feats).global;
  };

  auto all = forward_batch({&samples[0], &samples[1], &samples[2]});
  for (int64_t i = 0; i < 3; ++i) {
    auto one = forward_batch({&samples[static_cast<size_t>(i)]});
    for (int64_t j = 0; j < 3; ++j) {
      REQUIRE(all.data()[i * 3 + j] == Catch::Approx(one.data()[j]).margin(1e-12));
    }
  }
}

TEST_CASE("visual configuration violations are config errors", "[visual]") {
  VisualConfig config;
  config.channels = 10;
  config.heads = 4;
  REQUIRE_THROWS_AS(config.validate(), ConfigError);

  ParameterStore<float> store;
  ToyEncoder<float> enc(store, 1, 8, 3);
  SplitMix64 rng(2);
  auto part = testsupport::random_leaf<float>({3, 8, 2, 1}, rng);
  auto tokens = batch_token_inputs<float>({&part}, 0);
  REQUIRE_THROWS_AS(enc.encode(tokens, 8, 2), ConfigError);  // 8 % 3 != 0
}
