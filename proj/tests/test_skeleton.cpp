#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <set>

#include "star/rng.hpp"
#include "star/skeleton.hpp"
#include "support/finite_diff.hpp"

using namespace star;

TEST_CASE("every shipped strategy is an exact partition of the 25-joint layout", "[skeleton]") {
  const auto layout = JointLayout::ntu25();
  REQUIRE(layout.joint_count() == 25);
  for (int64_t k : {2, 4, 6}) {
    const auto st = PartitionStrategy::from_regions(layout, k);
    REQUIRE(st.part_count() == k);
    std::set<int64_t> seen;
    int64_t total = 0;
    for (const auto& joints : st.part_joints) {
      REQUIRE_FALSE(joints.empty());
      for (int64_t j : joints) {
        REQUIRE(j >= 0);
        REQUIRE(j < 25);
        REQUIRE(seen.insert(j).second);  // disjointness
      }
      total += static_cast<int64_t>(joints.size());
    }
    REQUIRE(total == 25);  // full coverage
    REQUIRE_NOTHROW(st.validate(25));
  }
}

TEST_CASE("six-part names follow the region tags", "[skeleton]") {
  const auto layout = JointLayout::ntu25();
  const auto st = PartitionStrategy::from_regions(layout, 6);
  REQUIRE(st.part_names ==
          std::vector<std::string>{"head", "hand", "arm", "hip", "leg", "foot"});
  const auto four = PartitionStrategy::from_regions(layout, 4);
  REQUIRE(four.part_names == std::vector<std::string>{"head", "hand_arm", "hip", "leg_foot"});
  const auto two = PartitionStrategy::from_regions(layout, 2);
  REQUIRE(two.part_names == std::vector<std::string>{"upper", "lower"});
}

TEST_CASE("toy layout two-part split puts head+hand up and hip+foot down", "[skeleton]") {
  const auto layout = JointLayout::toy4();
  const auto st = PartitionStrategy::from_regions(layout, 2);
  REQUIRE(st.part_joints[0] == std::vector<int64_t>{0, 1});
  REQUIRE(st.part_joints[1] == std::vector<int64_t>{2, 3});
}

TEST_CASE("decompose then reconstruct is bit exact", "[skeleton]") {
  SplitMix64 rng(17);
  const auto layout = JointLayout::ntu25();
  auto x = testsupport::random_leaf<float>({3, 8, 25, 2}, rng);
  for (int64_t k : {2, 4, 6}) {
    const auto st = PartitionStrategy::from_regions(layout, k);
    auto parts = decompose_parts(x, st);
    REQUIRE(static_cast<int64_t>(parts.size()) == k);
    for (int64_t e = 0; e < k; ++e) {
      const Shape want{3, 8, static_cast<int64_t>(st.part_joints[static_cast<size_t>(e)].size()),
                       2};
      REQUIRE(parts[static_cast<size_t>(e)].shape() == want);
    }
    auto back = reconstruct_parts(parts, st, 25);
    REQUIRE(back.shape() == x.shape());
    REQUIRE(std::memcmp(back.data().data(), x.data().data(), sizeof(float) * x.numel()) == 0);
  }
}

TEST_CASE("decompose preserves column order within a part", "[skeleton]") {
  // joint j holds the constant value j, so part columns must equal the
  // strategy's ascending joint list.
  const auto layout = JointLayout::ntu25();
  std::vector<float> data(static_cast<size_t>(3 * 2 * 25 * 1));
  for (int64_t c = 0; c < 3; ++c) {
    for (int64_t t = 0; t < 2; ++t) {
      for (int64_t j = 0; j < 25; ++j) {
        data[static_cast<size_t>((c * 2 + t) * 25 + j)] = static_cast<float>(j);
      }
    }
  }
  auto x = Tensor<float>::from_data({3, 2, 25, 1}, std::move(data));
  const auto st = PartitionStrategy::from_regions(layout, 6);
  auto parts = decompose_parts(x, st);
  for (size_t e = 0; e < parts.size(); ++e) {
    const auto& joints = st.part_joints[e];
    for (size_t kk = 0; kk < joints.size(); ++kk) {
      REQUIRE(parts[e].data()[kk] == static_cast<float>(joints[kk]));
    }
  }
}

TEST_CASE("strategy violations raise layout or validation errors", "[skeleton]") {
  const auto layout = JointLayout::ntu25();
  auto st = PartitionStrategy::from_regions(layout, 2);
  SECTION("index out of range") {
    st.part_joints[0][0] = 25;
    SplitMix64 rng(1);
    auto x = testsupport::random_leaf<float>({3, 4, 25, 1}, rng);
    REQUIRE_THROWS_AS(decompose_parts(x, st), LayoutError);
  }
  SECTION("duplicate joint") {
    st.part_joints[0][0] = st.part_joints[1][0];
    REQUIRE_THROWS_AS(st.validate(25), ValidationError);
  }
  SECTION("missing joint") {
    st.part_joints[0].pop_back();
    REQUIRE_THROWS_AS(st.validate(25), ValidationError);
  }
  SECTION("six-part on the toy layout has empty parts") {
    REQUIRE_THROWS_AS(PartitionStrategy::from_regions(JointLayout::toy4(), 6), ValidationError);
  }
  SECTION("unsupported K") {
    REQUIRE_THROWS_AS(PartitionStrategy::from_regions(layout, 3), ConfigError);
  }
}

TEST_CASE("preprocess centers the root joint in every frame", "[skeleton]") {
  SplitMix64 rng(5);
  auto x = testsupport::random_leaf<float>({3, 10, 25, 1}, rng);
  auto y = preprocess(x, 10, 1, 0);
  for (int64_t t = 0; t < 10; ++t) {
    for (int64_t c = 0; c < 3; ++c) {
      REQUIRE(y.data()[(c * 10 + t) * 25 * 1 + 0] == 0.0f);
    }
  }
}

TEST_CASE("preprocess is idempotent", "[skeleton]") {
  SplitMix64 rng(6);
  auto x = testsupport::random_leaf<double>({3, 13, 25, 2}, rng);
  auto once = preprocess(x, 32, 2, 0);
  auto twice = preprocess(once, 32, 2, 0);
  for (int64_t i = 0; i < once.numel(); ++i) {
    REQUIRE(std::fabs(once.data()[i] - twice.data()[i]) < 1e-6);
  }
}

TEST_CASE("an already-centered sequence at target length passes through", "[skeleton]") {
  SplitMix64 rng(7);
  auto raw = testsupport::random_leaf<double>({3, 8, 4, 1}, rng);
  auto x = preprocess(raw, 8, 1, 2);  // now centered, 8 frames
  auto y = preprocess(x, 8, 1, 2);
  for (int64_t i = 0; i < x.numel(); ++i) {
    REQUIRE(std::fabs(x.data()[i] - y.data()[i]) < 1e-12);
  }
}

TEST_CASE("upsampling a linear trajectory stays linear", "[skeleton]") {
  // joint 1 moves linearly from 0 to 9 over 10 frames; after resampling to
  // 20 frames the trajectory must still be linear in the output index.
  std::vector<double> data(static_cast<size_t>(3 * 10 * 2 * 1), 0.0);
  for (int64_t t = 0; t < 10; ++t) {
    data[static_cast<size_t>((0 * 10 + t) * 2 + 1)] = static_cast<double>(t);
  }
  auto x = Tensor<double>::from_data({3, 10, 2, 1}, std::move(data));
  auto y = preprocess(x, 20, 1, 0);
  const double step = 9.0 / 19.0;
  for (int64_t t = 0; t < 20; ++t) {
    const double got = y.data()[(0 * 20 + t) * 2 + 1];
    REQUIRE(std::fabs(got - step * static_cast<double>(t)) < 1e-6);
  }
}

TEST_CASE("downsampling picks evenly spaced frames", "[skeleton]") {
  std::vector<double> data(static_cast<size_t>(3 * 9 * 2 * 1), 0.0);
  for (int64_t t = 0; t < 9; ++t) {
    data[static_cast<size_t>((0 * 9 + t) * 2 + 1)] = static_cast<double>(t);
  }
  auto x = Tensor<double>::from_data({3, 9, 2, 1}, std::move(data));
  auto y = preprocess(x, 3, 1, 0);
  REQUIRE(y.data()[(0 * 3 + 0) * 2 + 1] == 0.0);
  REQUIRE(y.data()[(0 * 3 + 1) * 2 + 1] == 4.0);
  REQUIRE(y.data()[(0 * 3 + 2) * 2 + 1] == 8.0);
}

TEST_CASE("person axis is clamped and padded", "[skeleton]") {
  SplitMix64 rng(8);
  auto x = testsupport::random_leaf<float>({3, 4, 4, 3}, rng);
  auto y = preprocess(x, 4, 2, 0);
  REQUIRE(y.shape() == Shape{3, 4, 4, 2});
  auto z = preprocess(x, 4, 4, 0);
  REQUIRE(z.shape() == Shape{3, 4, 4, 4});
  // padded person slot is all zeros
  for (int64_t c = 0; c < 3; ++c) {
    for (int64_t t = 0; t < 4; ++t) {
      for (int64_t j = 0; j < 4; ++j) {
        REQUIRE(z.data()[((c * 4 + t) * 4 + j) * 4 + 3] == 0.0f);
      }
    }
  }
}

TEST_CASE("malformed sequences are rejected", "[skeleton]") {
  SplitMix64 rng(9);
  auto bad_rank = testsupport::random_leaf<float>({3, 4, 4}, rng);
  REQUIRE_THROWS_AS(validate_sequence(bad_rank), DataError);
  auto bad_channels = testsupport::random_leaf<float>({2, 4, 4, 1}, rng);
  REQUIRE_THROWS_AS(validate_sequence(bad_channels), DataError);
  auto ok = testsupport::random_leaf<float>({3, 4, 4, 1}, rng);
  REQUIRE_THROWS_AS(preprocess(ok, 4, 1, 7), LayoutError);
  REQUIRE_THROWS_AS(preprocess(ok, 0, 1, 0), ConfigError);
}
