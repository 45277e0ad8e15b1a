#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_set>
#include <vector>

#include "star/error.hpp"
#include "star/tensor.hpp"

namespace star {

enum class Region { head, hand, arm, hip, leg, foot };

inline const char* region_name(Region r) {
  switch (r) {
    case Region::head: return "head";
    case Region::hand: return "hand";
    case Region::arm: return "arm";
    case Region::hip: return "hip";
    case Region::leg: return "leg";
    case Region::foot: return "foot";
  }
  throw ContractError("unreachable region tag");
}

// Joint table with one body-region tag per joint; every partition strategy
// is derived from these tags so there is a single source of truth.
struct JointLayout {
  std::string name;
  std::vector<std::string> joint_names;
  std::vector<Region> regions;
  int64_t root = 0;

  int64_t joint_count() const { return static_cast<int64_t>(joint_names.size()); }

  void validate() const {
    if (joint_names.empty()) throw LayoutError("layout has no joints");
    if (joint_names.size() != regions.size()) {
      throw LayoutError(detail::msg("layout '", name, "': ", joint_names.size(), " names vs ",
                                    regions.size(), " region tags"));
    }
    if (root < 0 || root >= joint_count()) {
      throw LayoutError(detail::msg("layout '", name, "': root index ", root, " out of range"));
    }
    std::unordered_set<std::string> seen;
    for (const auto& n : joint_names) {
      if (!seen.insert(n).second) {
        throw LayoutError(detail::msg("layout '", name, "': duplicate joint name '", n, "'"));
      }
    }
  }

  // 25-joint Kinect-style skeleton. The spine chain (base, mid, shoulder
  // level) carries the hip tag so torso joints stay in the lower-body group.
  static JointLayout ntu25() {
    JointLayout l;
    l.name = "ntu25";
    l.joint_names = {
        "spine_base",    "spine_mid",    "neck",         "head",          "shoulder_left",
        "elbow_left",    "wrist_left",   "hand_left",    "shoulder_right", "elbow_right",
        "wrist_right",   "hand_right",   "hip_left",     "knee_left",     "ankle_left",
        "foot_left",     "hip_right",    "knee_right",   "ankle_right",   "foot_right",
        "spine_shoulder", "handtip_left", "thumb_left",  "handtip_right", "thumb_right"};
    using R = Region;
    l.regions = {R::hip,  R::hip,  R::head, R::head, R::arm,  R::arm,  R::arm,
                 R::hand, R::arm,  R::arm,  R::arm,  R::hand, R::hip,  R::leg,
                 R::foot, R::foot, R::hip,  R::leg,  R::foot, R::foot, R::hip,
                 R::hand, R::hand, R::hand, R::hand};
    l.root = 0;
    l.validate();
    return l;
  }

  static JointLayout toy4() {
    JointLayout l;
    l.name = "toy4";
    l.joint_names = {"head", "hand", "hip", "foot"};
    l.regions = {Region::head, Region::hand, Region::hip, Region::foot};
    l.root = 2;
    l.validate();
    return l;
  }

  static JointLayout by_name(const std::string& name) {
    if (name == "ntu25") return ntu25();
    if (name == "toy4") return toy4();
    throw ConfigError(detail::msg("unknown joint layout '", name, "'"));
  }
};

struct PartitionStrategy {
  std::string name;
  std::vector<std::string> part_names;
  std::vector<std::vector<int64_t>> part_joints;

  int64_t part_count() const { return static_cast<int64_t>(part_names.size()); }

  void validate(int64_t joint_count) const {
    if (part_names.size() != part_joints.size() || part_names.empty()) {
      throw LayoutError(detail::msg("strategy '", name, "': malformed part table"));
    }
    std::vector<bool> covered(static_cast<size_t>(joint_count), false);
    for (size_t e = 0; e < part_joints.size(); ++e) {
      if (part_joints[e].empty()) {
        throw ValidationError(detail::msg("strategy '", name, "': part '", part_names[e],
                                          "' is empty"));
      }
      for (int64_t j : part_joints[e]) {
        if (j < 0 || j >= joint_count) {
          throw LayoutError(detail::msg("strategy '", name, "': joint index ", j,
                                        " outside layout of ", joint_count, " joints"));
        }
        if (covered[static_cast<size_t>(j)]) {
          throw ValidationError(detail::msg("strategy '", name, "': joint ", j,
                                            " assigned twice"));
        }
        covered[static_cast<size_t>(j)] = true;
      }
    }
    for (int64_t j = 0; j < joint_count; ++j) {
      if (!covered[static_cast<size_t>(j)]) {
        throw ValidationError(detail::msg("strategy '", name, "': joint ", j, " uncovered"));
      }
    }
  }

  // Groups region tags into K parts; joint order inside a part is ascending.
  static PartitionStrategy from_regions(const JointLayout& layout, int64_t k) {
    using R = Region;
    std::vector<std::pair<std::string, std::vector<R>>> groups;
    if (k == 2) {
      groups = {{"upper", {R::head, R::hand, R::arm}}, {"lower", {R::hip, R::leg, R::foot}}};
    } else if (k == 4) {
      groups = {{"head", {R::head}},
                {"hand_arm", {R::hand, R::arm}},
                {"hip", {R::hip}},
                {"leg_foot", {R::leg, R::foot}}};
    } else if (k == 6) {
      groups = {{"head", {R::head}}, {"hand", {R::hand}}, {"arm", {R::arm}},
                {"hip", {R::hip}},   {"leg", {R::leg}},   {"foot", {R::foot}}};
    } else {
      throw ConfigError(detail::msg("partition strategy supports K in {2,4,6}, got ", k));
    }
    PartitionStrategy st;
    st.name = k == 2 ? "two" : (k == 4 ? "four" : "six");
    for (auto& [part_name, tags] : groups) {
      std::vector<int64_t> joints;
      for (int64_t j = 0; j < layout.joint_count(); ++j) {
        const R tag = layout.regions[static_cast<size_t>(j)];
        if (std::find(tags.begin(), tags.end(), tag) != tags.end()) joints.push_back(j);
      }
      st.part_names.push_back(part_name);
      st.part_joints.push_back(std::move(joints));
    }
    st.validate(layout.joint_count());
    return st;
  }

  static PartitionStrategy by_name(const JointLayout& layout, const std::string& name) {
    if (name == "two") return from_regions(layout, 2);
    if (name == "four") return from_regions(layout, 4);
    if (name == "six") return from_regions(layout, 6);
    throw ConfigError(detail::msg("unknown partition strategy '", name, "'"));
  }
};

template <typename T>
struct SkeletonSequence {
  Tensor<T> x;  // 3 x T x V x M
  int64_t label = -1;
};

template <typename T>
void validate_sequence(const Tensor<T>& x) {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[0] != 3) {
    throw DataError(detail::msg("skeleton tensor must be 3xTxVxM, got ", shape_str(s)));
  }
  for (int64_t d : s) {
    if (d < 1) throw DataError(detail::msg("skeleton tensor has empty extent: ", shape_str(s)));
  }
}

// Splits the joint axis into the strategy's groups; column order inside a
// part follows the strategy's (ascending) listing so the inverse permutation
// reassembles the input exactly.
template <typename T>
std::vector<Tensor<T>> decompose_parts(const Tensor<T>& x, const PartitionStrategy& strategy) {
  validate_sequence(x);
  const Shape& s = x.shape();
  const int64_t t_len = s[1], v = s[2], m = s[3];
  strategy.validate(v);
  std::vector<Tensor<T>> parts;
  parts.reserve(strategy.part_joints.size());
  auto xd = x.data();
  for (const auto& joints : strategy.part_joints) {
    const int64_t ve = static_cast<int64_t>(joints.size());
    std::vector<T> out(static_cast<size_t>(3 * t_len * ve * m));
    for (int64_t c = 0; c < 3; ++c) {
      for (int64_t t = 0; t < t_len; ++t) {
        for (int64_t k = 0; k < ve; ++k) {
          const T* src = xd.data() + ((c * t_len + t) * v + joints[static_cast<size_t>(k)]) * m;
          T* dst = out.data() + ((c * t_len + t) * ve + k) * m;
          std::copy_n(src, m, dst);
        }
      }
    }
    parts.push_back(Tensor<T>::from_data({3, t_len, ve, m}, std::move(out)));
  }
  return parts;
}

template <typename T>
Tensor<T> reconstruct_parts(const std::vector<Tensor<T>>& parts,
                            const PartitionStrategy& strategy, int64_t joint_count) {
  strategy.validate(joint_count);
  if (parts.size() != strategy.part_joints.size()) {
    throw ContractError(detail::msg("reconstruct_parts: ", parts.size(), " tensors for ",
                                    strategy.part_joints.size(), " parts"));
  }
  const Shape& first = parts.at(0).shape();
  const int64_t t_len = first[1], m = first[3];
  std::vector<T> out(static_cast<size_t>(3 * t_len * joint_count * m), T{0});
  for (size_t e = 0; e < parts.size(); ++e) {
    const auto& joints = strategy.part_joints[e];
    const Shape& s = parts[e].shape();
    if (s.size() != 4 || s[0] != 3 || s[1] != t_len ||
        s[2] != static_cast<int64_t>(joints.size()) || s[3] != m) {
      throw DimensionError(detail::msg("reconstruct_parts: part ", e, " has shape ",
                                       shape_str(s)));
    }
    auto pd = parts[e].data();
    const int64_t ve = s[2];
    for (int64_t c = 0; c < 3; ++c) {
      for (int64_t t = 0; t < t_len; ++t) {
        for (int64_t k = 0; k < ve; ++k) {
          const T* src = pd.data() + ((c * t_len + t) * ve + k) * m;
          T* dst = out.data() +
                   ((c * t_len + t) * joint_count + joints[static_cast<size_t>(k)]) * m;
          std::copy_n(src, m, dst);
        }
      }
    }
  }
  return Tensor<T>::from_data({3, t_len, joint_count, m}, std::move(out));
}

// Person clamp/pad, temporal resample to target_frames (linear interpolation
// up, nearest-position subsample down), then per-person per-frame centering
// on the root joint. Linear throughout, so applying it twice is a no-op.
template <typename T>
Tensor<T> preprocess(const Tensor<T>& x, int64_t target_frames, int64_t max_persons,
                     int64_t root) {
  validate_sequence(x);
  if (target_frames < 1) throw ConfigError("preprocess: target_frames must be >= 1");
  if (max_persons < 1) throw ConfigError("preprocess: max_persons must be >= 1");
  const Shape& s = x.shape();
  const int64_t t_in = s[1], v = s[2], m_in = s[3];
  if (root < 0 || root >= v) {
    throw LayoutError(detail::msg("preprocess: root joint ", root, " outside ", v, " joints"));
  }
  const int64_t m_keep = std::min(m_in, max_persons);
  auto xd = x.data();
  auto at = [&](int64_t c, int64_t t, int64_t j, int64_t p) {
    return xd[((c * t_in + t) * v + j) * m_in + p];
  };

  std::vector<T> out(static_cast<size_t>(3 * target_frames * v * max_persons), T{0});
  auto out_at = [&](int64_t c, int64_t t, int64_t j, int64_t p) -> T& {
    return out[static_cast<size_t>(((c * target_frames + t) * v + j) * max_persons + p)];
  };

  for (int64_t t = 0; t < target_frames; ++t) {
    const double pos = target_frames == 1
                           ? static_cast<double>(t_in - 1) / 2.0
                           : static_cast<double>(t) * static_cast<double>(t_in - 1) /
                                 static_cast<double>(target_frames - 1);
    if (target_frames >= t_in) {
      const int64_t i0 = std::min(static_cast<int64_t>(pos), t_in - 1);
      const int64_t i1 = std::min(i0 + 1, t_in - 1);
      const T frac = static_cast<T>(pos - static_cast<double>(i0));
      for (int64_t c = 0; c < 3; ++c) {
        for (int64_t j = 0; j < v; ++j) {
          for (int64_t p = 0; p < m_keep; ++p) {
            out_at(c, t, j, p) = (T{1} - frac) * at(c, i0, j, p) + frac * at(c, i1, j, p);
          }
        }
      }
    } else {
      const int64_t i0 = static_cast<int64_t>(std::llround(pos));
      for (int64_t c = 0; c < 3; ++c) {
        for (int64_t j = 0; j < v; ++j) {
          for (int64_t p = 0; p < m_keep; ++p) out_at(c, t, j, p) = at(c, i0, j, p);
        }
      }
    }
  }

  for (int64_t t = 0; t < target_frames; ++t) {
    for (int64_t p = 0; p < m_keep; ++p) {
      const std::array<T, 3> center = {out_at(0, t, root, p), out_at(1, t, root, p),
                                       out_at(2, t, root, p)};
      for (int64_t c = 0; c < 3; ++c) {
        for (int64_t j = 0; j < v; ++j) out_at(c, t, j, p) -= center[static_cast<size_t>(c)];
      }
    }
  }

  return Tensor<T>::from_data({3, target_frames, v, max_persons}, std::move(out));
}

}  // namespace star
