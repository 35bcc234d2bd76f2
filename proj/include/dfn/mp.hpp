#pragma once

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "dfn/dnet.hpp"
#include "dfn/error.hpp"
#include "dfn/geom.hpp"
#include "dfn/softsim.hpp"

namespace dfn {

struct KeypointPair {
  Vec3 initial;
  Vec3 goal;
  double displacement = 0.0;  // ||goal - initial||, m
};

struct KeypointSet {
  std::vector<KeypointPair> pairs;
};

// FPS keypoints on the initial cloud with correspondence to the goal cloud
// through simulator source ids: each keypoint moves by its source vertex's
// estimated displacement, the difference of the per-id sample centroids of
// the two clouds. Keypoints whose id is absent from the goal cloud fall back
// to the nearest goal point. Requires simulator-generated clouds unless
// allow_nn_fallback permits plain nearest-neighbor matching for external
// clouds (lower fidelity).
inline KeypointSet detect_keypoints(const PointCloud& initial,
                                    const PointCloud& goal, std::size_t K = 200,
                                    bool allow_nn_fallback = false) {
  initial.validate();
  goal.validate();
  if (K < 1 || K > initial.size()) throw SizeError("detect_keypoints: K out of range");
  const bool have_ids = initial.has_source_ids() && goal.has_source_ids();
  if (!have_ids && !allow_nn_fallback) {
    throw CorrespondenceError("clouds carry no source ids; keypoint correspondence unavailable");
  }

  // per-vertex sample centroids of both clouds
  std::vector<Vec3> mean_initial, mean_goal;
  std::vector<std::size_t> count_initial, count_goal;
  if (have_ids) {
    std::uint32_t max_id = 0;
    for (std::uint32_t id : initial.source_ids) max_id = std::max(max_id, id);
    for (std::uint32_t id : goal.source_ids) max_id = std::max(max_id, id);
    mean_initial.assign(max_id + 1, Vec3{});
    mean_goal.assign(max_id + 1, Vec3{});
    count_initial.assign(max_id + 1, 0);
    count_goal.assign(max_id + 1, 0);
    for (std::size_t i = 0; i < initial.size(); ++i) {
      mean_initial[initial.source_ids[i]] += initial.points[i];
      count_initial[initial.source_ids[i]] += 1;
    }
    for (std::size_t i = 0; i < goal.size(); ++i) {
      mean_goal[goal.source_ids[i]] += goal.points[i];
      count_goal[goal.source_ids[i]] += 1;
    }
    for (std::size_t v = 0; v <= max_id; ++v) {
      if (count_initial[v] > 0) mean_initial[v] = mean_initial[v] / double(count_initial[v]);
      if (count_goal[v] > 0) mean_goal[v] = mean_goal[v] / double(count_goal[v]);
    }
  }

  const std::vector<std::size_t> kp_idx = fps(initial, K, 0);
  KeypointSet set;
  set.pairs.reserve(K);
  for (std::size_t idx : kp_idx) {
    KeypointPair pair;
    pair.initial = initial.points[idx];
    bool matched = false;
    if (have_ids) {
      const std::uint32_t id = initial.source_ids[idx];
      if (count_initial[id] > 0 && count_goal[id] > 0) {
        pair.goal = pair.initial + (mean_goal[id] - mean_initial[id]);
        matched = true;
      }
    }
    if (!matched) {
      pair.goal = goal.points[knn(goal, pair.initial, 1)[0]];
    }
    pair.displacement = (pair.goal - pair.initial).norm();
    set.pairs.push_back(pair);
  }
  return set;
}

// Displacement-weighted average of the initial positions of the top-M
// movers. Ties in displacement resolve to the lower pair index.
inline Vec3 select_mp_heuristic(const KeypointSet& keypoints, std::size_t M = 5) {
  const std::size_t K = keypoints.pairs.size();
  if (M < 1 || M > K) throw SizeError("select_mp_heuristic: M out of range");

  std::vector<std::size_t> order(K);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return keypoints.pairs[a].displacement > keypoints.pairs[b].displacement;
  });

  Vec3 weighted;
  double total = 0.0;
  for (std::size_t m = 0; m < M; ++m) {
    const KeypointPair& pair = keypoints.pairs[order[m]];
    weighted += pair.initial * pair.displacement;
    total += pair.displacement;
  }
  if (!(total > 0.0)) {
    throw NoDeformationError("top-M keypoints carry zero displacement");
  }
  return weighted / total;
}

enum class MpMethod { Heuristic, Regression };

struct MpContext {
  std::size_t keypoints = 200;         // K for the heuristic
  std::size_t top_m = 5;               // M for the heuristic
  DeformerNet* mp_model = nullptr;     // trained MP-regression model
  const SpringMesh* mesh = nullptr;    // projection target, optional
  bool allow_nn_fallback = false;
};

// Dispatches to the keypoint heuristic or the regression model; the result
// is projected onto the current mesh surface when a mesh is available.
inline Vec3 select_mp(MpMethod method, const PointCloud& initial,
                      const PointCloud& goal, const MpContext& context) {
  Vec3 point;
  switch (method) {
    case MpMethod::Heuristic: {
      const KeypointSet set = detect_keypoints(initial, goal, context.keypoints,
                                               context.allow_nn_fallback);
      point = select_mp_heuristic(set, context.top_m);
      break;
    }
    case MpMethod::Regression: {
      if (context.mp_model == nullptr) {
        throw ModelMissingError("no MP-regression model supplied");
      }
      point = context.mp_model->forward_mp(initial, goal);
      break;
    }
  }
  if (context.mesh != nullptr) {
    point = project_to_surface(*context.mesh, point);
  }
  return point;
}

// CSV export: "k,xi,yi,zi,xg,yg,zg,delta"
inline void write_keypoints_csv(const KeypointSet& set, std::ostream& os) {
  os << "k,xi,yi,zi,xg,yg,zg,delta\n";
  os.precision(12);
  for (std::size_t k = 0; k < set.pairs.size(); ++k) {
    const KeypointPair& p = set.pairs[k];
    os << k << ',' << p.initial.x << ',' << p.initial.y << ',' << p.initial.z
       << ',' << p.goal.x << ',' << p.goal.y << ',' << p.goal.z << ','
       << p.displacement << '\n';
  }
}

inline void write_keypoints_csv(const KeypointSet& set, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw ParamError("cannot open for writing: " + path);
  write_keypoints_csv(set, f);
}

}  // namespace dfn
