#pragma once

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "dfn/dnet.hpp"
#include "dfn/error.hpp"
#include "dfn/geom.hpp"
#include "dfn/mp.hpp"
#include "dfn/softsim.hpp"

namespace dfn {

struct ServoConfig {
  std::size_t max_iters = 15;
  // success when chamfer <= max(abs_threshold, rel_threshold * initial)
  double abs_threshold = 0.005;  // m
  double rel_threshold = 0.05;
  double max_step = 0.02;        // per-iteration displacement clamp, m
  std::size_t cloud_size = 2048;
  std::uint64_t seed = 0;

  void validate() const {
    if (max_iters < 1) throw ParamError("max_iters must be >= 1");
    if (!(abs_threshold > 0.0) || !(rel_threshold > 0.0)) {
      throw ParamError("servo thresholds must be > 0");
    }
    if (!(max_step > 0.0)) throw ParamError("max_step must be > 0");
    if (cloud_size < 1) throw ParamError("cloud_size must be >= 1");
  }
};

enum class ServoOutcome { Success, MaxIters, SolverFailure };

struct ServoRecord {
  std::size_t iteration = 0;
  double chamfer = 0.0;   // m, at observation time
  Vec3 delta_p;           // displacement commanded after this observation
  bool clamped = false;
};

struct ServoTrace {
  std::vector<ServoRecord> records;
  ServoOutcome outcome = ServoOutcome::MaxIters;

  double initial_chamfer() const { return records.front().chamfer; }
  double final_chamfer() const { return records.back().chamfer; }
};

inline const char* to_string(ServoOutcome o) {
  switch (o) {
    case ServoOutcome::Success: return "success";
    case ServoOutcome::MaxIters: return "max-iters";
    case ServoOutcome::SolverFailure: return "solver-failure";
  }
  return "?";
}

// Closed loop: observe the current surface, predict the gripper displacement
// from the feature difference to the goal, move, re-solve, repeat. The
// observation uses a fixed sampling seed, so a static scene re-observes
// identically. Iteration 0 records the initial observation.
inline ServoTrace run_servo(SpringMesh& mesh, GraspHandle& handle,
                            const PointCloud& goal, DeformerNet& model,
                            const ServoConfig& config) {
  config.validate();
  goal.validate();
  if (!mesh.attachment) throw StateError("run_servo: mesh is not grasped");

  ServoTrace trace;
  mesh.max_step = config.max_step;

  PointCloud observed = surface_cloud(mesh, config.cloud_size, config.seed);
  double dist = chamfer(observed, goal);
  const double threshold =
      std::max(config.abs_threshold, config.rel_threshold * dist);
  trace.records.push_back({0, dist, Vec3{}, false});

  for (std::size_t iter = 0; iter < config.max_iters; ++iter) {
    if (dist <= threshold) {
      trace.outcome = ServoOutcome::Success;
      return trace;
    }
    Vec3 delta = model.forward(observed, goal);
    bool clamped = false;
    const double mag = delta.norm();
    if (mag > config.max_step) {
      delta = delta * (config.max_step / mag);
      clamped = true;
    }
    trace.records.back().delta_p = delta;
    trace.records.back().clamped = clamped;

    move_grasp(mesh, handle, delta);
    try {
      solve_equilibrium(mesh);
    } catch (const ConvergenceError&) {
      trace.outcome = ServoOutcome::SolverFailure;
      return trace;
    }

    observed = surface_cloud(mesh, config.cloud_size, config.seed);
    dist = chamfer(observed, goal);
    trace.records.push_back({iter + 1, dist, Vec3{}, false});
  }
  trace.outcome =
      dist <= threshold ? ServoOutcome::Success : ServoOutcome::MaxIters;
  return trace;
}

struct PipelineResult {
  Vec3 manipulation_point;
  ServoTrace trace;
};

// Full pipeline: select the manipulation point, grasp there, servo.
inline PipelineResult run_full_pipeline(SpringMesh& mesh, const PointCloud& goal,
                                        MpMethod method, DeformerNet& deformer,
                                        const MpContext& mp_context,
                                        double grasp_radius,
                                        const ServoConfig& config) {
  const PointCloud initial = surface_cloud(mesh, config.cloud_size, config.seed);
  MpContext ctx = mp_context;
  ctx.mesh = &mesh;
  PipelineResult result;
  result.manipulation_point = select_mp(method, initial, goal, ctx);

  GraspHandle handle;
  try {
    handle = grasp(mesh, result.manipulation_point, grasp_radius);
  } catch (const GraspMissError&) {
    throw MpInvalidError("selected manipulation point cannot be grasped",
                         result.manipulation_point.x, result.manipulation_point.y,
                         result.manipulation_point.z);
  }
  result.trace = run_servo(mesh, handle, goal, deformer, config);
  return result;
}

// CSV export: "iter,chamfer_m,dx,dy,dz,clamped"
inline void write_trace_csv(const ServoTrace& trace, std::ostream& os) {
  os << "iter,chamfer_m,dx,dy,dz,clamped\n";
  os.precision(12);
  for (const ServoRecord& r : trace.records) {
    os << r.iteration << ',' << r.chamfer << ',' << r.delta_p.x << ','
       << r.delta_p.y << ',' << r.delta_p.z << ',' << (r.clamped ? 1 : 0) << '\n';
  }
}

inline void write_trace_csv(const ServoTrace& trace, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw ParamError("cannot open for writing: " + path);
  write_trace_csv(trace, f);
}

}  // namespace dfn
