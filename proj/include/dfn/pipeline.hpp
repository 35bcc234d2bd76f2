#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dfn/binio.hpp"
#include "dfn/dnet.hpp"
#include "dfn/error.hpp"
#include "dfn/geom.hpp"
#include "dfn/mp.hpp"
#include "dfn/rng.hpp"
#include "dfn/servo.hpp"
#include "dfn/softsim.hpp"

namespace dfn {

// Episode-based dataset generation config. An episode is one (initial
// configuration, manipulation point) pair; each of its shapes is produced by
// a single random gripper displacement from the rest state.
struct GenConfig {
  std::size_t num_configs = 20;        // episodes
  std::size_t shapes_per_config = 50;  // deformations per episode
  double magnitude_min = 0.02;         // gripper displacement range, m
  double magnitude_max = 0.06;
  Vec3 box_dims{0.2, 0.1, 0.05};
  std::array<int, 3> resolution{8, 4, 2};
  MaterialParams material{1000.0, 0.3};
  std::uint64_t seed = 0;
  std::size_t cloud_size = 2048;
  double grasp_radius = 0.02;
  // Restricts manipulation-point sampling to x >= fraction * dims.x
  // (0 = anywhere on the free surface). The clamp sits on the min-x face.
  double mp_min_x_fraction = 0.0;
  double max_skip_fraction = 0.05;

  void validate() const {
    if (num_configs < 1 || shapes_per_config < 1) {
      throw ParamError("episode and shape counts must be >= 1");
    }
    if (!(magnitude_min > 0.0) || !(magnitude_max >= magnitude_min)) {
      throw ParamError("displacement magnitude range must be positive");
    }
    const double diagonal = box_dims.norm();
    if (magnitude_max > 0.4 * diagonal) {
      throw ParamError("magnitude_max exceeds the safe strain bound (0.4 x diagonal)");
    }
    material.validate();
    if (cloud_size < 1) throw ParamError("cloud_size must be >= 1");
    if (!(grasp_radius > 0.0)) throw ParamError("grasp_radius must be > 0");
    if (mp_min_x_fraction < 0.0 || mp_min_x_fraction >= 1.0) {
      throw ParamError("mp_min_x_fraction must be in [0, 1)");
    }
  }
};

struct Dataset {
  std::vector<TrainingSample> samples;
  std::size_t cloud_size = 2048;
  // (episode, shape) provenance per sample; in-memory only, empty after load
  std::vector<std::array<std::uint32_t, 2>> provenance;
  std::size_t skipped = 0;
};

namespace detail {

// volatile keeps the optimizer from folding the narrowing away at -O3
inline double f32_round(double v) {
  volatile float narrowed = static_cast<float>(v);
  return static_cast<double>(narrowed);
}

inline Vec3 f32_round(const Vec3& v) {
  return {f32_round(v.x), f32_round(v.y), f32_round(v.z)};
}

inline SpringMesh make_episode_mesh(const GenConfig& cfg) {
  SpringMesh mesh = build_box(cfg.box_dims, cfg.resolution, cfg.material);
  clamp_face(mesh, {Axis::X, Side::Min});
  mesh.max_step = cfg.magnitude_max;
  return mesh;
}

// Uniform point on the free (unclamped) boundary surface that admits a
// conflict-free grasp. Deterministic per rng stream.
inline Vec3 sample_surface_mp(const SpringMesh& mesh, const GenConfig& cfg, Rng& rng) {
  // triangles fully off the clamped face
  std::vector<std::size_t> eligible;
  std::vector<double> cum_area;
  double total = 0.0;
  for (std::size_t t = 0; t < mesh.surface_triangles.size(); ++t) {
    const auto& tri = mesh.surface_triangles[t];
    bool clamped_tri = false;
    for (int c = 0; c < 3; ++c) {
      if (mesh.is_clamped(tri[c])) clamped_tri = true;
    }
    if (clamped_tri) continue;
    const Vec3& a = mesh.positions[tri[0]];
    const Vec3& b = mesh.positions[tri[1]];
    const Vec3& c = mesh.positions[tri[2]];
    total += 0.5 * (b - a).cross(c - a).norm();
    eligible.push_back(t);
    cum_area.push_back(total);
  }
  if (eligible.empty()) throw GenerationError("no free surface to grasp");

  const double min_x = cfg.mp_min_x_fraction * cfg.box_dims.x;
  const double r2 = cfg.grasp_radius * cfg.grasp_radius;
  for (int attempt = 0; attempt < 200; ++attempt) {
    const double u = rng.uniform() * total;
    const std::size_t which = static_cast<std::size_t>(
        std::lower_bound(cum_area.begin(), cum_area.end(), u) - cum_area.begin());
    const auto& tri = mesh.surface_triangles[eligible[std::min(which, eligible.size() - 1)]];
    const double r1 = rng.uniform(), rb = rng.uniform();
    const double sq = std::sqrt(r1);
    const Vec3 p = mesh.positions[tri[0]] * (1.0 - sq) +
                   mesh.positions[tri[1]] * (sq * (1.0 - rb)) +
                   mesh.positions[tri[2]] * (sq * rb);
    if (p.x < min_x) continue;
    // grasp must catch at least one surface vertex and no clamped one
    bool any = false, conflict = false;
    for (std::uint32_t v = 0; v < mesh.vertex_count(); ++v) {
      if (!mesh.is_surface_vertex(v)) continue;
      if (squared_distance(mesh.positions[v], p) > r2) continue;
      any = true;
      if (mesh.is_clamped(v)) conflict = true;
    }
    if (any && !conflict) return p;
  }
  throw GenerationError("could not sample a graspable manipulation point");
}

inline Vec3 random_unit_vector(Rng& rng) {
  const double z = 1.0 - 2.0 * rng.uniform();
  const double theta = 2.0 * 3.14159265358979323846 * rng.uniform();
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  return {r * std::cos(theta), r * std::sin(theta), z};
}

}  // namespace detail

// One episode's ground truth and observations, used by evaluation suites.
struct Episode {
  Vec3 mp;                 // ground-truth grasp center (f32-rounded)
  Vec3 delta;              // applied goal displacement (f32-rounded)
  PointCloud initial;      // pristine grasped state
  PointCloud goal;         // deformed state
};

// Builds episode ep of the configured stream. Sample index selects the
// random displacement; both clouds carry source ids.
inline Episode make_episode(const GenConfig& cfg, std::size_t ep, std::size_t shape) {
  const std::uint64_t ep_seed = derive_seed(cfg.seed, {1, ep});
  SpringMesh mesh = detail::make_episode_mesh(cfg);
  Rng mp_rng(derive_seed(ep_seed, {0}));
  Episode episode;
  episode.mp = detail::f32_round(detail::sample_surface_mp(mesh, cfg, mp_rng));
  GraspHandle handle = grasp(mesh, episode.mp, cfg.grasp_radius);

  Rng shape_rng(derive_seed(ep_seed, {1, shape}));
  const Vec3 dir = detail::random_unit_vector(shape_rng);
  const double mag = shape_rng.uniform(cfg.magnitude_min, cfg.magnitude_max);
  episode.delta = detail::f32_round(dir * mag);

  mesh.reset();
  episode.initial = surface_cloud(mesh, cfg.cloud_size, derive_seed(ep_seed, {2, shape, 0}));
  move_grasp(mesh, handle, episode.delta);
  solve_equilibrium(mesh);
  episode.goal = surface_cloud(mesh, cfg.cloud_size, derive_seed(ep_seed, {2, shape, 1}));
  return episode;
}

// Generates the full episode-major dataset. delta_p and mp labels pass
// through f32 before use, so saved files replay bit-consistently.
// Episodes derive independent sub-seeds and may be produced in parallel.
inline Dataset generate_dataset(const GenConfig& cfg) {
  cfg.validate();
  Dataset out;
  out.cloud_size = cfg.cloud_size;

  struct EpisodeBatch {
    std::vector<TrainingSample> samples;
    std::vector<std::array<std::uint32_t, 2>> provenance;
    std::size_t skipped = 0;
  };
  std::vector<EpisodeBatch> batches(cfg.num_configs);

#pragma omp parallel for schedule(dynamic)
  for (long e = 0; e < static_cast<long>(cfg.num_configs); ++e) {
    const std::size_t ep = static_cast<std::size_t>(e);
    const std::uint64_t ep_seed = derive_seed(cfg.seed, {1, ep});
    SpringMesh mesh = detail::make_episode_mesh(cfg);
    Rng mp_rng(derive_seed(ep_seed, {0}));
    const Vec3 mp = detail::f32_round(detail::sample_surface_mp(mesh, cfg, mp_rng));
    GraspHandle handle = grasp(mesh, mp, cfg.grasp_radius);

    EpisodeBatch& batch = batches[ep];
    for (std::size_t s = 0; s < cfg.shapes_per_config; ++s) {
      Rng shape_rng(derive_seed(ep_seed, {1, s}));
      const Vec3 dir = detail::random_unit_vector(shape_rng);
      const double mag = shape_rng.uniform(cfg.magnitude_min, cfg.magnitude_max);
      const Vec3 delta = detail::f32_round(dir * mag);

      mesh.reset();
      TrainingSample sample;
      sample.cloud_current =
          surface_cloud(mesh, cfg.cloud_size, derive_seed(ep_seed, {2, s, 0}));
      move_grasp(mesh, handle, delta);
      try {
        solve_equilibrium(mesh);
      } catch (const ConvergenceError&) {
        ++batch.skipped;
        continue;
      }
      sample.cloud_goal =
          surface_cloud(mesh, cfg.cloud_size, derive_seed(ep_seed, {2, s, 1}));
      sample.delta_p = delta;
      sample.mp = mp;
      batch.samples.push_back(std::move(sample));
      batch.provenance.push_back({static_cast<std::uint32_t>(ep),
                                  static_cast<std::uint32_t>(s)});
    }
  }

  for (EpisodeBatch& b : batches) {
    out.skipped += b.skipped;
    for (auto& s : b.samples) out.samples.push_back(std::move(s));
    for (auto& p : b.provenance) out.provenance.push_back(p);
  }
  const std::size_t attempted = cfg.num_configs * cfg.shapes_per_config;
  if (out.skipped * 20 > attempted) {  // > 5%
    throw GenerationError("more than 5% of samples skipped (" +
                          std::to_string(out.skipped) + " of " +
                          std::to_string(attempted) + ")");
  }
  return out;
}

// Open-loop replay of one stored sample from its episode's pre-state;
// returns the re-simulated goal cloud. The dataset self-consistency oracle
// compares it with the stored goal cloud.
inline PointCloud replay_goal_cloud(const GenConfig& cfg, std::size_t ep,
                                    std::size_t shape, const Vec3& stored_delta) {
  const std::uint64_t ep_seed = derive_seed(cfg.seed, {1, ep});
  SpringMesh mesh = detail::make_episode_mesh(cfg);
  Rng mp_rng(derive_seed(ep_seed, {0}));
  const Vec3 mp = detail::f32_round(detail::sample_surface_mp(mesh, cfg, mp_rng));
  GraspHandle handle = grasp(mesh, mp, cfg.grasp_radius);
  mesh.reset();
  move_grasp(mesh, handle, stored_delta);
  solve_equilibrium(mesh);
  return surface_cloud(mesh, cfg.cloud_size, derive_seed(ep_seed, {2, shape, 1}));
}

// ---------------------------------------------------------------------------
// DFNS dataset files. Little-endian: magic "DFNS", version u32, sample count
// u64, cloud size u32, flags u32 (bit 0: positions in meters). Per sample:
// n_points u32, current cloud f32 x 3n, goal cloud f32 x 3n, mp f32 x 3,
// delta_p f32 x 3.

inline constexpr char kDatasetMagic[4] = {'D', 'F', 'N', 'S'};
inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::uint32_t kDatasetFlagMeters = 1;

inline void save_dataset(const Dataset& dataset, std::ostream& os) {
  BinWriter w(os);
  w.magic(kDatasetMagic);
  w.u32(kDatasetVersion);
  w.u64(dataset.samples.size());
  w.u32(static_cast<std::uint32_t>(dataset.cloud_size));
  w.u32(kDatasetFlagMeters);
  std::vector<double> xyz;
  auto put_cloud = [&](const PointCloud& cloud) {
    xyz.resize(cloud.size() * 3);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      xyz[3 * i + 0] = cloud.points[i].x;
      xyz[3 * i + 1] = cloud.points[i].y;
      xyz[3 * i + 2] = cloud.points[i].z;
    }
    w.f32_array(xyz.data(), xyz.size());
  };
  for (const TrainingSample& s : dataset.samples) {
    w.u32(static_cast<std::uint32_t>(s.cloud_current.size()));
    put_cloud(s.cloud_current);
    put_cloud(s.cloud_goal);
    const double mp[3] = {s.mp.x, s.mp.y, s.mp.z};
    const double dp[3] = {s.delta_p.x, s.delta_p.y, s.delta_p.z};
    w.f32_array(mp, 3);
    w.f32_array(dp, 3);
  }
}

inline void save_dataset(const Dataset& dataset, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ParamError("cannot open for writing: " + path);
  save_dataset(dataset, f);
}

inline Dataset load_dataset(std::istream& is) {
  BinReader r(is);
  r.expect_magic(kDatasetMagic, "DFNS dataset");
  const std::uint64_t version_at = r.offset();
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion) {
    throw FormatError("unsupported dataset version", version_at);
  }
  const std::uint64_t count = r.u64();
  Dataset dataset;
  dataset.cloud_size = r.u32();
  r.u32();  // flags; meters is the only defined unit

  std::vector<double> xyz;
  auto get_cloud = [&](PointCloud& cloud, std::size_t n) {
    xyz.resize(n * 3);
    r.f32_array(xyz.data(), xyz.size());
    cloud.points.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      cloud.points[i] = {xyz[3 * i + 0], xyz[3 * i + 1], xyz[3 * i + 2]};
    }
  };
  dataset.samples.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t at = r.offset();
    const std::uint32_t n = r.u32();
    if (n != dataset.cloud_size) {
      throw FormatError("sample cloud size disagrees with header", at);
    }
    TrainingSample s;
    get_cloud(s.cloud_current, n);
    get_cloud(s.cloud_goal, n);
    double v[3];
    r.f32_array(v, 3);
    s.mp = {v[0], v[1], v[2]};
    r.f32_array(v, 3);
    s.delta_p = {v[0], v[1], v[2]};
    dataset.samples.push_back(std::move(s));
  }
  return dataset;
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParamError("cannot open for reading: " + path);
  return load_dataset(f);
}

// ---------------------------------------------------------------------------
// Evaluation harness: fresh held-out episodes, servo runs per MP method.

struct EvalConfig {
  std::size_t cases = 20;
  GenConfig episodes;      // episode construction (seed, ranges, MP region)
  ServoConfig servo;
  std::size_t keypoints = 200;
  std::size_t top_m = 5;

  EvalConfig() {
    // paper-analog episodes: the holding arm clamps one end, the moving
    // gripper grasps near the other end and bends
    episodes.mp_min_x_fraction = 0.9;
    episodes.magnitude_max = 0.05;
  }
};

struct EvalRow {
  std::size_t case_id = 0;
  std::string method;
  double mp_error_m = 0.0;        // distance to ground-truth MP
  double mp_error_frac = 0.0;     // as fraction of the object diagonal
  double initial_chamfer = 0.0;
  double final_chamfer = 0.0;
  std::size_t iterations = 0;
  std::string outcome;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  double diagonal = 0.0;
  std::map<std::string, double> mean_mp_error;     // per method
  std::map<std::string, double> mean_final_ratio;  // final/initial chamfer
};

inline void write_eval_csv(const std::vector<EvalRow>& rows, std::ostream& os) {
  os << "case,mp_method,mp_error_m,mp_error_frac_diag,initial_chamfer_m,"
        "final_chamfer_m,iters,outcome\n";
  os.precision(12);
  for (const EvalRow& r : rows) {
    os << r.case_id << ',' << r.method << ',' << r.mp_error_m << ','
       << r.mp_error_frac << ',' << r.initial_chamfer << ',' << r.final_chamfer
       << ',' << r.iterations << ',' << r.outcome << '\n';
  }
}

// Runs servo episodes with ground-truth, heuristic and (when a model is
// given) regression manipulation points. One row per (case, method).
inline EvalReport evaluate(DeformerNet& deformer, DeformerNet* mp_model,
                           const EvalConfig& cfg) {
  EvalReport report;
  report.diagonal = cfg.episodes.box_dims.norm();

  for (std::size_t c = 0; c < cfg.cases; ++c) {
    const Episode episode = make_episode(cfg.episodes, c, 0);

    struct MethodPick {
      std::string name;
      Vec3 mp;
    };
    std::vector<MethodPick> picks;
    picks.push_back({"ground-truth", episode.mp});
    {
      SpringMesh mesh = detail::make_episode_mesh(cfg.episodes);
      MpContext ctx;
      ctx.keypoints = cfg.keypoints;
      ctx.top_m = cfg.top_m;
      ctx.mesh = &mesh;
      picks.push_back(
          {"heuristic", select_mp(MpMethod::Heuristic, episode.initial, episode.goal, ctx)});
      if (mp_model != nullptr) {
        ctx.mp_model = mp_model;
        picks.push_back({"regression",
                         select_mp(MpMethod::Regression, episode.initial, episode.goal, ctx)});
      }
    }

    for (const MethodPick& pick : picks) {
      SpringMesh mesh = detail::make_episode_mesh(cfg.episodes);
      EvalRow row;
      row.case_id = c;
      row.method = pick.name;
      row.mp_error_m = (pick.mp - episode.mp).norm();
      row.mp_error_frac = row.mp_error_m / report.diagonal;
      try {
        GraspHandle handle = grasp(mesh, pick.mp, cfg.episodes.grasp_radius);
        ServoConfig servo_cfg = cfg.servo;
        servo_cfg.cloud_size = cfg.episodes.cloud_size;
        ServoTrace trace = run_servo(mesh, handle, episode.goal, deformer, servo_cfg);
        row.initial_chamfer = trace.initial_chamfer();
        row.final_chamfer = trace.final_chamfer();
        row.iterations = trace.records.size() - 1;
        row.outcome = to_string(trace.outcome);
      } catch (const GraspMissError&) {
        row.outcome = "grasp-miss";
      }
      report.rows.push_back(row);
    }
  }

  std::map<std::string, std::pair<double, std::size_t>> err_acc, ratio_acc;
  for (const EvalRow& r : report.rows) {
    err_acc[r.method].first += r.mp_error_m;
    err_acc[r.method].second += 1;
    if (r.initial_chamfer > 0.0) {
      ratio_acc[r.method].first += r.final_chamfer / r.initial_chamfer;
      ratio_acc[r.method].second += 1;
    }
  }
  for (const auto& [method, acc] : err_acc) {
    report.mean_mp_error[method] = acc.first / static_cast<double>(acc.second);
  }
  for (const auto& [method, acc] : ratio_acc) {
    report.mean_final_ratio[method] = acc.first / static_cast<double>(acc.second);
  }
  return report;
}

inline std::string summarize(const EvalReport& report) {
  std::ostringstream os;
  os.precision(4);
  os << "object diagonal: " << report.diagonal << " m\n";
  for (const auto& [method, err] : report.mean_mp_error) {
    os << method << ": mean MP error " << err << " m ("
       << err / report.diagonal * 100.0 << "% of diagonal), mean final/initial chamfer ";
    auto it = report.mean_final_ratio.find(method);
    os << (it == report.mean_final_ratio.end() ? -1.0 : it->second) << "\n";
  }
  return os.str();
}

}  // namespace dfn
