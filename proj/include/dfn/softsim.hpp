#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "dfn/error.hpp"
#include "dfn/geom.hpp"
#include "dfn/rng.hpp"

namespace dfn {

struct MaterialParams {
  double young_modulus = 1000.0;  // Pa
  double poisson_ratio = 0.3;

  void validate() const {
    if (!(young_modulus > 0.0)) throw ParamError("young_modulus must be > 0");
    if (!(poisson_ratio >= 0.0 && poisson_ratio < 0.5)) {
      throw ParamError("poisson_ratio must be in [0, 0.5)");
    }
  }
};

struct Spring {
  std::uint32_t i = 0, j = 0;
  double rest_length = 0.0;  // m
  double stiffness = 0.0;    // N/m
};

enum class Axis { X, Y, Z };
enum class Side { Min, Max };

struct FaceSelector {
  Axis axis = Axis::X;
  Side side = Side::Min;
};

// Vertex set rigidly attached to the gripper.
struct GraspHandle {
  std::vector<std::uint32_t> vertices;
  Vec3 grasp_center;
  Vec3 current_offset;
};

struct MoveResult {
  Vec3 applied;              // displacement actually added to the offset
  bool clamped_to_max = false;
};

struct SolveReport {
  std::size_t iterations = 0;
  double residual = 0.0;           // final force norm, N
  std::vector<double> energies;    // energy after each accepted iteration
};

// Regular spring lattice of a soft box. One boundary face can be clamped
// (the holding arm) and a vertex set attached to a movable gripper.
//
// Stiffness mapping: each cell of size (hx,hy,hz) donates material to its
// springs as k = E * A / L with A an area share. Axial edges receive
// A += (cross-section of the cell in that direction) / 4 per adjacent cell,
// which reproduces the axial stiffness of a solid bar. The 12 face diagonals
// and 4 cell diagonals each receive A += r(nu) * (V/L) / 16 per adjacent
// cell, where V is the cell volume and r(nu) = nu / (1 - nu). The diagonal
// ratio is the only place the Poisson ratio enters; this is an approximation
// of isotropic elasticity, not an FEM discretization. At nu = 0 diagonal
// springs are omitted entirely.
struct SpringMesh {
  Vec3 dims;
  int nx = 0, ny = 0, nz = 0;  // cell counts
  MaterialParams material;

  std::vector<Vec3> rest_positions;
  std::vector<Vec3> positions;
  std::vector<Spring> springs;
  std::vector<std::uint32_t> clamped;           // sorted vertex indices
  std::optional<GraspHandle> attachment;
  std::vector<std::array<std::uint32_t, 3>> surface_triangles;

  double max_step = 0.02;  // per-move gripper displacement clamp, m

  std::size_t vertex_count() const { return rest_positions.size(); }

  std::uint32_t vertex_index(int ix, int iy, int iz) const {
    return static_cast<std::uint32_t>(ix + (nx + 1) * (iy + (ny + 1) * iz));
  }

  bool is_surface_vertex(std::uint32_t v) const {
    int per_slab = (nx + 1) * (ny + 1);
    int iz = static_cast<int>(v) / per_slab;
    int rem = static_cast<int>(v) % per_slab;
    int iy = rem / (nx + 1);
    int ix = rem % (nx + 1);
    return ix == 0 || ix == nx || iy == 0 || iy == ny || iz == 0 || iz == nz;
  }

  bool is_clamped(std::uint32_t v) const {
    return std::binary_search(clamped.begin(), clamped.end(), v);
  }

  bool is_attached(std::uint32_t v) const {
    if (!attachment) return false;
    return std::binary_search(attachment->vertices.begin(),
                              attachment->vertices.end(), v);
  }

  // Back to the rest configuration with zero gripper offset.
  void reset() {
    positions = rest_positions;
    if (attachment) attachment->current_offset = Vec3{};
  }

  // Rigid translation of the whole scene (rest state, current state, grasp).
  void translate(const Vec3& t) {
    for (Vec3& p : rest_positions) p += t;
    for (Vec3& p : positions) p += t;
    if (attachment) attachment->grasp_center += t;
  }
};

namespace detail {

inline void add_spring_share(std::map<std::pair<std::uint32_t, std::uint32_t>, double>& acc,
                             std::uint32_t a, std::uint32_t b, double area_share) {
  if (a > b) std::swap(a, b);
  acc[{a, b}] += area_share;
}

}  // namespace detail

inline SpringMesh build_box(const Vec3& dims, const std::array<int, 3>& resolution,
                            const MaterialParams& material) {
  material.validate();
  if (!(dims.x > 0.0 && dims.y > 0.0 && dims.z > 0.0)) {
    throw ParamError("box dimensions must be positive");
  }
  const int nx = resolution[0], ny = resolution[1], nz = resolution[2];
  if (nx < 1 || ny < 1 || nz < 1) throw ParamError("resolution must be >= 1");

  SpringMesh mesh;
  mesh.dims = dims;
  mesh.nx = nx; mesh.ny = ny; mesh.nz = nz;
  mesh.material = material;

  const double hx = dims.x / nx, hy = dims.y / ny, hz = dims.z / nz;
  mesh.rest_positions.reserve(static_cast<std::size_t>((nx + 1) * (ny + 1) * (nz + 1)));
  for (int iz = 0; iz <= nz; ++iz)
    for (int iy = 0; iy <= ny; ++iy)
      for (int ix = 0; ix <= nx; ++ix)
        mesh.rest_positions.push_back({ix * hx, iy * hy, iz * hz});
  mesh.positions = mesh.rest_positions;

  const double volume = hx * hy * hz;
  const double nu = material.poisson_ratio;
  const double diag_ratio = nu / (1.0 - nu);

  std::map<std::pair<std::uint32_t, std::uint32_t>, double> shares;
  auto v = [&](int ix, int iy, int iz) { return mesh.vertex_index(ix, iy, iz); };

  for (int iz = 0; iz < nz; ++iz) {
    for (int iy = 0; iy < ny; ++iy) {
      for (int ix = 0; ix < nx; ++ix) {
        std::uint32_t c[2][2][2];
        for (int dz = 0; dz < 2; ++dz)
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx)
              c[dx][dy][dz] = v(ix + dx, iy + dy, iz + dz);

        // 4 axial edges per direction, each gets a quarter of the cell's
        // cross-section in that direction
        for (int a = 0; a < 2; ++a) {
          for (int b = 0; b < 2; ++b) {
            detail::add_spring_share(shares, c[0][a][b], c[1][a][b], hy * hz / 4.0);
            detail::add_spring_share(shares, c[a][0][b], c[a][1][b], hx * hz / 4.0);
            detail::add_spring_share(shares, c[a][b][0], c[a][b][1], hx * hy / 4.0);
          }
        }

        if (diag_ratio > 1e-12) {
          auto diag = [&](std::uint32_t p, std::uint32_t q, double length) {
            detail::add_spring_share(shares, p, q,
                                     diag_ratio * volume / (16.0 * length));
          };
          const double lxy = std::hypot(hx, hy);
          const double lxz = std::hypot(hx, hz);
          const double lyz = std::hypot(hy, hz);
          const double lxyz = std::sqrt(hx * hx + hy * hy + hz * hz);
          // 12 face diagonals
          for (int a = 0; a < 2; ++a) {
            diag(c[0][0][a], c[1][1][a], lxy);
            diag(c[1][0][a], c[0][1][a], lxy);
            diag(c[0][a][0], c[1][a][1], lxz);
            diag(c[1][a][0], c[0][a][1], lxz);
            diag(c[a][0][0], c[a][1][1], lyz);
            diag(c[a][1][0], c[a][0][1], lyz);
          }
          // 4 cell diagonals
          diag(c[0][0][0], c[1][1][1], lxyz);
          diag(c[1][0][0], c[0][1][1], lxyz);
          diag(c[0][1][0], c[1][0][1], lxyz);
          diag(c[1][1][0], c[0][0][1], lxyz);
        }
      }
    }
  }

  mesh.springs.reserve(shares.size());
  for (const auto& [key, area] : shares) {
    Spring s;
    s.i = key.first;
    s.j = key.second;
    s.rest_length = (mesh.rest_positions[s.i] - mesh.rest_positions[s.j]).norm();
    s.stiffness = material.young_modulus * area / s.rest_length;
    mesh.springs.push_back(s);
  }

  // boundary triangulation, outward-ordered per face
  auto add_quad = [&](std::uint32_t a, std::uint32_t b, std::uint32_t cc, std::uint32_t d) {
    mesh.surface_triangles.push_back({a, b, cc});
    mesh.surface_triangles.push_back({a, cc, d});
  };
  for (int iy = 0; iy < ny; ++iy)
    for (int iz = 0; iz < nz; ++iz) {
      add_quad(v(0, iy, iz), v(0, iy, iz + 1), v(0, iy + 1, iz + 1), v(0, iy + 1, iz));
      add_quad(v(nx, iy, iz), v(nx, iy + 1, iz), v(nx, iy + 1, iz + 1), v(nx, iy, iz + 1));
    }
  for (int ix = 0; ix < nx; ++ix)
    for (int iz = 0; iz < nz; ++iz) {
      add_quad(v(ix, 0, iz), v(ix + 1, 0, iz), v(ix + 1, 0, iz + 1), v(ix, 0, iz + 1));
      add_quad(v(ix, ny, iz), v(ix, ny, iz + 1), v(ix + 1, ny, iz + 1), v(ix + 1, ny, iz));
    }
  for (int ix = 0; ix < nx; ++ix)
    for (int iy = 0; iy < ny; ++iy) {
      add_quad(v(ix, iy, 0), v(ix, iy + 1, 0), v(ix + 1, iy + 1, 0), v(ix + 1, iy, 0));
      add_quad(v(ix, iy, nz), v(ix + 1, iy, nz), v(ix + 1, iy + 1, nz), v(ix, iy + 1, nz));
    }

  return mesh;
}

// Adds every vertex on the selected boundary face to the clamped set.
// Idempotent; clamped vertices keep their current positions in all solves.
inline void clamp_face(SpringMesh& mesh, const FaceSelector& face) {
  int x_lo = 0, x_hi = mesh.nx, y_lo = 0, y_hi = mesh.ny, z_lo = 0, z_hi = mesh.nz;
  switch (face.axis) {
    case Axis::X: x_lo = x_hi = face.side == Side::Min ? 0 : mesh.nx; break;
    case Axis::Y: y_lo = y_hi = face.side == Side::Min ? 0 : mesh.ny; break;
    case Axis::Z: z_lo = z_hi = face.side == Side::Min ? 0 : mesh.nz; break;
  }
  for (int iz = z_lo; iz <= z_hi; ++iz)
    for (int iy = y_lo; iy <= y_hi; ++iy)
      for (int ix = x_lo; ix <= x_hi; ++ix)
        mesh.clamped.push_back(mesh.vertex_index(ix, iy, iz));
  std::sort(mesh.clamped.begin(), mesh.clamped.end());
  mesh.clamped.erase(std::unique(mesh.clamped.begin(), mesh.clamped.end()),
                     mesh.clamped.end());
}

// Attaches all surface vertices within radius of point to the gripper.
inline GraspHandle grasp(SpringMesh& mesh, const Vec3& point, double radius) {
  if (!(radius > 0.0)) throw ParamError("grasp radius must be > 0");
  GraspHandle handle;
  handle.grasp_center = point;
  handle.current_offset = Vec3{};
  const double r2 = radius * radius;
  for (std::uint32_t v = 0; v < mesh.vertex_count(); ++v) {
    if (!mesh.is_surface_vertex(v)) continue;
    if (squared_distance(mesh.positions[v], point) <= r2) {
      handle.vertices.push_back(v);
    }
  }
  if (handle.vertices.empty()) {
    throw GraspMissError("no surface vertex within grasp radius");
  }
  for (std::uint32_t v : handle.vertices) {
    if (mesh.is_clamped(v)) {
      throw GraspConflictError("grasp overlaps clamped vertex set");
    }
  }
  mesh.attachment = handle;
  return handle;
}

inline void release_grasp(SpringMesh& mesh) { mesh.attachment.reset(); }

// Adds delta to the gripper offset, clamping its norm so that no single move
// exceeds mesh.max_step. Attached vertices are constrained to
// rest_position + current_offset during solves.
inline MoveResult move_grasp(SpringMesh& mesh, GraspHandle& handle, const Vec3& delta) {
  if (!mesh.attachment || mesh.attachment->vertices != handle.vertices) {
    throw ParamError("grasp handle does not match mesh attachment");
  }
  MoveResult result;
  result.applied = delta;
  const double mag = delta.norm();
  if (mag > mesh.max_step) {
    result.applied = delta * (mesh.max_step / mag);
    result.clamped_to_max = true;
  }
  mesh.attachment->current_offset += result.applied;
  handle = *mesh.attachment;
  return result;
}

namespace detail {

struct SolveWorkspace {
  std::vector<std::int32_t> dof_of_vertex;  // -1 for constrained vertices
  std::vector<std::uint32_t> free_vertices;
};

inline SolveWorkspace make_workspace(const SpringMesh& mesh) {
  SolveWorkspace ws;
  ws.dof_of_vertex.assign(mesh.vertex_count(), -1);
  for (std::uint32_t v = 0; v < mesh.vertex_count(); ++v) {
    if (mesh.is_clamped(v) || mesh.is_attached(v)) continue;
    ws.dof_of_vertex[v] = static_cast<std::int32_t>(ws.free_vertices.size());
    ws.free_vertices.push_back(v);
  }
  return ws;
}

inline double spring_energy(const SpringMesh& mesh) {
  double e = 0.0;
  for (const Spring& s : mesh.springs) {
    const double len = (mesh.positions[s.i] - mesh.positions[s.j]).norm();
    const double stretch = len - s.rest_length;
    e += 0.5 * s.stiffness * stretch * stretch;
  }
  return e;
}

// Gradient of the spring energy w.r.t. free-vertex positions.
inline void spring_gradient(const SpringMesh& mesh, const SolveWorkspace& ws,
                            Eigen::VectorXd& grad) {
  grad.setZero();
  for (const Spring& s : mesh.springs) {
    const Vec3 d = mesh.positions[s.i] - mesh.positions[s.j];
    const double len = std::max(d.norm(), 1e-12);
    const double coeff = s.stiffness * (len - s.rest_length) / len;
    const Vec3 f = d * coeff;  // dE/dx_i
    const std::int32_t di = ws.dof_of_vertex[s.i];
    const std::int32_t dj = ws.dof_of_vertex[s.j];
    if (di >= 0) {
      grad[3 * di + 0] += f.x; grad[3 * di + 1] += f.y; grad[3 * di + 2] += f.z;
    }
    if (dj >= 0) {
      grad[3 * dj + 0] -= f.x; grad[3 * dj + 1] -= f.y; grad[3 * dj + 2] -= f.z;
    }
  }
}

inline void spring_hessian(const SpringMesh& mesh, const SolveWorkspace& ws,
                           std::vector<Eigen::Triplet<double>>& triplets) {
  triplets.clear();
  for (const Spring& s : mesh.springs) {
    const Vec3 d = mesh.positions[s.i] - mesh.positions[s.j];
    const double len = std::max(d.norm(), 1e-12);
    Eigen::Vector3d u(d.x / len, d.y / len, d.z / len);
    Eigen::Matrix3d uu = u * u.transpose();
    // k * [ u u^T + (1 - L0/len) (I - u u^T) ]
    Eigen::Matrix3d block =
        s.stiffness * (uu + (1.0 - s.rest_length / len) *
                                (Eigen::Matrix3d::Identity() - uu));
    const std::int32_t di = ws.dof_of_vertex[s.i];
    const std::int32_t dj = ws.dof_of_vertex[s.j];
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        const double val = block(r, c);
        if (di >= 0) triplets.emplace_back(3 * di + r, 3 * di + c, val);
        if (dj >= 0) triplets.emplace_back(3 * dj + r, 3 * dj + c, val);
        if (di >= 0 && dj >= 0) {
          triplets.emplace_back(3 * di + r, 3 * dj + c, -val);
          triplets.emplace_back(3 * dj + r, 3 * di + c, -val);
        }
      }
    }
  }
}

}  // namespace detail

// Quasi-static equilibrium: minimizes total spring energy over free vertices
// subject to clamps and the gripper attachment, by damped Newton with
// backtracking line search. Returns the final residual force norm.
inline SolveReport solve_equilibrium(SpringMesh& mesh, double tol = 1e-7,
                                     std::size_t max_iters = 500) {
  if (!(tol > 0.0)) throw ParamError("solver tolerance must be > 0");

  // enforce hard constraints before minimizing
  if (mesh.attachment) {
    for (std::uint32_t v : mesh.attachment->vertices) {
      mesh.positions[v] = mesh.rest_positions[v] + mesh.attachment->current_offset;
    }
  }

  const detail::SolveWorkspace ws = detail::make_workspace(mesh);
  const std::size_t n_dof = 3 * ws.free_vertices.size();
  SolveReport report;
  if (n_dof == 0) {
    report.residual = 0.0;
    return report;
  }

  Eigen::VectorXd grad(n_dof), step(n_dof);
  std::vector<Eigen::Triplet<double>> triplets;
  Eigen::SparseMatrix<double> hess(static_cast<int>(n_dof), static_cast<int>(n_dof));

  auto gather = [&](Eigen::VectorXd& x) {
    for (std::size_t f = 0; f < ws.free_vertices.size(); ++f) {
      const Vec3& p = mesh.positions[ws.free_vertices[f]];
      x[3 * f + 0] = p.x; x[3 * f + 1] = p.y; x[3 * f + 2] = p.z;
    }
  };
  auto scatter = [&](const Eigen::VectorXd& x) {
    for (std::size_t f = 0; f < ws.free_vertices.size(); ++f) {
      Vec3& p = mesh.positions[ws.free_vertices[f]];
      p.x = x[3 * f + 0]; p.y = x[3 * f + 1]; p.z = x[3 * f + 2];
    }
  };

  Eigen::VectorXd x(n_dof);
  gather(x);
  double energy = detail::spring_energy(mesh);
  double lambda = 0.0;

  for (std::size_t iter = 0; iter < max_iters; ++iter) {
    detail::spring_gradient(mesh, ws, grad);
    report.residual = grad.norm();
    if (report.residual <= tol) return report;

    detail::spring_hessian(mesh, ws, triplets);
    hess.setFromTriplets(triplets.begin(), triplets.end());

    bool accepted = false;
    for (int attempt = 0; attempt < 12 && !accepted; ++attempt) {
      Eigen::SparseMatrix<double> damped = hess;
      if (lambda > 0.0) {
        for (int d = 0; d < static_cast<int>(n_dof); ++d) {
          damped.coeffRef(d, d) += lambda;
        }
      }
      Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(damped);
      bool have_direction = false;
      if (solver.info() == Eigen::Success) {
        step = solver.solve(-grad);
        have_direction = solver.info() == Eigen::Success && step.dot(grad) < 0.0;
      }
      if (!have_direction) {
        lambda = lambda == 0.0 ? 1e-6 : lambda * 10.0;
        continue;
      }

      // Armijo backtracking on the energy
      const double slope = grad.dot(step);
      double alpha = 1.0;
      while (alpha > 1e-10) {
        scatter(x + alpha * step);
        const double trial = detail::spring_energy(mesh);
        if (trial <= energy + 1e-4 * alpha * slope) {
          x += alpha * step;
          energy = trial;
          report.energies.push_back(energy);
          accepted = true;
          lambda = alpha == 1.0 ? lambda * 0.25 : lambda;
          if (lambda < 1e-12) lambda = 0.0;
          break;
        }
        alpha *= 0.5;
      }
      if (!accepted) {
        scatter(x);  // restore
        lambda = lambda == 0.0 ? 1e-6 : lambda * 10.0;
      }
    }
    ++report.iterations;
    if (!accepted) break;  // no progress possible
  }

  detail::spring_gradient(mesh, ws, grad);
  report.residual = grad.norm();
  if (report.residual > tol) {
    throw ConvergenceError("equilibrium solve did not converge", report.residual);
  }
  return report;
}

// Uniform-by-area sampling of the deformed boundary surface, reduced to
// exactly n points with farthest point sampling. source_ids hold the nearest
// rest vertex of each sample's enclosing triangle. Deterministic per seed.
inline PointCloud surface_cloud(const SpringMesh& mesh, std::size_t n,
                                std::uint64_t seed) {
  if (n < 1) throw SizeError("surface_cloud: n must be >= 1");
  const auto& tris = mesh.surface_triangles;

  std::vector<double> cum_area(tris.size());
  double total = 0.0;
  for (std::size_t t = 0; t < tris.size(); ++t) {
    const Vec3& a = mesh.positions[tris[t][0]];
    const Vec3& b = mesh.positions[tris[t][1]];
    const Vec3& c = mesh.positions[tris[t][2]];
    total += 0.5 * (b - a).cross(c - a).norm();
    cum_area[t] = total;
  }
  if (!(total > 0.0)) throw DegenerateGeometryError("surface has zero area");

  const std::size_t oversample = std::max<std::size_t>(4 * n, 64);
  std::vector<Vec3> pts(oversample);
  std::vector<std::uint32_t> ids(oversample);
  Rng rng(seed);
  for (std::size_t s = 0; s < oversample; ++s) {
    const double u = rng.uniform() * total;
    const std::size_t t = static_cast<std::size_t>(
        std::lower_bound(cum_area.begin(), cum_area.end(), u) - cum_area.begin());
    const auto& tri = tris[std::min(t, tris.size() - 1)];
    // uniform barycentric
    const double r1 = rng.uniform(), r2 = rng.uniform();
    const double sq = std::sqrt(r1);
    const double w0 = 1.0 - sq, w1 = sq * (1.0 - r2), w2 = sq * r2;
    pts[s] = mesh.positions[tri[0]] * w0 + mesh.positions[tri[1]] * w1 +
             mesh.positions[tri[2]] * w2;
    const Vec3 rest = mesh.rest_positions[tri[0]] * w0 +
                      mesh.rest_positions[tri[1]] * w1 +
                      mesh.rest_positions[tri[2]] * w2;
    double best = std::numeric_limits<double>::infinity();
    std::uint32_t best_v = tri[0];
    for (int corner = 0; corner < 3; ++corner) {
      const double d2 = squared_distance(rest, mesh.rest_positions[tri[corner]]);
      if (d2 < best) {
        best = d2;
        best_v = tri[corner];
      }
    }
    ids[s] = best_v;
  }

  PointCloud cloud;
  if (n >= oversample) {
    cloud.points = std::move(pts);
    cloud.source_ids = std::move(ids);
    return cloud;
  }
  const std::vector<std::size_t> keep = fps(pts, n, 0);
  cloud.points.reserve(n);
  cloud.source_ids.reserve(n);
  for (std::size_t idx : keep) {
    cloud.points.push_back(pts[idx]);
    cloud.source_ids.push_back(ids[idx]);
  }
  return cloud;
}

// Closest point on the deformed boundary surface (exact point-triangle test).
inline Vec3 project_to_surface(const SpringMesh& mesh, const Vec3& p) {
  auto closest_on_triangle = [](const Vec3& p, const Vec3& a, const Vec3& b,
                                const Vec3& c) {
    // Ericson, Real-Time Collision Detection, 5.1.5
    const Vec3 ab = b - a, ac = c - a, ap = p - a;
    const double d1 = ab.dot(ap), d2 = ac.dot(ap);
    if (d1 <= 0.0 && d2 <= 0.0) return a;
    const Vec3 bp = p - b;
    const double d3 = ab.dot(bp), d4 = ac.dot(bp);
    if (d3 >= 0.0 && d4 <= d3) return b;
    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + ab * (d1 / (d1 - d3));
    const Vec3 cp = p - c;
    const double d5 = ab.dot(cp), d6 = ac.dot(cp);
    if (d6 >= 0.0 && d5 <= d6) return c;
    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + ac * (d2 / (d2 - d6));
    const double va = d3 * d6 - d5 * d4;
    if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
      return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    const double denom = 1.0 / (va + vb + vc);
    return a + ab * (vb * denom) + ac * (vc * denom);
  };
  double best = std::numeric_limits<double>::infinity();
  Vec3 best_point = p;
  for (const auto& tri : mesh.surface_triangles) {
    const Vec3 q = closest_on_triangle(p, mesh.positions[tri[0]],
                                       mesh.positions[tri[1]], mesh.positions[tri[2]]);
    const double d2 = squared_distance(p, q);
    if (d2 < best) {
      best = d2;
      best_point = q;
    }
  }
  return best_point;
}

// ASCII OBJ snapshot: current vertex positions plus boundary triangles.
inline void write_obj(const SpringMesh& mesh, std::ostream& os) {
  os.precision(17);
  for (const Vec3& p : mesh.positions) {
    os << "v " << p.x << ' ' << p.y << ' ' << p.z << '\n';
  }
  for (const auto& tri : mesh.surface_triangles) {
    os << "f " << tri[0] + 1 << ' ' << tri[1] + 1 << ' ' << tri[2] + 1 << '\n';
  }
}

inline void write_obj(const SpringMesh& mesh, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw ParamError("cannot open for writing: " + path);
  write_obj(mesh, f);
}

}  // namespace dfn
