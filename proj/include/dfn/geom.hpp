#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "dfn/error.hpp"

namespace dfn {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3() = default;
  Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  Vec3 operator-() const { return {-x, -y, -z}; }
  Vec3& operator+=(const Vec3& o) {
    x += o.x; y += o.y; z += o.z;
    return *this;
  }
  Vec3& operator-=(const Vec3& o) {
    x -= o.x; y -= o.y; z -= o.z;
    return *this;
  }

  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double squared_norm() const { return dot(*this); }
  double norm() const { return std::sqrt(squared_norm()); }
  bool finite() const {
    return std::isfinite(x) && std::isfinite(y) && std::isfinite(z);
  }
  double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

inline double squared_distance(const Vec3& a, const Vec3& b) {
  return (a - b).squared_norm();
}

// Ordered point set in meters. source_ids, when non-empty, map each point to
// the nearest rest vertex of the originating mesh (simulator clouds only).
struct PointCloud {
  std::vector<Vec3> points;
  std::vector<std::uint32_t> source_ids;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_source_ids() const { return !source_ids.empty(); }

  void validate() const {
    if (points.empty()) throw SizeError("point cloud is empty");
    for (const Vec3& p : points) {
      if (!p.finite()) throw ParamError("point cloud contains non-finite point");
    }
    if (!source_ids.empty() && source_ids.size() != points.size()) {
      throw SizeError("source_ids length does not match point count");
    }
  }
};

inline Vec3 centroid(const PointCloud& cloud) {
  if (cloud.empty()) throw SizeError("centroid of empty cloud");
  Vec3 c;
  for (const Vec3& p : cloud.points) c += p;
  return c / static_cast<double>(cloud.size());
}

inline PointCloud translated(const PointCloud& cloud, const Vec3& t) {
  PointCloud out = cloud;
  for (Vec3& p : out.points) p += t;
  return out;
}

// Diagonal of the axis-aligned bounding box.
inline double bbox_diagonal(const PointCloud& cloud) {
  if (cloud.empty()) throw SizeError("bbox of empty cloud");
  Vec3 lo = cloud.points[0], hi = cloud.points[0];
  for (const Vec3& p : cloud.points) {
    lo.x = std::min(lo.x, p.x); lo.y = std::min(lo.y, p.y); lo.z = std::min(lo.z, p.z);
    hi.x = std::max(hi.x, p.x); hi.y = std::max(hi.y, p.y); hi.z = std::max(hi.z, p.z);
  }
  return (hi - lo).norm();
}

// Farthest point sampling over an explicit point span. Greedy: each pick
// maximizes the minimum distance to the already-selected set, ties broken by
// lowest index. Deterministic.
inline std::vector<std::size_t> fps(const std::vector<Vec3>& points,
                                    std::size_t k, std::size_t seed_index = 0) {
  const std::size_t n = points.size();
  if (k < 1 || k > n) throw SizeError("fps: k out of range");
  if (seed_index >= n) throw SizeError("fps: seed index out of range");

  std::vector<std::size_t> selected;
  selected.reserve(k);
  selected.push_back(seed_index);

  // min squared distance to the selected set; squared distances preserve the
  // argmax and the tie pattern of Euclidean distances
  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  std::vector<char> picked(n, 0);
  picked[seed_index] = 1;
  for (std::size_t step = 1; step < k; ++step) {
    const Vec3& last = points[selected.back()];
    std::size_t best = n;
    double best_d2 = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      double d2 = squared_distance(points[i], last);
      if (d2 < min_d2[i]) min_d2[i] = d2;
      if (!picked[i] && min_d2[i] > best_d2) {
        best_d2 = min_d2[i];
        best = i;
      }
    }
    picked[best] = 1;
    selected.push_back(best);
  }
  return selected;
}

inline std::vector<std::size_t> fps(const PointCloud& cloud, std::size_t k,
                                    std::size_t seed_index = 0) {
  return fps(cloud.points, k, seed_index);
}

// Exact k-nearest-neighbor query, sorted by distance then index.
inline std::vector<std::size_t> knn(const std::vector<Vec3>& points,
                                    const Vec3& query, std::size_t k) {
  const std::size_t n = points.size();
  if (k < 1 || k > n) throw SizeError("knn: k out of range");
  std::vector<std::pair<double, std::size_t>> dist(n);
  for (std::size_t i = 0; i < n; ++i) dist[i] = {squared_distance(points[i], query), i};
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k),
                    dist.end());
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = dist[i].second;
  return out;
}

inline std::vector<std::size_t> knn(const PointCloud& cloud, const Vec3& query,
                                    std::size_t k) {
  return knn(cloud.points, query, k);
}

// Symmetric Chamfer distance with unsquared (first-power) distances:
//   (1/|a|) sum_a min_b ||p-q||  +  (1/|b|) sum_b min_a ||q-p||
// Summation runs in index order in both directions, so chamfer(a,b) and
// chamfer(b,a) are bit-identical.
inline double chamfer(const PointCloud& a, const PointCloud& b) {
  if (a.empty() || b.empty()) throw SizeError("chamfer: empty cloud");
  auto directed = [](const PointCloud& from, const PointCloud& to) {
    double sum = 0.0;
    for (const Vec3& p : from.points) {
      double best = std::numeric_limits<double>::infinity();
      for (const Vec3& q : to.points) {
        double d2 = squared_distance(p, q);
        if (d2 < best) best = d2;
      }
      sum += std::sqrt(best);
    }
    return sum / static_cast<double>(from.size());
  };
  return directed(a, b) + directed(b, a);
}

// ASCII XYZ: one "x y z" line per point, meters.
inline void write_xyz(const PointCloud& cloud, std::ostream& os) {
  os.precision(17);
  for (const Vec3& p : cloud.points) {
    os << p.x << ' ' << p.y << ' ' << p.z << '\n';
  }
}

inline void write_xyz(const PointCloud& cloud, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw ParamError("cannot open for writing: " + path);
  write_xyz(cloud, f);
}

inline PointCloud read_xyz(std::istream& is) {
  PointCloud cloud;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    Vec3 p;
    if (!(ls >> p.x >> p.y >> p.z)) {
      throw FormatError("bad XYZ line " + std::to_string(lineno), lineno);
    }
    cloud.points.push_back(p);
  }
  cloud.validate();
  return cloud;
}

inline PointCloud read_xyz(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ParamError("cannot open for reading: " + path);
  return read_xyz(f);
}

}  // namespace dfn
