#include "roomtwin/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <numeric>

namespace roomtwin {

void Pose::validate() const {
  if (!position.allFinite()) throw InvalidArgument("pose position is not finite");
  if (std::abs(orientation.norm() - 1.0) > 1e-6) {
    throw InvalidArgument("pose orientation is not a unit quaternion");
  }
}

TriMesh TriMesh::build(std::vector<Vec3> vertices, std::vector<Face> faces, std::vector<Vec3> face_colors) {
  if (!face_colors.empty() && face_colors.size() != faces.size()) {
    throw InvalidArgument("TriMesh: face color count differs from face count");
  }
  TriMesh m;
  m.vertices = std::move(vertices);
  for (const auto& v : m.vertices) {
    if (!v.allFinite()) throw InvalidArgument("TriMesh: non-finite vertex");
  }
  const auto nv = static_cast<int>(m.vertices.size());
  for (std::size_t f = 0; f < faces.size(); ++f) {
    const Face& face = faces[f];
    for (int idx : face) {
      if (idx < 0 || idx >= nv) throw InvalidArgument("TriMesh: face index out of range");
    }
    const Vec3 cross =
        (m.vertices[face[1]] - m.vertices[face[0]]).cross(m.vertices[face[2]] - m.vertices[face[0]]);
    const double norm = cross.norm();
    if (!(norm > 1e-14)) continue;
    m.faces.push_back(face);
    m.face_normals.push_back(cross / norm);
    m.face_colors.push_back(face_colors.empty() ? Vec3::Constant(0.5) : face_colors[f]);
  }
  return m;
}

double TriMesh::area(std::size_t f) const {
  return 0.5 * (corner(f, 1) - corner(f, 0)).cross(corner(f, 2) - corner(f, 0)).norm();
}

Vec3 TriMesh::centroid(std::size_t f) const { return (corner(f, 0) + corner(f, 1) + corner(f, 2)) / 3.0; }

std::size_t TriMesh::append(const TriMesh& other) {
  const std::size_t first = faces.size();
  const int base = static_cast<int>(vertices.size());
  vertices.insert(vertices.end(), other.vertices.begin(), other.vertices.end());
  for (const auto& f : other.faces) faces.push_back({f[0] + base, f[1] + base, f[2] + base});
  face_colors.insert(face_colors.end(), other.face_colors.begin(), other.face_colors.end());
  face_normals.insert(face_normals.end(), other.face_normals.begin(), other.face_normals.end());
  return first;
}

void TriMesh::weld(double tol) {
  std::map<std::array<long long, 3>, int> index;
  std::vector<int> remap(vertices.size());
  std::vector<Vec3> kept;
  for (std::size_t i = 0; i < vertices.size(); ++i) {
    const std::array<long long, 3> key{std::llround(vertices[i].x() / tol), std::llround(vertices[i].y() / tol),
                                       std::llround(vertices[i].z() / tol)};
    auto [it, inserted] = index.emplace(key, static_cast<int>(kept.size()));
    if (inserted) kept.push_back(vertices[i]);
    remap[i] = it->second;
  }
  std::vector<Face> new_faces;
  std::vector<Vec3> colors;
  for (std::size_t f = 0; f < faces.size(); ++f) {
    new_faces.push_back({remap[faces[f][0]], remap[faces[f][1]], remap[faces[f][2]]});
    colors.push_back(face_colors[f]);
  }
  *this = build(std::move(kept), std::move(new_faces), std::move(colors));
}

void TriMesh::transform(const Eigen::Isometry3d& xf) {
  for (auto& v : vertices) v = xf * v;
  for (auto& n : face_normals) n = (xf.linear() * n).normalized();
}

std::pair<Vec3, Vec3> TriMesh::bounds() const {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (const auto& f : faces) {
    for (int i : f) {
      lo = lo.cwiseMin(vertices[i]);
      hi = hi.cwiseMax(vertices[i]);
    }
  }
  return {lo, hi};
}

// ---------------------------------------------------------------------------

std::optional<double> intersect_triangle(const Vec3& origin, const Vec3& dir, const Vec3& a, const Vec3& b,
                                         const Vec3& c) {
  constexpr double kEdgeSlack = 1e-10;
  const Vec3 e1 = b - a;
  const Vec3 e2 = c - a;
  const Vec3 p = dir.cross(e2);
  const double det = e1.dot(p);
  if (std::abs(det) < 1e-14) return std::nullopt;
  const double inv = 1.0 / det;
  const Vec3 s = origin - a;
  const double u = s.dot(p) * inv;
  if (u < -kEdgeSlack || u > 1.0 + kEdgeSlack) return std::nullopt;
  const Vec3 q = s.cross(e1);
  const double v = dir.dot(q) * inv;
  if (v < -kEdgeSlack || u + v > 1.0 + kEdgeSlack) return std::nullopt;
  return e2.dot(q) * inv;
}

Bvh::Bvh(const TriMesh& mesh) {
  const int n = static_cast<int>(mesh.size());
  tris_.resize(n);
  for (int f = 0; f < n; ++f) tris_[f] = {mesh.corner(f, 0), mesh.corner(f, 1), mesh.corner(f, 2)};
  order_.resize(n);
  std::iota(order_.begin(), order_.end(), 0);
  std::vector<Vec3> centroids(n);
  for (int f = 0; f < n; ++f) centroids[f] = mesh.centroid(f);
  nodes_.reserve(2 * static_cast<std::size_t>(n) + 1);
  if (n > 0) build(0, n, centroids);
}

int Bvh::build(int first, int count, std::vector<Vec3>& centroids) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.emplace_back();
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  Vec3 clo = lo, chi = hi;
  for (int i = first; i < first + count; ++i) {
    const int f = order_[i];
    for (int k = 0; k < 3; ++k) {
      lo = lo.cwiseMin(tris_[f][k]);
      hi = hi.cwiseMax(tris_[f][k]);
    }
    clo = clo.cwiseMin(centroids[f]);
    chi = chi.cwiseMax(centroids[f]);
  }
  const Vec3 pad = Vec3::Constant(1e-9);
  nodes_[id].lo = lo - pad;
  nodes_[id].hi = hi + pad;
  nodes_[id].first = first;
  nodes_[id].count = count;
  if (count <= 4) return id;

  int axis = 0;
  (chi - clo).maxCoeff(&axis);
  const int half = count / 2;
  std::nth_element(order_.begin() + first, order_.begin() + first + half, order_.begin() + first + count,
                   [&](int a, int b) {
                     if (centroids[a][axis] != centroids[b][axis]) return centroids[a][axis] < centroids[b][axis];
                     return a < b;
                   });
  const int left = build(first, half, centroids);
  const int right = build(first + half, count - half, centroids);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

namespace {

bool slab(const Vec3& lo, const Vec3& hi, const Vec3& origin, const Vec3& inv, double tmin, double tmax,
          double& entry) {
  double t0 = tmin, t1 = tmax;
  for (int a = 0; a < 3; ++a) {
    double near = (lo[a] - origin[a]) * inv[a];
    double far = (hi[a] - origin[a]) * inv[a];
    if (near > far) std::swap(near, far);
    // NaN from 0 * inf (origin on a slab face) leaves the interval open.
    if (near > t0) t0 = near;
    if (far < t1) t1 = far;
    if (t0 > t1) return false;
  }
  entry = t0;
  return true;
}

}  // namespace

std::optional<RayHit> Bvh::first_hit(const Vec3& origin, const Vec3& dir, double tmin, double tmax) const {
  if (nodes_.empty()) return std::nullopt;
  const Vec3 inv(1.0 / dir.x(), 1.0 / dir.y(), 1.0 / dir.z());
  double best = tmax;
  int best_face = -1;
  int stack[128];
  int top = 0;
  stack[top++] = 0;
  while (top > 0) {
    const Node& node = nodes_[stack[--top]];
    double entry = 0.0;
    if (!slab(node.lo, node.hi, origin, inv, tmin, best, entry)) continue;
    if (node.left < 0) {
      for (int i = node.first; i < node.first + node.count; ++i) {
        const int f = order_[i];
        const auto t = intersect_triangle(origin, dir, tris_[f][0], tris_[f][1], tris_[f][2]);
        if (!t || !(*t > tmin)) continue;
        if (*t < best || (*t == best && f < best_face)) {
          best = *t;
          best_face = f;
        }
      }
      continue;
    }
    double el = 0.0, er = 0.0;
    const Node& l = nodes_[node.left];
    const Node& r = nodes_[node.right];
    const bool hl = slab(l.lo, l.hi, origin, inv, tmin, best, el);
    const bool hr = slab(r.lo, r.hi, origin, inv, tmin, best, er);
    if (hl && hr) {
      if (el <= er) {
        stack[top++] = node.right;
        stack[top++] = node.left;
      } else {
        stack[top++] = node.left;
        stack[top++] = node.right;
      }
    } else if (hl) {
      stack[top++] = node.left;
    } else if (hr) {
      stack[top++] = node.right;
    }
  }
  if (best_face < 0) return std::nullopt;
  return RayHit{origin + best * dir, best_face, best};
}

std::optional<RayHit> ray_cast_first_hit(const Bvh& bvh, const Vec3& origin, const Vec3& dir) {
  return bvh.first_hit(origin, dir);
}

std::optional<RayHit> ray_cast_brute_force(const TriMesh& mesh, const Vec3& origin, const Vec3& dir) {
  double best = std::numeric_limits<double>::infinity();
  int best_face = -1;
  for (std::size_t f = 0; f < mesh.size(); ++f) {
    const auto t = intersect_triangle(origin, dir, mesh.corner(f, 0), mesh.corner(f, 1), mesh.corner(f, 2));
    if (t && *t > kRayEpsilon && *t < best) {
      best = *t;
      best_face = static_cast<int>(f);
    }
  }
  if (best_face < 0) return std::nullopt;
  return RayHit{origin + best * dir, best_face, best};
}

// ---------------------------------------------------------------------------

std::vector<std::vector<int>> face_adjacency(const TriMesh& mesh) {
  std::map<std::pair<int, int>, std::vector<int>> edges;
  for (std::size_t f = 0; f < mesh.size(); ++f) {
    for (int k = 0; k < 3; ++k) {
      int a = mesh.faces[f][k], b = mesh.faces[f][(k + 1) % 3];
      if (a > b) std::swap(a, b);
      edges[{a, b}].push_back(static_cast<int>(f));
    }
  }
  std::vector<std::vector<int>> adj(mesh.size());
  for (const auto& [edge, faces] : edges) {
    for (int f : faces) {
      for (int g : faces) {
        if (f != g) adj[f].push_back(g);
      }
    }
  }
  for (auto& list : adj) {
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
  }
  return adj;
}

std::vector<SurfaceSegment> segment_mesh(const TriMesh& mesh, double color_tol, double normal_tol_deg) {
  const auto adj = face_adjacency(mesh);
  const double cos_tol = std::cos(std::min(normal_tol_deg, 180.0) * kPi / 180.0);
  std::vector<int> owner(mesh.size(), -1);
  std::vector<SurfaceSegment> segments;

  for (std::size_t seed = 0; seed < mesh.size(); ++seed) {
    if (owner[seed] >= 0) continue;
    SurfaceSegment seg;
    seg.id = static_cast<int>(segments.size());
    Vec3 color_sum = mesh.face_colors[seed];
    Vec3 normal_sum = mesh.face_normals[seed];
    owner[seed] = seg.id;
    seg.faces.push_back(static_cast<int>(seed));
    std::deque<int> queue{static_cast<int>(seed)};
    while (!queue.empty()) {
      const int f = queue.front();
      queue.pop_front();
      for (int nb : adj[f]) {
        if (owner[nb] >= 0) continue;
        const double n = static_cast<double>(seg.faces.size());
        const Vec3 mean_color = color_sum / n;
        if ((mesh.face_colors[nb] - mean_color).norm() > color_tol) continue;
        const double len = normal_sum.norm();
        const Vec3 mean_normal = len > 1e-12 ? Vec3(normal_sum / len) : mesh.face_normals[seed];
        if (normal_tol_deg < 180.0 && mesh.face_normals[nb].dot(mean_normal) < cos_tol) continue;
        owner[nb] = seg.id;
        seg.faces.push_back(nb);
        color_sum += mesh.face_colors[nb];
        normal_sum += mesh.face_normals[nb];
        queue.push_back(nb);
      }
    }
    std::sort(seg.faces.begin(), seg.faces.end());
    seg.color = color_sum / static_cast<double>(seg.faces.size());
    segments.push_back(std::move(seg));
  }
  return segments;
}

std::vector<Vec3> sphere_directions(std::size_t count) {
  if (count == 0) throw InvalidArgument("sphere_directions: count must be at least 1");
  const double golden = kPi * (3.0 - std::sqrt(5.0));
  std::vector<Vec3> dirs(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double z = 1.0 - (2.0 * static_cast<double>(i) + 1.0) / static_cast<double>(count);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * static_cast<double>(i);
    dirs[i] = Vec3(r * std::cos(phi), r * std::sin(phi), z).normalized();
  }
  return dirs;
}

}  // namespace roomtwin
