#pragma once

#include <array>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "roomtwin/common.hpp"

namespace roomtwin {

struct Pose {
  Vec3 position = Vec3::Zero();
  Quat orientation = Quat::Identity();

  // Throws InvalidArgument unless the orientation is a unit quaternion.
  void validate() const;
  // World-frame direction expressed in the local frame.
  Vec3 to_local(const Vec3& world_dir) const { return orientation.conjugate() * world_dir; }
};

using Face = std::array<int, 3>;

struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  std::vector<Vec3> face_colors;   // RGB in [0, 1]
  std::vector<Vec3> face_normals;  // unit, from the winding order

  // Validates indices, drops zero-area faces and computes normals. Colors
  // default to mid grey when not supplied.
  static TriMesh build(std::vector<Vec3> vertices, std::vector<Face> faces,
                       std::vector<Vec3> face_colors = {});

  std::size_t size() const { return faces.size(); }
  bool empty() const { return faces.empty(); }
  double area(std::size_t f) const;
  Vec3 centroid(std::size_t f) const;
  const Vec3& corner(std::size_t f, int i) const { return vertices[faces[f][i]]; }

  // Appends `other`; returns the index of its first face in the result.
  std::size_t append(const TriMesh& other);
  // Merges vertices closer than tol (grid hashed); face topology is kept.
  void weld(double tol = 1e-9);
  void transform(const Eigen::Isometry3d& xf);

  std::pair<Vec3, Vec3> bounds() const;
};

struct RayHit {
  Vec3 point;
  int face = -1;
  double distance = 0.0;
};

inline constexpr double kRayEpsilon = 1e-4;

// Binary BVH over a snapshot of a mesh's triangles; face ids in hits refer
// to the mesh as it was at construction.
class Bvh {
 public:
  Bvh() = default;
  explicit Bvh(const TriMesh& mesh);

  // Nearest hit with distance in (tmin, tmax).
  std::optional<RayHit> first_hit(const Vec3& origin, const Vec3& dir, double tmin = kRayEpsilon,
                                  double tmax = std::numeric_limits<double>::infinity()) const;

 private:
  struct Node {
    Vec3 lo, hi;
    int left = -1, right = -1;  // children, or -1 for a leaf
    int first = 0, count = 0;   // range into order_
  };
  int build(int first, int count, std::vector<Vec3>& centroids);

  std::vector<std::array<Vec3, 3>> tris_;
  std::vector<Node> nodes_;
  std::vector<int> order_;
};

// Moller-Trumbore; returns the distance along dir or nothing.
std::optional<double> intersect_triangle(const Vec3& origin, const Vec3& dir, const Vec3& a, const Vec3& b,
                                         const Vec3& c);

std::optional<RayHit> ray_cast_first_hit(const Bvh& bvh, const Vec3& origin, const Vec3& dir);
// Exhaustive scan over all faces, for checking the BVH.
std::optional<RayHit> ray_cast_brute_force(const TriMesh& mesh, const Vec3& origin, const Vec3& dir);

struct SurfaceSegment {
  int id = 0;
  std::vector<int> faces;
  Vec3 color = Vec3::Constant(0.5);
  std::string material;
};

inline constexpr double kDefaultColorTol = 0.15;
inline constexpr double kDefaultNormalTolDeg = 15.0;

// Face adjacency through shared edges (vertex indices, so weld first).
std::vector<std::vector<int>> face_adjacency(const TriMesh& mesh);

// Region growing. Seeds are taken in face-index order; a neighbour joins when
// its color is within color_tol (Euclidean RGB) of the region's running mean
// color and its normal is within normal_tol degrees of the region's running
// mean normal. Segment ids are 0..n-1 in seed order; material is left empty.
std::vector<SurfaceSegment> segment_mesh(const TriMesh& mesh, double color_tol = kDefaultColorTol,
                                         double normal_tol_deg = kDefaultNormalTolDeg);

// Fibonacci lattice on the unit sphere.
std::vector<Vec3> sphere_directions(std::size_t count);

}  // namespace roomtwin
