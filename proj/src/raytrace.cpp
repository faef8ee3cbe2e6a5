#include "roomtwin/raytrace.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>

#include "roomtwin/fft.hpp"

namespace roomtwin {

using Complex = std::complex<double>;

FrequencyGrid FrequencyGrid::for_length(std::size_t taps, double sample_rate, std::size_t guard) {
  return FrequencyGrid{fft::next_pow2(taps + guard), sample_rate};
}

namespace {

using Polygon = std::vector<Vec3>;

// Sutherland-Hodgman against dist(x) >= 0.
Polygon clip(const Polygon& poly, const std::function<double(const Vec3&)>& dist) {
  Polygon out;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3& a = poly[i];
    const Vec3& b = poly[(i + 1) % n];
    const double da = dist(a), db = dist(b);
    if (da >= 0.0) out.push_back(a);
    if ((da >= 0.0) != (db >= 0.0)) out.push_back(a + (b - a) * (da / (da - db)));
  }
  return out;
}

double polygon_area(const Polygon& poly) {
  Vec3 acc = Vec3::Zero();
  for (std::size_t i = 1; i + 1 < poly.size(); ++i) acc += (poly[i] - poly[0]).cross(poly[i + 1] - poly[0]);
  return 0.5 * acc.norm();
}

Polygon convex_hull_in_plane(const std::vector<Vec3>& points, const Vec3& normal, double offset) {
  Vec3 u = std::abs(normal.x()) < 0.9 ? normal.cross(Vec3::UnitX()) : normal.cross(Vec3::UnitY());
  u.normalize();
  const Vec3 v = normal.cross(u);
  std::vector<std::pair<double, double>> pts;
  for (const auto& p : points) pts.emplace_back(u.dot(p), v.dot(p));
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return {};
  auto cross = [](const auto& o, const auto& a, const auto& b) {
    return (a.first - o.first) * (b.second - o.second) - (a.second - o.second) * (b.first - o.first);
  };
  std::vector<std::pair<double, double>> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  const Vec3 origin = offset * normal;
  Polygon out;
  for (const auto& [a, b] : hull) out.push_back(origin + a * u + b * v);
  return out;
}

double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  // Closest point on triangle, region tests after Ericson.
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return ap.norm();
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return bp.norm();
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return (p - (a + ab * (d1 / (d1 - d3)))).norm();
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return cp.norm();
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return (p - (a + ac * (d2 / (d2 - d6)))).norm();
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
    return (p - (b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6))))).norm();
  }
  const double denom = 1.0 / (va + vb + vc);
  return (p - (a + ab * (vb * denom) + ac * (vc * denom))).norm();
}

}  // namespace

std::vector<Reflector> build_reflectors(const Scene& scene) {
  const TriMesh& mesh = scene.mesh;
  std::vector<Reflector> out;
  if (mesh.empty()) return out;
  const auto adj = face_adjacency(mesh);
  std::vector<char> used(mesh.size(), 0);
  for (const auto& seg : scene.segments) {
    std::vector<char> member(mesh.size(), 0);
    for (int f : seg.faces) member[f] = 1;
    for (int seed : seg.faces) {
      if (used[seed]) continue;
      const Vec3 n0 = mesh.face_normals[seed];
      const double off0 = n0.dot(mesh.corner(seed, 0));
      std::vector<int> patch{seed};
      used[seed] = 1;
      std::deque<int> queue{seed};
      while (!queue.empty()) {
        const int f = queue.front();
        queue.pop_front();
        for (int nb : adj[f]) {
          if (!member[nb] || used[nb]) continue;
          bool planar = mesh.face_normals[nb].dot(n0) > 0.0;
          for (int k = 0; k < 3 && planar; ++k) {
            planar = std::abs(n0.dot(mesh.corner(nb, k)) - off0) <= kPlanarityTol;
          }
          if (!planar) continue;
          used[nb] = 1;
          patch.push_back(nb);
          queue.push_back(nb);
        }
      }
      std::sort(patch.begin(), patch.end());
      Reflector r;
      r.segment = seg.id;
      r.faces = patch;
      Vec3 nsum = Vec3::Zero(), csum = Vec3::Zero();
      double area = 0.0;
      std::vector<Vec3> pts;
      for (int f : patch) {
        const double a = mesh.area(f);
        nsum += a * mesh.face_normals[f];
        csum += a * mesh.centroid(f);
        area += a;
        for (int k = 0; k < 3; ++k) pts.push_back(mesh.corner(f, k));
      }
      r.normal = nsum.norm() > 1e-12 ? Vec3(nsum.normalized()) : n0;
      r.offset = r.normal.dot(csum / area);
      for (const auto& p : pts) r.deviation = std::max(r.deviation, std::abs(r.distance(p)));
      r.hull = convex_hull_in_plane(pts, r.normal, r.offset);
      if (r.hull.size() >= 3) out.push_back(std::move(r));
    }
  }
  return out;
}

struct PathTracer::Node {
  std::vector<int> sequence;  // reflector indices
  std::vector<Vec3> images;   // images[0] = tx
  Polygon aperture;           // empty at the root
};

PathTracer::PathTracer(const Scene& scene) : scene_(&scene), reflectors_(build_reflectors(scene)) {
  face_reflector_.assign(scene.mesh.size(), -1);
  for (std::size_t r = 0; r < reflectors_.size(); ++r) {
    for (int f : reflectors_[r].faces) face_reflector_[f] = static_cast<int>(r);
  }
}

std::vector<SpecularPath> PathTracer::enumerate(const Vec3& tx, const Vec3& rx, int max_bounces) const {
  if (max_bounces < 0) throw InvalidArgument("max_bounces must be non-negative");
  std::vector<SpecularPath> out;
  Node root;
  root.images.push_back(tx);
  expand(root, tx, rx, max_bounces, out);
  return out;
}

void PathTracer::expand(const Node& node, const Vec3& tx, const Vec3& rx, int max_bounces,
                        std::vector<SpecularPath>& out) const {
  constexpr double kSlack = 1e-9;
  const Vec3& apex = node.images.back();

  // Half-spaces bounding the beam, as (normal, point) pairs; x is inside when
  // normal . (x - point) >= -slack.
  std::vector<std::pair<Vec3, Vec3>> bounds;
  if (!node.aperture.empty()) {
    const Reflector& last = reflectors_[node.sequence.back()];
    const double side = last.distance(apex) > 0.0 ? -1.0 : 1.0;
    bounds.emplace_back(side * last.normal, node.aperture.front());
    Vec3 centre = Vec3::Zero();
    for (const auto& a : node.aperture) centre += a;
    centre /= static_cast<double>(node.aperture.size());
    for (std::size_t i = 0; i < node.aperture.size(); ++i) {
      const Vec3& a = node.aperture[i];
      const Vec3& b = node.aperture[(i + 1) % node.aperture.size()];
      Vec3 m = (a - apex).cross(b - apex);
      const double len = m.norm();
      if (len < 1e-15) continue;
      m /= len;
      if (m.dot(centre - apex) < 0.0) m = -m;
      bounds.emplace_back(m, apex);
    }
  }
  auto inside = [&](const Vec3& x) {
    for (const auto& [n, p] : bounds) {
      if (n.dot(x - p) < -kSlack) return false;
    }
    return true;
  };

  if (inside(rx)) {
    if (auto path = validate(tx, rx, node.sequence, node.images)) out.push_back(std::move(*path));
  }
  if (static_cast<int>(node.sequence.size()) >= max_bounces) return;

  for (std::size_t r = 0; r < reflectors_.size(); ++r) {
    if (!node.sequence.empty() && node.sequence.back() == static_cast<int>(r)) continue;
    const Reflector& refl = reflectors_[r];
    if (std::abs(refl.distance(apex)) < kSlack) continue;
    Polygon poly = refl.hull;
    for (const auto& [n, p] : bounds) {
      const Vec3 nn = n, pp = p;
      poly = clip(poly, [&](const Vec3& x) { return nn.dot(x - pp) + kSlack; });
      if (poly.size() < 3) break;
    }
    if (poly.size() < 3 || polygon_area(poly) < 1e-12) continue;
    Node child;
    child.sequence = node.sequence;
    child.sequence.push_back(static_cast<int>(r));
    child.images = node.images;
    child.images.push_back(refl.mirror(apex));
    child.aperture = std::move(poly);
    expand(child, tx, rx, max_bounces, out);
  }
}

std::optional<SpecularPath> PathTracer::validate(const Vec3& tx, const Vec3& rx, const std::vector<int>& sequence,
                                                 const std::vector<Vec3>& images) const {
  const std::size_t k = sequence.size();
  std::vector<Vec3> points(k + 2);
  points.front() = tx;
  points.back() = rx;
  Vec3 target = rx;
  for (std::size_t j = k; j >= 1; --j) {
    const Reflector& r = reflectors_[sequence[j - 1]];
    const Vec3& image = images[j];
    const Vec3 d = target - image;
    const double denom = r.normal.dot(d);
    if (std::abs(denom) < 1e-15) return std::nullopt;
    const double t = (r.offset - r.normal.dot(image)) / denom;
    if (!(t > 1e-12 && t < 1.0 - 1e-12)) return std::nullopt;
    points[j] = image + t * d;
    target = points[j];
  }

  const Bvh* bvh = scene_->bvh.get();
  double length = 0.0;
  for (std::size_t i = 0; i + 1 < points.size(); ++i) {
    const Vec3 leg = points[i + 1] - points[i];
    const double len = leg.norm();
    if (len < 1e-12) return std::nullopt;
    const Vec3 dir = leg / len;
    length += len;
    if (!bvh) continue;
    if (i + 1 < points.size() - 1) {
      const Reflector& r = reflectors_[sequence[i]];
      const double tol = r.deviation + 1e-6;
      const auto hit = bvh->first_hit(points[i], dir, kRayEpsilon, len + tol + kRayEpsilon);
      if (!hit || std::abs(hit->distance - len) > tol) return std::nullopt;
      if (face_reflector_[hit->face] != sequence[i]) return std::nullopt;
    } else if (len > 2.0 * kRayEpsilon) {
      if (bvh->first_hit(points[i], dir, kRayEpsilon, len - kRayEpsilon)) return std::nullopt;
    }
  }

  SpecularPath path;
  path.points = std::move(points);
  for (int r : sequence) path.segments.push_back(reflectors_[r].segment);
  path.length = length;
  path.departure = (path.points[1] - path.points[0]).normalized();
  path.arrival = (path.points[k + 1] - path.points[k]).normalized();
  return path;
}

std::vector<SpecularPath> enumerate_paths(const Scene& scene, const Vec3& p_tx, const Vec3& p_rx, int max_bounces) {
  if (!scene.contains(p_tx) || !scene.contains(p_rx)) {
    throw InvalidArgument("enumerate_paths: device position outside the scene");
  }
  if ((p_tx - p_rx).norm() < 1e-9) throw InvalidArgument("enumerate_paths: Tx and Rx coincide");
  for (std::size_t f = 0; f < scene.mesh.size(); ++f) {
    const Vec3 &a = scene.mesh.corner(f, 0), &b = scene.mesh.corner(f, 1), &c = scene.mesh.corner(f, 2);
    if (point_triangle_distance(p_tx, a, b, c) <= kRayEpsilon ||
        point_triangle_distance(p_rx, a, b, c) <= kRayEpsilon) {
      throw InvalidArgument("enumerate_paths: device position lies on a surface");
    }
  }
  return PathTracer(scene).enumerate(p_tx, p_rx, max_bounces);
}

AcousticParams AcousticParams::from_scene(const Scene& scene) {
  AcousticParams p;
  p.materials = scene.segment_materials();
  return p;
}

std::vector<std::vector<double>> material_curves(const std::vector<MaterialSpectrum>& materials,
                                                 const FrequencyGrid& grid) {
  std::vector<std::vector<double>> curves(materials.size(), std::vector<double>(grid.bins()));
  for (std::size_t k = 0; k < grid.bins(); ++k) {
    const BandWeights w = band_weights(grid.freq(k));
    for (std::size_t s = 0; s < materials.size(); ++s) {
      curves[s][k] = w.w_lo * materials[s].R[w.lo] + w.w_hi * materials[s].R[w.hi];
    }
  }
  return curves;
}

std::pair<double, double> path_gains(const SpecularPath& path, const AcousticParams& params, const Pose& tx,
                                     const Pose& rx) {
  return {params.tx.eval(tx.to_local(path.departure)), params.rx.eval(rx.to_local(-path.arrival))};
}

namespace {

// Adds amp * curve(k) * exp(-i 2 pi k delay / N) into spec over all bins;
// curve may be empty (flat 1).
void accumulate_path(std::vector<Complex>& spec, double amp, double delay_samples, std::size_t n,
                     const std::vector<double>* curve) {
  const double step = -2.0 * kPi * delay_samples / static_cast<double>(n);
  const Complex rot = std::polar(1.0, step);
  Complex z{1.0, 0.0};
  for (std::size_t k = 0; k < spec.size(); ++k) {
    if ((k & 1023) == 0) z = std::polar(1.0, step * static_cast<double>(k));
    const double a = curve ? amp * (*curve)[k] : amp;
    spec[k] += a * z;
    z *= rot;
  }
}

std::vector<double> path_product(const SpecularPath& path, const Scene& scene,
                                 const std::vector<std::vector<double>>& curves, std::size_t bins) {
  std::vector<double> prod(bins, 1.0);
  for (int seg : path.segments) {
    const auto& c = curves.at(scene.segment_index(seg));
    for (std::size_t k = 0; k < bins; ++k) prod[k] *= c[k];
  }
  return prod;
}

}  // namespace

std::vector<Complex> path_transfer(const SpecularPath& path, const Scene& scene, const AcousticParams& params,
                                   const Pose& tx, const Pose& rx, const FrequencyGrid& grid, double origin) {
  if (!(path.length > 0.0)) throw InvalidArgument("path_transfer: zero-length path (coincident devices)");
  if (params.materials.size() != scene.segments.size()) {
    throw InvalidArgument("path_transfer: material count differs from segment count");
  }
  const auto curves = material_curves(params.materials, grid);
  const auto prod = path_product(path, scene, curves, grid.bins());
  const auto [gt, gr] = path_gains(path, params, tx, rx);
  std::vector<Complex> spec(grid.bins(), Complex{});
  const double delay = (path.length / scene.speed_of_sound - origin) * grid.sample_rate;
  accumulate_path(spec, gt * gr / path.length, delay, grid.fft_size, &prod);
  return spec;
}

Rir render_paths(std::span<const SpecularPath> paths, const Scene& scene, const AcousticParams& params,
                 const Pose& tx, const Pose& rx, const RenderOptions& options) {
  if (params.materials.size() != scene.segments.size()) {
    throw InvalidArgument("render: material count differs from segment count");
  }
  const double fs = kSampleRate;
  const std::size_t taps = samples_for(options.length, fs);
  if (taps == 0) throw InvalidArgument("render: RIR length must be positive");
  const FrequencyGrid grid = FrequencyGrid::for_length(taps, fs, options.guard);

  double origin = 0.0;
  if (options.origin) {
    origin = *options.origin;
  } else if (!paths.empty()) {
    origin = std::numeric_limits<double>::infinity();
    for (const auto& p : paths) origin = std::min(origin, p.length / scene.speed_of_sound);
  }

  const auto curves = material_curves(params.materials, grid);
  std::vector<Complex> spec(grid.bins(), Complex{});
  std::vector<double> prod(grid.bins());
  const double max_delay = static_cast<double>(grid.fft_size) - 0.5 * static_cast<double>(options.guard);
  for (const auto& path : paths) {
    if (!(path.length > 0.0)) throw InvalidArgument("render: zero-length path (coincident devices)");
    const double delay = (path.length / scene.speed_of_sound - origin) * fs;
    if (delay >= max_delay || delay < -0.5 * static_cast<double>(options.guard)) continue;
    const auto [gt, gr] = path_gains(path, params, tx, rx);
    const double amp = gt * gr / path.length;
    if (path.segments.empty()) {
      accumulate_path(spec, amp, delay, grid.fft_size, nullptr);
      continue;
    }
    std::fill(prod.begin(), prod.end(), 1.0);
    for (int seg : path.segments) {
      const auto& c = curves[scene.segment_index(seg)];
      for (std::size_t k = 0; k < prod.size(); ++k) prod[k] *= c[k];
    }
    accumulate_path(spec, amp, delay, grid.fft_size, &prod);
  }
  auto time = fft::irfft(spec, grid.fft_size);
  Rir rir;
  rir.sample_rate = fs;
  rir.onset = origin;
  rir.taps.assign(time.begin(), time.begin() + static_cast<std::ptrdiff_t>(taps));
  return rir;
}

Rir render_rir(const Scene& scene, const Pose& tx, const Pose& rx, const AcousticParams& params,
               const RenderOptions& options) {
  tx.validate();
  rx.validate();
  const auto paths = enumerate_paths(scene, tx.position, rx.position, options.max_bounces);
  return render_paths(paths, scene, params, tx, rx, options);
}

}  // namespace roomtwin
