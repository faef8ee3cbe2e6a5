#pragma once

#include <complex>
#include <optional>
#include <span>
#include <vector>

#include "roomtwin/geometry.hpp"
#include "roomtwin/scene.hpp"
#include "roomtwin/sh.hpp"
#include "roomtwin/signals.hpp"

namespace roomtwin {

struct SpecularPath {
  std::vector<Vec3> points;  // Tx, reflection points, Rx
  std::vector<int> segments;  // segment id per bounce
  double length = 0.0;
  Vec3 departure = Vec3::UnitX();  // leaving Tx
  Vec3 arrival = Vec3::UnitX();    // direction of travel on reaching Rx

  int order() const { return static_cast<int>(segments.size()); }
};

struct FrequencyGrid {
  std::size_t fft_size = 0;
  double sample_rate = kSampleRate;

  std::size_t bins() const { return fft_size / 2 + 1; }
  double freq(std::size_t k) const { return static_cast<double>(k) * sample_rate / static_cast<double>(fft_size); }
  // Smallest power of two holding taps + guard samples.
  static FrequencyGrid for_length(std::size_t taps, double sample_rate = kSampleRate, std::size_t guard = 256);
};

// Planar patch used as an image-source mirror. Segments that are not planar
// within kPlanarityTol are split into several reflectors.
struct Reflector {
  int segment = 0;
  Vec3 normal = Vec3::UnitZ();
  double offset = 0.0;  // plane: normal . x = offset
  double deviation = 0.0;  // max vertex distance from the plane
  std::vector<int> faces;
  std::vector<Vec3> hull;  // convex hull of the patch, in the plane

  double distance(const Vec3& p) const { return normal.dot(p) - offset; }
  Vec3 mirror(const Vec3& p) const { return p - 2.0 * distance(p) * normal; }
};

inline constexpr double kPlanarityTol = 0.02;

std::vector<Reflector> build_reflectors(const Scene& scene);

// Image-source enumeration with beam pruning and per-leg ray-cast
// validation. Holds a reference to the scene.
class PathTracer {
 public:
  explicit PathTracer(const Scene& scene);

  std::vector<SpecularPath> enumerate(const Vec3& tx, const Vec3& rx, int max_bounces) const;
  const std::vector<Reflector>& reflectors() const { return reflectors_; }

 private:
  struct Node;
  void expand(const Node& node, const Vec3& tx, const Vec3& rx, int max_bounces,
              std::vector<SpecularPath>& out) const;
  std::optional<SpecularPath> validate(const Vec3& tx, const Vec3& rx, const std::vector<int>& sequence,
                                       const std::vector<Vec3>& images) const;

  const Scene* scene_;
  std::vector<Reflector> reflectors_;
  std::vector<int> face_reflector_;
};

// Throws InvalidArgument when either point lies outside the scene or within
// kRayEpsilon of a surface, or when the points coincide.
std::vector<SpecularPath> enumerate_paths(const Scene& scene, const Vec3& p_tx, const Vec3& p_rx,
                                          int max_bounces);

// Physical quantities consumed by the renderer: one spectrum per scene
// segment (scene order) plus device gain patterns.
struct AcousticParams {
  std::vector<MaterialSpectrum> materials;
  GainPattern tx = GainPattern::isotropic();
  GainPattern rx = GainPattern::isotropic();

  static AcousticParams from_scene(const Scene& scene);
};

// Per-segment reflection curve sampled on the grid, indexed by segment order.
std::vector<std::vector<double>> material_curves(const std::vector<MaterialSpectrum>& materials,
                                                 const FrequencyGrid& grid);

// Device gains of a path: (G_tx(departure), G_rx(-arrival)) in local frames.
std::pair<double, double> path_gains(const SpecularPath& path, const AcousticParams& params, const Pose& tx,
                                     const Pose& rx);

// G_tx G_rx (1/d) exp(-i 2 pi f (d/c - origin)) prod R_s(f) on bins 0..N/2.
std::vector<std::complex<double>> path_transfer(const SpecularPath& path, const Scene& scene,
                                                const AcousticParams& params, const Pose& tx, const Pose& rx,
                                                const FrequencyGrid& grid, double origin = 0.0);

struct RenderOptions {
  double length = kDefaultRirLength;
  int max_bounces = 8;
  // Absolute delay of tap 0; defaults to the earliest path delay.
  std::optional<double> origin;
  std::size_t guard = 256;
};

Rir render_paths(std::span<const SpecularPath> paths, const Scene& scene, const AcousticParams& params,
                 const Pose& tx, const Pose& rx, const RenderOptions& options = {});

Rir render_rir(const Scene& scene, const Pose& tx, const Pose& rx, const AcousticParams& params,
               const RenderOptions& options = {});

}  // namespace roomtwin
