#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "roomtwin/geometry.hpp"

namespace roomtwin {

inline constexpr std::size_t kNumBands = 7;
inline constexpr std::array<double, kNumBands> kBandCenters{125.0, 250.0, 500.0, 1000.0,
                                                            2000.0, 4000.0, 8000.0};

// Reflection amplitude ratio per octave band.
struct MaterialSpectrum {
  std::array<double, kNumBands> R{};

  static MaterialSpectrum flat(double r);
  void validate() const;
  // Linear in amplitude on a log-frequency axis between band centres, held
  // constant outside them.
  double at(double freq) const;
  bool operator==(const MaterialSpectrum&) const = default;
};

// The two band centres bracketing `freq` and their interpolation weights.
// Below the first or above the last centre a single band carries weight 1.
struct BandWeights {
  int lo = 0, hi = 0;
  double w_lo = 1.0, w_hi = 0.0;
};
BandWeights band_weights(double freq);

struct Scene {
  TriMesh mesh;
  std::vector<SurfaceSegment> segments;
  std::map<std::string, MaterialSpectrum> materials;
  double speed_of_sound = kSpeedOfSound;

  // Derived by finalize().
  std::vector<int> face_segment;  // segment id per face
  std::shared_ptr<const Bvh> bvh;

  // Checks that segments partition the faces and that every segment names a
  // known material, then builds the BVH and lookup tables.
  void finalize();

  std::size_t segment_index(int id) const;  // throws on unknown id
  bool has_segment(int id) const { return index_.count(id) > 0; }
  const MaterialSpectrum& material_of(int segment_id) const;
  // Segment materials in segment order.
  std::vector<MaterialSpectrum> segment_materials() const;
  int next_segment_id() const;

  bool free_field() const { return mesh.empty(); }
  // Axis-aligned bounds test; always true for a free-field scene.
  bool contains(const Vec3& p) const;

 private:
  std::unordered_map<int, std::size_t> index_;
};

struct ShoeboxOptions {
  Vec3 size{4.0, 5.0, 3.0};
  int subdivisions = 1;  // grid cells per wall edge
  std::string material = "default";
  MaterialSpectrum spectrum = MaterialSpectrum::flat(0.7);
};

// Closed box [0, size] with inward-facing normals and a distinct color per
// wall. Segments 0..5 are the walls x=0, x=max, y=0, y=max, floor, ceiling.
Scene make_shoebox(const ShoeboxOptions& options = {});

// Axis-aligned closed box mesh with outward normals, one color.
TriMesh make_box(const Vec3& lo, const Vec3& hi, const Vec3& color);

Scene make_free_field(double speed_of_sound = kSpeedOfSound);

// JSON scene description; relative mesh paths resolve against the file's
// directory. See docs/formats.md.
Scene load_scene(const std::filesystem::path& path);

}  // namespace roomtwin
