#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "roomtwin/scene.hpp"
#include "roomtwin/signals.hpp"

namespace roomtwin {

struct EditOp {
  enum class Kind { set_material, insert_mesh, remove_segment, move_segment };

  Kind kind = Kind::set_material;
  std::vector<int> segments;  // set_material, remove_segment, move_segment
  std::string material;       // set_material target, insert_mesh material
  std::optional<MaterialSpectrum> spectrum;  // set_material: (re)define `material`
  TriMesh mesh;               // insert_mesh
  Vec3 offset = Vec3::Zero();  // move_segment translation

  static EditOp set_material(std::vector<int> segments, std::string material,
                             std::optional<MaterialSpectrum> spectrum = std::nullopt);
  static EditOp insert_mesh(TriMesh mesh, std::string material);
  static EditOp remove_segment(int segment);
  static EditOp move_segment(int segment, const Vec3& offset);
};

// Returns an edited copy. Inserted meshes are segmented on their own and get
// fresh segment ids; existing segments keep theirs. Defining a spectrum under
// a name already bound to a different spectrum is an error. Throws
// InvalidArgument on unknown segments or materials.
Scene apply_edit(const Scene& scene, const EditOp& op);
Scene apply_edits(const Scene& scene, std::span<const EditOp> ops);

// {"ops": [...]} as documented in docs/formats.md; mesh paths resolve
// against the script's directory.
std::vector<EditOp> load_edit_script(const std::filesystem::path& path);

inline constexpr std::size_t kFeatureBins = 64;
inline constexpr double kFeatureSpan = 0.3;
// Levels are floored this far (dB) below the strongest bin, so bins under a
// measurement's noise floor do not dominate distances.
inline constexpr double kFeatureRange = 40.0;

// RMS level (dB) of the RIR in 64 log-spaced bins of absolute time
// (onset + n / fs) over [0, 0.3] s, floored kFeatureRange below the maximum.
// The first bin starts at 0.
std::vector<double> rir_features(const Rir& rir);

struct RirDatabase {
  enum class Source : std::uint8_t { measured = 0, synthesized = 1 };
  struct Entry {
    Vec3 position;
    std::vector<double> features;
    Source source = Source::measured;
  };
  std::vector<Entry> entries;

  void add(const Vec3& position, const Rir& rir, Source source = Source::measured);
  std::size_t size() const { return entries.size(); }

  // Blob: 8-byte magic, u32 version, u64 header length, JSON header
  // (positions, sources, dimension), then float64 features.
  void save(const std::filesystem::path& path) const;
  static RirDatabase load(const std::filesystem::path& path);
};

inline constexpr int kDefaultNeighbors = 5;
inline constexpr double kIdwEpsilon = 1e-6;

// Inverse-distance-weighted mean position of the k nearest entries in
// feature space (weights 1 / (d + 1e-6)). An entry at distance exactly 0
// returns its stored position. Throws InvalidArgument on an empty database.
Vec3 localize(const RirDatabase& db, const Rir& query, int k = kDefaultNeighbors);

using RirRenderer = std::function<Rir(const Vec3& rx_position)>;

// Copy of db with one synthesized entry per grid position appended.
RirDatabase augment_database(const RirDatabase& db, const RirRenderer& render, std::span<const Vec3> grid);

// nx x ny x nz cell-centred points in the box [lo, hi].
std::vector<Vec3> grid_positions(const Vec3& lo, const Vec3& hi, int nx, int ny, int nz);

}  // namespace roomtwin
