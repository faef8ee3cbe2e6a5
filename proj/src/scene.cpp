#include "roomtwin/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "roomtwin/ply.hpp"

namespace roomtwin {

using nlohmann::json;

MaterialSpectrum MaterialSpectrum::flat(double r) {
  MaterialSpectrum m;
  m.R.fill(r);
  return m;
}

void MaterialSpectrum::validate() const {
  for (double r : R) {
    if (!(r >= 0.0 && r <= 1.0)) throw InvalidArgument("material reflection ratio outside [0, 1]");
  }
}

BandWeights band_weights(double freq) {
  BandWeights w;
  if (freq <= kBandCenters.front()) return w;
  if (freq >= kBandCenters.back()) {
    w.lo = w.hi = static_cast<int>(kNumBands) - 1;
    return w;
  }
  int b = 0;
  while (freq >= kBandCenters[b + 1]) ++b;
  const double u = std::log(freq / kBandCenters[b]) / std::log(kBandCenters[b + 1] / kBandCenters[b]);
  w.lo = b;
  w.hi = b + 1;
  w.w_lo = 1.0 - u;
  w.w_hi = u;
  return w;
}

double MaterialSpectrum::at(double freq) const {
  const BandWeights w = band_weights(freq);
  return w.w_lo * R[w.lo] + w.w_hi * R[w.hi];
}

void Scene::finalize() {
  if (!(speed_of_sound > 0.0)) throw InvalidArgument("scene speed of sound must be positive");
  index_.clear();
  face_segment.assign(mesh.size(), -1);
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const auto& seg = segments[i];
    if (!index_.emplace(seg.id, i).second) {
      throw InvalidArgument("duplicate segment id " + std::to_string(seg.id));
    }
    if (!materials.count(seg.material)) {
      throw InvalidArgument("segment " + std::to_string(seg.id) + " has unknown material '" + seg.material + "'");
    }
    for (int f : seg.faces) {
      if (f < 0 || static_cast<std::size_t>(f) >= mesh.size()) {
        throw InvalidArgument("segment " + std::to_string(seg.id) + " references a missing face");
      }
      if (face_segment[f] >= 0) throw InvalidArgument("face " + std::to_string(f) + " is in two segments");
      face_segment[f] = seg.id;
    }
  }
  for (std::size_t f = 0; f < mesh.size(); ++f) {
    if (face_segment[f] < 0) throw InvalidArgument("face " + std::to_string(f) + " belongs to no segment");
  }
  for (const auto& [name, m] : materials) m.validate();
  bvh = std::make_shared<const Bvh>(mesh);
}

std::size_t Scene::segment_index(int id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) throw InvalidArgument("unknown segment id " + std::to_string(id));
  return it->second;
}

const MaterialSpectrum& Scene::material_of(int segment_id) const {
  return materials.at(segments[segment_index(segment_id)].material);
}

std::vector<MaterialSpectrum> Scene::segment_materials() const {
  std::vector<MaterialSpectrum> out;
  out.reserve(segments.size());
  for (const auto& s : segments) out.push_back(materials.at(s.material));
  return out;
}

int Scene::next_segment_id() const {
  int next = 0;
  for (const auto& s : segments) next = std::max(next, s.id + 1);
  return next;
}

bool Scene::contains(const Vec3& p) const {
  if (free_field()) return true;
  const auto [lo, hi] = mesh.bounds();
  return (p.array() > lo.array()).all() && (p.array() < hi.array()).all();
}

namespace {

void add_quad_grid(const Vec3& origin, const Vec3& u, const Vec3& v, int n, const Vec3& color,
                   std::vector<Vec3>& verts, std::vector<Face>& faces, std::vector<Vec3>& colors) {
  const int base = static_cast<int>(verts.size());
  for (int i = 0; i <= n; ++i) {
    for (int j = 0; j <= n; ++j) {
      verts.push_back(origin + u * (static_cast<double>(i) / n) + v * (static_cast<double>(j) / n));
    }
  }
  auto at = [&](int i, int j) { return base + i * (n + 1) + j; };
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      faces.push_back({at(i, j), at(i + 1, j), at(i + 1, j + 1)});
      faces.push_back({at(i, j), at(i + 1, j + 1), at(i, j + 1)});
      colors.push_back(color);
      colors.push_back(color);
    }
  }
}

const std::array<Vec3, 6> kWallColors{Vec3(0.80, 0.80, 0.74), Vec3(0.74, 0.80, 0.80), Vec3(0.80, 0.74, 0.80),
                                      Vec3(0.70, 0.70, 0.70), Vec3(0.45, 0.32, 0.20), Vec3(0.95, 0.95, 0.95)};

}  // namespace

Scene make_shoebox(const ShoeboxOptions& options) {
  const Vec3& s = options.size;
  if (!(s.array() > 0.0).all()) throw InvalidArgument("shoebox dimensions must be positive");
  if (options.subdivisions < 1) throw InvalidArgument("shoebox subdivisions must be >= 1");
  const Vec3 X(s.x(), 0, 0), Y(0, s.y(), 0), Z(0, 0, s.z());
  const int n = options.subdivisions;
  std::vector<Vec3> verts;
  std::vector<Face> faces;
  std::vector<Vec3> colors;
  add_quad_grid(Vec3::Zero(), Y, Z, n, kWallColors[0], verts, faces, colors);
  add_quad_grid(X, Z, Y, n, kWallColors[1], verts, faces, colors);
  add_quad_grid(Vec3::Zero(), Z, X, n, kWallColors[2], verts, faces, colors);
  add_quad_grid(Y, X, Z, n, kWallColors[3], verts, faces, colors);
  add_quad_grid(Vec3::Zero(), X, Y, n, kWallColors[4], verts, faces, colors);
  add_quad_grid(Z, Y, X, n, kWallColors[5], verts, faces, colors);

  Scene scene;
  scene.mesh = TriMesh::build(std::move(verts), std::move(faces), std::move(colors));
  scene.mesh.weld(1e-9);
  const int per_wall = 2 * n * n;
  for (int w = 0; w < 6; ++w) {
    SurfaceSegment seg;
    seg.id = w;
    seg.color = kWallColors[w];
    seg.material = options.material;
    for (int f = 0; f < per_wall; ++f) seg.faces.push_back(w * per_wall + f);
    scene.segments.push_back(std::move(seg));
  }
  scene.materials[options.material] = options.spectrum;
  scene.finalize();
  return scene;
}

TriMesh make_box(const Vec3& lo, const Vec3& hi, const Vec3& color) {
  const Vec3 d = hi - lo;
  const Vec3 X(d.x(), 0, 0), Y(0, d.y(), 0), Z(0, 0, d.z());
  std::vector<Vec3> verts;
  std::vector<Face> faces;
  std::vector<Vec3> colors;
  add_quad_grid(lo, Z, Y, 1, color, verts, faces, colors);
  add_quad_grid(lo + X, Y, Z, 1, color, verts, faces, colors);
  add_quad_grid(lo, X, Z, 1, color, verts, faces, colors);
  add_quad_grid(lo + Y, Z, X, 1, color, verts, faces, colors);
  add_quad_grid(lo, Y, X, 1, color, verts, faces, colors);
  add_quad_grid(lo + Z, X, Y, 1, color, verts, faces, colors);
  auto mesh = TriMesh::build(std::move(verts), std::move(faces), std::move(colors));
  mesh.weld(1e-9);
  return mesh;
}

Scene make_free_field(double speed_of_sound) {
  Scene scene;
  scene.speed_of_sound = speed_of_sound;
  scene.finalize();
  return scene;
}

namespace {

MaterialSpectrum parse_spectrum(const json& j, const std::string& name) {
  MaterialSpectrum m;
  if (j.is_number()) {
    m = MaterialSpectrum::flat(j.get<double>());
  } else if (j.is_array() && j.size() == kNumBands) {
    for (std::size_t b = 0; b < kNumBands; ++b) m.R[b] = j[b].get<double>();
  } else {
    throw FormatError("material '" + name + "' must be a number or a 7-element array");
  }
  try {
    m.validate();
  } catch (const InvalidArgument&) {
    throw FormatError("material '" + name + "' has values outside [0, 1]");
  }
  return m;
}

void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }) == allowed.end()) {
      throw FormatError("unknown key '" + key + "' in " + where);
    }
  }
}

Vec3 parse_vec3(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw FormatError(what + " must be a 3-element array");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

}  // namespace

Scene load_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open scene file: " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("malformed scene JSON " + path.string() + ": " + e.what());
  }
  try {
    reject_unknown(j, {"speed_of_sound", "materials", "geometry", "segmentation", "default_material",
                       "segment_materials"},
                   "scene");
    Scene scene;
    scene.speed_of_sound = j.value("speed_of_sound", kSpeedOfSound);
    if (!j.contains("materials") || !j["materials"].is_object() || j["materials"].empty()) {
      throw FormatError("scene needs a non-empty 'materials' object");
    }
    for (const auto& [name, value] : j["materials"].items()) {
      scene.materials[name] = parse_spectrum(value, name);
    }
    const std::string default_material = j.value("default_material", scene.materials.begin()->first);
    if (!scene.materials.count(default_material)) {
      throw FormatError("default_material '" + default_material + "' is not defined");
    }

    const json geometry = j.value("geometry", json::object());
    reject_unknown(geometry, {"shoebox", "mesh"}, "geometry");
    if (geometry.contains("shoebox") && geometry.contains("mesh")) {
      throw FormatError("geometry takes either 'shoebox' or 'mesh', not both");
    }
    if (geometry.contains("shoebox")) {
      const json& box = geometry["shoebox"];
      reject_unknown(box, {"size", "subdivisions"}, "geometry.shoebox");
      ShoeboxOptions opt;
      if (box.contains("size")) opt.size = parse_vec3(box["size"], "shoebox size");
      opt.subdivisions = box.value("subdivisions", 1);
      opt.material = default_material;
      opt.spectrum = scene.materials[default_material];
      const Scene box_scene = make_shoebox(opt);
      scene.mesh = box_scene.mesh;
      scene.segments = box_scene.segments;
    } else if (geometry.contains("mesh")) {
      std::filesystem::path mesh_path = geometry["mesh"].get<std::string>();
      if (mesh_path.is_relative()) mesh_path = path.parent_path() / mesh_path;
      scene.mesh = ply::read(mesh_path);
      scene.mesh.weld(1e-9);
      const json seg = j.value("segmentation", json::object());
      reject_unknown(seg, {"color_tol", "normal_tol_deg"}, "segmentation");
      scene.segments = segment_mesh(scene.mesh, seg.value("color_tol", kDefaultColorTol),
                                    seg.value("normal_tol_deg", kDefaultNormalTolDeg));
      for (auto& s : scene.segments) s.material = default_material;
    }

    if (j.contains("segment_materials")) {
      for (const auto& [key, value] : j["segment_materials"].items()) {
        int id = 0;
        try {
          id = std::stoi(key);
        } catch (const std::exception&) {
          throw FormatError("segment_materials key '" + key + "' is not a segment id");
        }
        const std::string name = value.get<std::string>();
        if (!scene.materials.count(name)) throw FormatError("unknown material '" + name + "'");
        auto it = std::find_if(scene.segments.begin(), scene.segments.end(),
                               [&](const SurfaceSegment& s) { return s.id == id; });
        if (it == scene.segments.end()) throw FormatError("segment_materials names missing segment " + key);
        it->material = name;
      }
    }
    scene.finalize();
    return scene;
  } catch (const json::exception& e) {
    throw FormatError("invalid scene " + path.string() + ": " + e.what());
  }
}

}  // namespace roomtwin
