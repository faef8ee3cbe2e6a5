#include "roomtwin/twin.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "roomtwin/parallel.hpp"
#include "roomtwin/ply.hpp"
#include "roomtwin/serialize.hpp"

namespace roomtwin {

EditOp EditOp::set_material(std::vector<int> segments, std::string material,
                            std::optional<MaterialSpectrum> spectrum) {
  EditOp op;
  op.kind = Kind::set_material;
  op.segments = std::move(segments);
  op.material = std::move(material);
  op.spectrum = spectrum;
  return op;
}

EditOp EditOp::insert_mesh(TriMesh mesh, std::string material) {
  EditOp op;
  op.kind = Kind::insert_mesh;
  op.mesh = std::move(mesh);
  op.material = std::move(material);
  return op;
}

EditOp EditOp::remove_segment(int segment) {
  EditOp op;
  op.kind = Kind::remove_segment;
  op.segments = {segment};
  return op;
}

EditOp EditOp::move_segment(int segment, const Vec3& offset) {
  EditOp op;
  op.kind = Kind::move_segment;
  op.segments = {segment};
  op.offset = offset;
  return op;
}

namespace {

void require_segments(const Scene& scene, const EditOp& op) {
  if (op.segments.empty()) throw InvalidArgument("edit: no segment given");
  for (int id : op.segments) {
    if (!scene.has_segment(id)) throw InvalidArgument("edit: unknown segment id " + std::to_string(id));
  }
}

// Rebuilds the mesh keeping faces where keep[f]; returns old -> new face ids
// (-1 for dropped faces).
std::vector<int> filter_faces(TriMesh& mesh, const std::vector<bool>& keep) {
  std::vector<int> remap(mesh.size(), -1);
  TriMesh out;
  out.vertices = mesh.vertices;
  for (std::size_t f = 0; f < mesh.size(); ++f) {
    if (!keep[f]) continue;
    remap[f] = static_cast<int>(out.faces.size());
    out.faces.push_back(mesh.faces[f]);
    out.face_colors.push_back(mesh.face_colors[f]);
    out.face_normals.push_back(mesh.face_normals[f]);
  }
  mesh = std::move(out);
  return remap;
}

}  // namespace

Scene apply_edit(const Scene& scene, const EditOp& op) {
  Scene out = scene;
  switch (op.kind) {
    case EditOp::Kind::set_material: {
      require_segments(scene, op);
      if (op.spectrum) {
        op.spectrum->validate();
        const auto it = out.materials.find(op.material);
        if (it != out.materials.end() && !(it->second == *op.spectrum)) {
          throw InvalidArgument("edit: material '" + op.material + "' is already defined differently");
        }
        out.materials[op.material] = *op.spectrum;
      } else if (!out.materials.count(op.material)) {
        throw InvalidArgument("edit: unknown material '" + op.material + "'");
      }
      for (int id : op.segments) out.segments[out.segment_index(id)].material = op.material;
      break;
    }
    case EditOp::Kind::remove_segment: {
      require_segments(scene, op);
      std::vector<bool> keep(out.mesh.size(), true);
      for (int id : op.segments) {
        for (int f : out.segments[out.segment_index(id)].faces) keep[f] = false;
      }
      const auto remap = filter_faces(out.mesh, keep);
      std::vector<SurfaceSegment> kept;
      for (auto seg : out.segments) {
        if (std::find(op.segments.begin(), op.segments.end(), seg.id) != op.segments.end()) continue;
        for (int& f : seg.faces) f = remap[f];
        kept.push_back(std::move(seg));
      }
      out.segments = std::move(kept);
      break;
    }
    case EditOp::Kind::move_segment: {
      require_segments(scene, op);
      if (!op.offset.allFinite()) throw InvalidArgument("edit: non-finite offset");
      // Moved faces get private vertex copies so neighbours stay in place.
      for (int id : op.segments) {
        for (int f : out.segments[out.segment_index(id)].faces) {
          for (int c = 0; c < 3; ++c) {
            out.mesh.vertices.push_back(out.mesh.vertices[out.mesh.faces[f][c]] + op.offset);
            out.mesh.faces[f][c] = static_cast<int>(out.mesh.vertices.size() - 1);
          }
        }
      }
      break;
    }
    case EditOp::Kind::insert_mesh: {
      if (op.mesh.empty()) throw InvalidArgument("edit: inserted mesh has no faces");
      if (!out.materials.count(op.material)) {
        throw InvalidArgument("edit: unknown material '" + op.material + "'");
      }
      TriMesh inserted = op.mesh;
      inserted.weld(1e-9);
      auto segs = segment_mesh(inserted);
      const std::size_t base = out.mesh.append(inserted);
      int next = out.next_segment_id();
      for (auto& seg : segs) {
        seg.id = next++;
        seg.material = op.material;
        for (int& f : seg.faces) f += static_cast<int>(base);
        out.segments.push_back(std::move(seg));
      }
      break;
    }
  }
  out.finalize();
  return out;
}

Scene apply_edits(const Scene& scene, std::span<const EditOp> ops) {
  Scene out = scene;
  for (const auto& op : ops) out = apply_edit(out, op);
  return out;
}

namespace {

MaterialSpectrum spectrum_from_json(const io::Json& j, const std::string& where) {
  MaterialSpectrum m;
  if (j.is_number()) {
    m = MaterialSpectrum::flat(j.get<double>());
  } else if (j.is_array() && j.size() == kNumBands) {
    for (std::size_t b = 0; b < kNumBands; ++b) m.R[b] = j[b].get<double>();
  } else {
    throw FormatError(where + ": expected a number or 7 band values");
  }
  try {
    m.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(where + ": " + e.what());
  }
  return m;
}

std::vector<int> segments_from_json(const io::Json& op, const std::string& where) {
  if (!op.contains("segment")) throw FormatError(where + ": missing 'segment'");
  const io::Json& s = op["segment"];
  if (s.is_number_integer()) return {s.get<int>()};
  if (s.is_array()) {
    std::vector<int> ids;
    for (const auto& e : s) {
      if (!e.is_number_integer()) throw FormatError(where + ".segment: expected integers");
      ids.push_back(e.get<int>());
    }
    return ids;
  }
  throw FormatError(where + ".segment: expected an id or a list of ids");
}

}  // namespace

std::vector<EditOp> load_edit_script(const std::filesystem::path& path) {
  const auto script = io::read_json(path);
  io::check_keys(script, {"ops"}, "edit script");
  if (!script.contains("ops") || !script["ops"].is_array()) throw FormatError("edit script: missing 'ops' list");
  std::vector<EditOp> ops;
  for (std::size_t i = 0; i < script["ops"].size(); ++i) {
    const io::Json& j = script["ops"][i];
    const std::string where = "ops[" + std::to_string(i) + "]";
    if (!j.is_object() || !j.contains("op") || !j["op"].is_string()) throw FormatError(where + ": missing 'op'");
    const std::string kind = j["op"].get<std::string>();
    if (kind == "set_material") {
      io::check_keys(j, {"op", "segment", "material", "R"}, where);
      if (!j.contains("material") || !j["material"].is_string()) throw FormatError(where + ": missing 'material'");
      std::optional<MaterialSpectrum> spectrum;
      if (j.contains("R")) spectrum = spectrum_from_json(j["R"], where + ".R");
      ops.push_back(EditOp::set_material(segments_from_json(j, where), j["material"].get<std::string>(), spectrum));
    } else if (kind == "insert_mesh") {
      io::check_keys(j, {"op", "mesh", "box", "material", "color", "offset"}, where);
      if (!j.contains("material") || !j["material"].is_string()) throw FormatError(where + ": missing 'material'");
      TriMesh mesh;
      if (j.contains("mesh") == j.contains("box")) throw FormatError(where + ": give exactly one of 'mesh' or 'box'");
      if (j.contains("mesh")) {
        std::filesystem::path p = j["mesh"].get<std::string>();
        if (p.is_relative()) p = path.parent_path() / p;
        mesh = ply::read(p);
      } else {
        const io::Json& box = j["box"];
        io::check_keys(box, {"lo", "hi"}, where + ".box");
        const Vec3 color = j.contains("color") ? io::vec3_from_json(j["color"], where + ".color") : Vec3(0.6, 0.4, 0.2);
        mesh = make_box(io::vec3_from_json(box.at("lo"), where + ".box.lo"),
                        io::vec3_from_json(box.at("hi"), where + ".box.hi"), color);
      }
      if (j.contains("offset")) {
        Eigen::Isometry3d xf = Eigen::Isometry3d::Identity();
        xf.translate(io::vec3_from_json(j["offset"], where + ".offset"));
        mesh.transform(xf);
      }
      ops.push_back(EditOp::insert_mesh(std::move(mesh), j["material"].get<std::string>()));
    } else if (kind == "remove_segment") {
      io::check_keys(j, {"op", "segment"}, where);
      EditOp op;
      op.kind = EditOp::Kind::remove_segment;
      op.segments = segments_from_json(j, where);
      ops.push_back(std::move(op));
    } else if (kind == "move_segment") {
      io::check_keys(j, {"op", "segment", "offset"}, where);
      if (!j.contains("offset")) throw FormatError(where + ": missing 'offset'");
      EditOp op;
      op.kind = EditOp::Kind::move_segment;
      op.segments = segments_from_json(j, where);
      op.offset = io::vec3_from_json(j["offset"], where + ".offset");
      ops.push_back(std::move(op));
    } else {
      throw FormatError(where + ": unknown op '" + kind + "'");
    }
  }
  return ops;
}

std::vector<double> rir_features(const Rir& rir) {
  if (!(rir.sample_rate > 0.0)) throw InvalidArgument("features: sample rate must be positive");
  constexpr double t_first = 1e-3;
  std::vector<double> edges(kFeatureBins + 1, 0.0);
  for (std::size_t i = 1; i <= kFeatureBins; ++i) {
    const double frac = static_cast<double>(i - 1) / static_cast<double>(kFeatureBins - 1);
    edges[i] = t_first * std::pow(kFeatureSpan / t_first, frac);
  }
  const double fs = rir.sample_rate;
  const long taps = static_cast<long>(rir.taps.size());
  std::vector<double> out(kFeatureBins);
  for (std::size_t b = 0; b < kFeatureBins; ++b) {
    const long n0 = static_cast<long>(std::ceil((edges[b] - rir.onset) * fs));
    const long n1 = static_cast<long>(std::ceil((edges[b + 1] - rir.onset) * fs));
    double acc = 0.0;
    for (long n = std::max(0L, n0); n < std::min(taps, n1); ++n) acc += rir.taps[n] * rir.taps[n];
    const double width = std::max(1.0, (edges[b + 1] - edges[b]) * fs);
    out[b] = 10.0 * std::log10(acc / width + 1e-14);
  }
  const double floor = *std::max_element(out.begin(), out.end()) - kFeatureRange;
  for (double& v : out) v = std::max(v, floor);
  return out;
}

void RirDatabase::add(const Vec3& position, const Rir& rir, Source source) {
  entries.push_back({position, rir_features(rir), source});
}

namespace {
constexpr char kDbMagic[8] = {'R', 'T', 'R', 'I', 'R', 'D', 'B', '\0'};
constexpr std::uint32_t kDbVersion = 1;
}  // namespace

void RirDatabase::save(const std::filesystem::path& path) const {
  io::Json positions = io::Json::array();
  io::Json sources = io::Json::array();
  for (const auto& e : entries) {
    if (e.features.size() != kFeatureBins) throw InvalidArgument("database: non-uniform feature dimension");
    positions.push_back(io::to_json(e.position));
    sources.push_back(e.source == Source::measured ? "measured" : "synthesized");
  }
  const io::Json header = {{"version", kDbVersion},
                           {"dimension", kFeatureBins},
                           {"count", entries.size()},
                           {"positions", positions},
                           {"sources", sources}};
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  static_assert(std::endian::native == std::endian::little, "database blobs are written little-endian");
  auto put = [&](const void* p, std::size_t n) { out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); };
  const std::uint64_t len = text.size();
  put(kDbMagic, sizeof(kDbMagic));
  put(&kDbVersion, sizeof(kDbVersion));
  put(&len, sizeof(len));
  put(text.data(), text.size());
  for (const auto& e : entries) put(e.features.data(), e.features.size() * sizeof(double));
  if (!out) throw Error("failed writing " + path.string());
}

RirDatabase RirDatabase::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  auto get = [&](void* p, std::size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in) throw FormatError(path.string() + ": truncated database");
  };
  char magic[8];
  get(magic, sizeof(magic));
  if (std::memcmp(magic, kDbMagic, sizeof(kDbMagic)) != 0) throw FormatError(path.string() + ": not a database");
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  get(&version, sizeof(version));
  if (version != kDbVersion) throw FormatError(path.string() + ": unsupported database version");
  get(&len, sizeof(len));
  if (len > (1u << 30)) throw FormatError(path.string() + ": header too large");
  std::string text(len, '\0');
  get(text.data(), len);
  RirDatabase db;
  try {
    const auto h = io::Json::parse(text);
    if (h.at("dimension").get<std::size_t>() != kFeatureBins) throw FormatError("unexpected feature dimension");
    const auto& positions = h.at("positions");
    const auto& sources = h.at("sources");
    const std::size_t count = h.at("count").get<std::size_t>();
    if (positions.size() != count || sources.size() != count) throw FormatError("entry count mismatch");
    for (std::size_t i = 0; i < count; ++i) {
      Entry e;
      e.position = io::vec3_from_json(positions[i], "database.positions");
      const auto s = sources[i].get<std::string>();
      if (s != "measured" && s != "synthesized") throw FormatError("unknown source '" + s + "'");
      e.source = s == "measured" ? Source::measured : Source::synthesized;
      db.entries.push_back(std::move(e));
    }
  } catch (const io::Json::exception& e) {
    throw FormatError(path.string() + ": bad header: " + e.what());
  }
  for (auto& e : db.entries) {
    e.features.resize(kFeatureBins);
    get(e.features.data(), kFeatureBins * sizeof(double));
  }
  return db;
}

Vec3 localize(const RirDatabase& db, const Rir& query, int k) {
  if (db.entries.empty()) throw InvalidArgument("localize: empty database");
  if (k < 1) throw InvalidArgument("localize: k must be at least 1");
  const auto q = rir_features(query);
  std::vector<std::pair<double, std::size_t>> dist;
  dist.reserve(db.size());
  for (std::size_t i = 0; i < db.size(); ++i) {
    const auto& f = db.entries[i].features;
    if (f.size() != q.size()) throw InvalidArgument("localize: feature dimension mismatch");
    double acc = 0.0;
    for (std::size_t d = 0; d < q.size(); ++d) acc += (f[d] - q[d]) * (f[d] - q[d]);
    dist.emplace_back(std::sqrt(acc), i);
  }
  const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k), dist.size());
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(kk), dist.end());
  if (dist.front().first == 0.0) return db.entries[dist.front().second].position;
  Vec3 acc = Vec3::Zero();
  double wsum = 0.0;
  for (std::size_t i = 0; i < kk; ++i) {
    const double w = 1.0 / (dist[i].first + kIdwEpsilon);
    acc += w * db.entries[dist[i].second].position;
    wsum += w;
  }
  return acc / wsum;
}

RirDatabase augment_database(const RirDatabase& db, const RirRenderer& render, std::span<const Vec3> grid) {
  std::vector<RirDatabase::Entry> extra(grid.size());
  parallel_for(grid.size(), [&](std::size_t i) {
    extra[i] = {grid[i], rir_features(render(grid[i])), RirDatabase::Source::synthesized};
  });
  RirDatabase out = db;
  out.entries.insert(out.entries.end(), extra.begin(), extra.end());
  return out;
}

std::vector<Vec3> grid_positions(const Vec3& lo, const Vec3& hi, int nx, int ny, int nz) {
  if (nx < 0 || ny < 0 || nz < 0) throw InvalidArgument("grid: negative count");
  std::vector<Vec3> out;
  out.reserve(static_cast<std::size_t>(nx) * ny * nz);
  for (int i = 0; i < nx; ++i) {
    for (int j = 0; j < ny; ++j) {
      for (int k = 0; k < nz; ++k) {
        out.emplace_back(lo.x() + (hi.x() - lo.x()) * (i + 0.5) / nx, lo.y() + (hi.y() - lo.y()) * (j + 0.5) / ny,
                         lo.z() + (hi.z() - lo.z()) * (k + 0.5) / nz);
      }
    }
  }
  return out;
}

}  // namespace roomtwin
