#include "roomtwin/ply.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

namespace roomtwin::ply {

namespace {

enum class Type { I8, U8, I16, U16, I32, U32, F32, F64 };

Type parse_type(const std::string& name) {
  if (name == "char" || name == "int8") return Type::I8;
  if (name == "uchar" || name == "uint8") return Type::U8;
  if (name == "short" || name == "int16") return Type::I16;
  if (name == "ushort" || name == "uint16") return Type::U16;
  if (name == "int" || name == "int32") return Type::I32;
  if (name == "uint" || name == "uint32") return Type::U32;
  if (name == "float" || name == "float32") return Type::F32;
  if (name == "double" || name == "float64") return Type::F64;
  throw FormatError("PLY: unknown property type '" + name + "'");
}

std::size_t type_size(Type t) {
  switch (t) {
    case Type::I8:
    case Type::U8:
      return 1;
    case Type::I16:
    case Type::U16:
      return 2;
    case Type::I32:
    case Type::U32:
    case Type::F32:
      return 4;
    case Type::F64:
      return 8;
  }
  return 0;
}

bool is_integer(Type t) { return t != Type::F32 && t != Type::F64; }

struct Property {
  std::string name;
  Type type = Type::F32;
  bool is_list = false;
  Type count_type = Type::U8;
};

struct Element {
  std::string name;
  std::size_t count = 0;
  std::vector<Property> props;
};

class Source {
 public:
  Source(std::vector<char> data, std::size_t pos, bool binary)
      : data_(std::move(data)), pos_(pos), binary_(binary) {}

  double next(Type t) {
    if (!binary_) return next_ascii();
    const std::size_t n = type_size(t);
    if (pos_ + n > data_.size()) throw FormatError("PLY: unexpected end of binary data");
    const char* p = data_.data() + pos_;
    pos_ += n;
    switch (t) {
      case Type::I8: return static_cast<double>(static_cast<std::int8_t>(*p));
      case Type::U8: return static_cast<double>(static_cast<std::uint8_t>(*p));
      case Type::I16: { std::int16_t v; std::memcpy(&v, p, 2); return v; }
      case Type::U16: { std::uint16_t v; std::memcpy(&v, p, 2); return v; }
      case Type::I32: { std::int32_t v; std::memcpy(&v, p, 4); return v; }
      case Type::U32: { std::uint32_t v; std::memcpy(&v, p, 4); return v; }
      case Type::F32: { float v; std::memcpy(&v, p, 4); return v; }
      case Type::F64: { double v; std::memcpy(&v, p, 8); return v; }
    }
    return 0.0;
  }

 private:
  double next_ascii() {
    while (pos_ < data_.size() && std::isspace(static_cast<unsigned char>(data_[pos_]))) ++pos_;
    const std::size_t start = pos_;
    while (pos_ < data_.size() && !std::isspace(static_cast<unsigned char>(data_[pos_]))) ++pos_;
    if (start == pos_) throw FormatError("PLY: unexpected end of ASCII data");
    const std::string token(data_.data() + start, pos_ - start);
    try {
      std::size_t used = 0;
      const double v = std::stod(token, &used);
      if (used != token.size()) throw FormatError("PLY: bad number '" + token + "'");
      return v;
    } catch (const std::logic_error&) {
      throw FormatError("PLY: bad number '" + token + "'");
    }
  }

  std::vector<char> data_;
  std::size_t pos_;
  bool binary_;
};

int find_prop(const Element& e, const std::string& name) {
  for (std::size_t i = 0; i < e.props.size(); ++i) {
    if (e.props[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

}  // namespace

TriMesh read(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw FormatError("cannot open PLY file: " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());

  std::size_t pos = 0;
  auto next_line = [&]() {
    if (pos >= bytes.size()) throw FormatError("PLY: header not terminated: " + path.string());
    std::size_t end = pos;
    while (end < bytes.size() && bytes[end] != '\n') ++end;
    std::string line(bytes.data() + pos, end - pos);
    pos = end + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  };

  if (next_line() != "ply") throw FormatError("not a PLY file: " + path.string());
  bool binary = false;
  bool have_format = false;
  std::vector<Element> elements;
  while (true) {
    const std::string line = next_line();
    std::istringstream in(line);
    std::string word;
    in >> word;
    if (word == "end_header") break;
    if (word.empty() || word == "comment" || word == "obj_info") continue;
    if (word == "format") {
      std::string fmt;
      in >> fmt;
      if (fmt == "ascii") {
        binary = false;
      } else if (fmt == "binary_little_endian") {
        binary = true;
      } else {
        throw FormatError("PLY: unsupported format '" + fmt + "'");
      }
      have_format = true;
    } else if (word == "element") {
      Element e;
      long long count = -1;
      in >> e.name >> count;
      if (!in || count < 0) throw FormatError("PLY: bad element line '" + line + "'");
      e.count = static_cast<std::size_t>(count);
      elements.push_back(std::move(e));
    } else if (word == "property") {
      if (elements.empty()) throw FormatError("PLY: property before element");
      Property p;
      std::string type;
      in >> type;
      if (type == "list") {
        std::string ct, it;
        in >> ct >> it >> p.name;
        p.is_list = true;
        p.count_type = parse_type(ct);
        p.type = parse_type(it);
      } else {
        p.type = parse_type(type);
        in >> p.name;
      }
      if (p.name.empty()) throw FormatError("PLY: bad property line '" + line + "'");
      elements.back().props.push_back(p);
    } else {
      throw FormatError("PLY: unexpected header line '" + line + "'");
    }
  }
  if (!have_format) throw FormatError("PLY: missing format line");

  Source src(std::move(bytes), pos, binary);
  std::vector<Vec3> vertices;
  std::vector<Vec3> vertex_colors;
  std::vector<std::vector<int>> polygons;
  std::vector<Vec3> polygon_colors;
  bool have_vertex = false, have_face = false;

  for (const auto& e : elements) {
    const int px = find_prop(e, "x"), py = find_prop(e, "y"), pz = find_prop(e, "z");
    const int pr = find_prop(e, "red"), pg = find_prop(e, "green"), pb = find_prop(e, "blue");
    int pi = find_prop(e, "vertex_indices");
    if (pi < 0) pi = find_prop(e, "vertex_index");
    const bool colored = pr >= 0 && pg >= 0 && pb >= 0;
    if (e.name == "vertex") {
      if (px < 0 || py < 0 || pz < 0) throw FormatError("PLY: vertex element lacks x/y/z");
      have_vertex = true;
    }
    if (e.name == "face") {
      if (pi < 0) throw FormatError("PLY: face element lacks vertex_indices");
      have_face = true;
    }
    for (std::size_t row = 0; row < e.count; ++row) {
      std::vector<double> scalars(e.props.size(), 0.0);
      std::vector<int> list;
      for (std::size_t k = 0; k < e.props.size(); ++k) {
        const Property& p = e.props[k];
        if (!p.is_list) {
          scalars[k] = src.next(p.type);
          continue;
        }
        const double n = src.next(p.count_type);
        if (n < 0 || n > 1e6) throw FormatError("PLY: bad list length");
        std::vector<int> values(static_cast<std::size_t>(n));
        for (auto& v : values) v = static_cast<int>(src.next(p.type));
        if (static_cast<int>(k) == pi) list = std::move(values);
      }
      auto color = [&]() {
        Vec3 c(scalars[pr], scalars[pg], scalars[pb]);
        if (is_integer(e.props[pr].type)) c /= 255.0;
        return c;
      };
      if (e.name == "vertex") {
        vertices.emplace_back(scalars[px], scalars[py], scalars[pz]);
        if (colored) vertex_colors.push_back(color());
      } else if (e.name == "face") {
        if (list.size() < 3) throw FormatError("PLY: face with fewer than 3 vertices");
        polygons.push_back(std::move(list));
        if (colored) polygon_colors.push_back(color());
      }
    }
  }
  if (!have_vertex || !have_face) throw FormatError("PLY: need vertex and face elements: " + path.string());

  std::vector<Face> faces;
  std::vector<Vec3> colors;
  for (std::size_t i = 0; i < polygons.size(); ++i) {
    const auto& poly = polygons[i];
    for (int idx : poly) {
      if (idx < 0 || static_cast<std::size_t>(idx) >= vertices.size()) {
        throw FormatError("PLY: face index out of range in " + path.string());
      }
    }
    Vec3 c = Vec3::Constant(0.5);
    if (!polygon_colors.empty()) {
      c = polygon_colors[i];
    } else if (!vertex_colors.empty()) {
      c = Vec3::Zero();
      for (int idx : poly) c += vertex_colors[idx];
      c /= static_cast<double>(poly.size());
    }
    for (std::size_t k = 1; k + 1 < poly.size(); ++k) {
      faces.push_back({poly[0], poly[k], poly[k + 1]});
      colors.push_back(c);
    }
  }
  return TriMesh::build(std::move(vertices), std::move(faces), std::move(colors));
}

void write(const std::filesystem::path& path, const TriMesh& mesh) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open for writing: " + path.string());
  out << "ply\nformat ascii 1.0\n"
      << "element vertex " << mesh.vertices.size() << "\n"
      << "property double x\nproperty double y\nproperty double z\n"
      << "element face " << mesh.faces.size() << "\n"
      << "property list uchar int vertex_indices\n"
      << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
      << "end_header\n"
      << std::setprecision(17);
  for (const auto& v : mesh.vertices) out << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (std::size_t f = 0; f < mesh.size(); ++f) {
    const auto& c = mesh.face_colors[f];
    auto byte = [](double x) { return static_cast<int>(std::lround(std::clamp(x, 0.0, 1.0) * 255.0)); };
    out << "3 " << mesh.faces[f][0] << ' ' << mesh.faces[f][1] << ' ' << mesh.faces[f][2] << ' ' << byte(c.x())
        << ' ' << byte(c.y()) << ' ' << byte(c.z()) << '\n';
  }
}

}  // namespace roomtwin::ply
