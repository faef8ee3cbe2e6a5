#include "roomtwin/serialize.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "roomtwin/wav.hpp"

namespace roomtwin::io {

Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const Json& value) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << value.dump(2) << '\n';
}

std::vector<Json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<Json> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      rows.push_back(Json::parse(line));
    } catch (const Json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& rows) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& r : rows) out << r.dump() << '\n';
}

void check_keys(const Json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw FormatError(where + ": expected an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    const bool ok = std::any_of(allowed.begin(), allowed.end(), [&](const char* k) { return it.key() == k; });
    if (!ok) throw FormatError(where + ": unknown key '" + it.key() + "'");
  }
}

double get_number(const Json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) throw FormatError(where + ": missing '" + key + "'");
  const Json& v = obj.at(key);
  if (!v.is_number()) throw FormatError(where + "." + key + ": expected a number");
  return v.get<double>();
}

Json to_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

Vec3 vec3_from_json(const Json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) throw FormatError(where + ": expected [x, y, z]");
  for (const auto& e : j) {
    if (!e.is_number()) throw FormatError(where + ": expected numbers");
  }
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Json to_json(const Pose& pose) {
  const auto& q = pose.orientation;
  return {{"position", to_json(pose.position)}, {"orientation", Json::array({q.w(), q.x(), q.y(), q.z()})}};
}

Pose pose_from_json(const Json& j, const std::string& where) {
  Pose p;
  if (j.is_array()) {
    p.position = vec3_from_json(j, where);
    return p;
  }
  check_keys(j, {"position", "orientation"}, where);
  if (!j.contains("position")) throw FormatError(where + ": missing 'position'");
  p.position = vec3_from_json(j["position"], where + ".position");
  if (j.contains("orientation")) {
    const Json& q = j["orientation"];
    if (!q.is_array() || q.size() != 4) throw FormatError(where + ".orientation: expected [w, x, y, z]");
    p.orientation = Quat(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(), q[3].get<double>());
  }
  try {
    p.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(where + ": " + e.what());
  }
  return p;
}

Json to_json(const GainPattern& gain) { return {{"degree", gain.degree}, {"coeffs", gain.coeffs}}; }

GainPattern gain_from_json(const Json& j, const std::string& where) {
  check_keys(j, {"degree", "coeffs"}, where);
  GainPattern g;
  g.degree = j.value("degree", kDefaultShDegree);
  if (g.degree < 0 || g.degree > 8) throw FormatError(where + ".degree: expected 0..8");
  if (!j.contains("coeffs") || !j["coeffs"].is_array()) throw FormatError(where + ": missing 'coeffs'");
  g.coeffs = j["coeffs"].get<std::vector<double>>();
  if (g.coeffs.size() != sh_count(g.degree)) {
    throw FormatError(where + ": expected " + std::to_string(sh_count(g.degree)) + " coefficients");
  }
  return g;
}

Json to_json(const ClockModel& clock) { return {{"offset", clock.offset}, {"drift_ppm", clock.drift_ppm}}; }

ClockModel clock_from_json(const Json& j, const std::string& where) {
  check_keys(j, {"offset", "drift_ppm"}, where);
  ClockModel c;
  if (j.contains("offset")) c.offset = get_number(j, "offset", where);
  if (j.contains("drift_ppm")) c.drift_ppm = get_number(j, "drift_ppm", where);
  try {
    c.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(where + ": " + e.what());
  }
  return c;
}

Json to_json(const ChirpSpec& c) {
  return {{"f_start", c.f_start}, {"f_end", c.f_end}, {"duration", c.duration}, {"amplitude", c.amplitude}};
}

ChirpSpec chirp_from_json(const Json& j, const std::string& where) {
  check_keys(j, {"f_start", "f_end", "duration", "amplitude"}, where);
  ChirpSpec c;
  if (j.contains("f_start")) c.f_start = get_number(j, "f_start", where);
  if (j.contains("f_end")) c.f_end = get_number(j, "f_end", where);
  if (j.contains("duration")) c.duration = get_number(j, "duration", where);
  if (j.contains("amplitude")) c.amplitude = get_number(j, "amplitude", where);
  return c;
}

Json params_to_json(const AcousticParams& params, const Scene& scene) {
  if (params.materials.size() != scene.segments.size()) {
    throw InvalidArgument("params: material count differs from segment count");
  }
  Json segs = Json::object();
  for (std::size_t i = 0; i < scene.segments.size(); ++i) {
    segs[std::to_string(scene.segments[i].id)] = params.materials[i].R;
  }
  return {{"segments", segs}, {"tx_gain", to_json(params.tx)}, {"rx_gain", to_json(params.rx)}};
}

AcousticParams params_from_json(const Json& j, const Scene& scene) {
  check_keys(j, {"segments", "tx_gain", "rx_gain"}, "params");
  AcousticParams p = AcousticParams::from_scene(scene);
  if (j.contains("segments")) {
    const Json& segs = j["segments"];
    if (!segs.is_object()) throw FormatError("params.segments: expected an object");
    for (auto it = segs.begin(); it != segs.end(); ++it) {
      int id = 0;
      try {
        id = std::stoi(it.key());
      } catch (const std::exception&) {
        throw FormatError("params.segments: key '" + it.key() + "' is not a segment id");
      }
      if (!scene.has_segment(id)) throw FormatError("params.segments: unknown segment " + it.key());
      MaterialSpectrum m;
      if (it->is_number()) {
        m = MaterialSpectrum::flat(it->get<double>());
      } else if (it->is_array() && it->size() == kNumBands) {
        for (std::size_t b = 0; b < kNumBands; ++b) m.R[b] = (*it)[b].get<double>();
      } else {
        throw FormatError("params.segments." + it.key() + ": expected a number or 7 band values");
      }
      try {
        m.validate();
      } catch (const InvalidArgument& e) {
        throw FormatError("params.segments." + it.key() + ": " + e.what());
      }
      p.materials[scene.segment_index(id)] = m;
    }
  }
  if (j.contains("tx_gain")) p.tx = gain_from_json(j["tx_gain"], "params.tx_gain");
  if (j.contains("rx_gain")) p.rx = gain_from_json(j["rx_gain"], "params.rx_gain");
  return p;
}

Json to_json(const Rir& rir) {
  return {{"sample_rate", rir.sample_rate}, {"onset", rir.onset}, {"taps", rir.taps}};
}

Rir rir_from_json(const Json& j, const std::string& where) {
  check_keys(j, {"sample_rate", "onset", "taps"}, where);
  Rir r;
  r.sample_rate = j.contains("sample_rate") ? get_number(j, "sample_rate", where) : kSampleRate;
  r.onset = j.contains("onset") ? get_number(j, "onset", where) : 0.0;
  if (!j.contains("taps") || !j["taps"].is_array()) throw FormatError(where + ": missing 'taps'");
  r.taps = j["taps"].get<std::vector<double>>();
  for (double t : r.taps) {
    if (!std::isfinite(t)) throw FormatError(where + ": non-finite tap");
  }
  return r;
}

void write_rir(const std::filesystem::path& path, const Rir& rir) {
  if (path.extension() == ".wav") {
    wav::write(path, rir.taps, rir.sample_rate);
  } else {
    write_json(path, to_json(rir));
  }
}

Rir read_rir(const std::filesystem::path& path) {
  if (path.extension() == ".wav") {
    auto audio = wav::read(path);
    Rir r;
    r.taps = std::move(audio.samples);
    r.sample_rate = audio.sample_rate;
    return r;
  }
  return rir_from_json(read_json(path), path.string());
}

Json to_json(const HandshakeRecord& rec) {
  return {{"t1", rec.t1}, {"t2", rec.t2}, {"t3", rec.t3}, {"t4", rec.t4}};
}

HandshakeRecord record_from_json(const Json& j, const std::string& where) {
  check_keys(j, {"t1", "t2", "t3", "t4"}, where);
  return {get_number(j, "t1", where), get_number(j, "t2", where), get_number(j, "t3", where),
          get_number(j, "t4", where)};
}

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  char buf[64];
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", row[i]);
      out << (i ? "," : "") << buf;
    }
    out << '\n';
  }
}

}  // namespace roomtwin::io
