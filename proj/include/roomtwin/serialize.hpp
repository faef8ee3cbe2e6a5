#pragma once

#include <filesystem>
#include <initializer_list>
#include <string>
#include <vector>

#include <json.hpp>

#include "roomtwin/handshake.hpp"
#include "roomtwin/raytrace.hpp"
#include "roomtwin/scene.hpp"

namespace roomtwin::io {

using Json = nlohmann::json;

Json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const Json& value);
// One JSON value per line.
std::vector<Json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& rows);

// Throws FormatError naming `where` when obj holds a key outside `allowed`
// or is not an object.
void check_keys(const Json& obj, std::initializer_list<const char*> allowed, const std::string& where);

double get_number(const Json& obj, const char* key, const std::string& where);

Json to_json(const Vec3& v);
Vec3 vec3_from_json(const Json& j, const std::string& where);

// {"position": [x, y, z], "orientation": [w, x, y, z]}; orientation optional.
Json to_json(const Pose& pose);
Pose pose_from_json(const Json& j, const std::string& where = "pose");

Json to_json(const GainPattern& gain);
GainPattern gain_from_json(const Json& j, const std::string& where = "gain");

Json to_json(const ClockModel& clock);
ClockModel clock_from_json(const Json& j, const std::string& where = "clock");

Json to_json(const ChirpSpec& chirp);
ChirpSpec chirp_from_json(const Json& j, const std::string& where = "chirp");

// {"segments": {"<id>": [7 band values]}, "tx_gain": {...}, "rx_gain": {...}}
Json params_to_json(const AcousticParams& params, const Scene& scene);
AcousticParams params_from_json(const Json& j, const Scene& scene);

Json to_json(const Rir& rir);
Rir rir_from_json(const Json& j, const std::string& where = "rir");
// .wav (onset is lost, tap 0 written first) or .json, chosen by extension.
void write_rir(const std::filesystem::path& path, const Rir& rir);
Rir read_rir(const std::filesystem::path& path);

Json to_json(const HandshakeRecord& rec);
HandshakeRecord record_from_json(const Json& j, const std::string& where = "record");

// Header row plus numeric rows, written with 17 significant digits.
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);

}  // namespace roomtwin::io
