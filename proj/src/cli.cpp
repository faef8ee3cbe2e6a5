#include "roomtwin/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <memory>

#include <CLI11.hpp>

#include "roomtwin/estimate.hpp"
#include "roomtwin/field.hpp"
#include "roomtwin/handshake.hpp"
#include "roomtwin/metrics.hpp"
#include "roomtwin/parallel.hpp"
#include "roomtwin/ply.hpp"
#include "roomtwin/raytrace.hpp"
#include "roomtwin/serialize.hpp"
#include "roomtwin/twin.hpp"
#include "roomtwin/wav.hpp"

namespace roomtwin {

namespace fs = std::filesystem;
using io::Json;

namespace {

constexpr double kUnset = std::numeric_limits<double>::quiet_NaN();

// Missing required inputs; reported with exit code 2 like parse errors.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Registers options and mirrors them as JSON config keys.
class Binder {
 public:
  explicit Binder(CLI::App* app) : app_(app) {
    app_->add_option("--config", config_path_, "JSON file with option values; command-line flags win");
  }

  template <class T>
  CLI::Option* add(const std::string& flags, const std::string& key, T& field, const std::string& desc) {
    auto* opt = app_->add_option(flags, field, desc)->capture_default_str();
    bindings_.push_back({key, opt, [&field](const Json& j) { field = j.get<T>(); }, [&field] { return Json(field); }});
    return opt;
  }

  CLI::Option* add_number(const std::string& flags, const std::string& key, double& field, const std::string& desc) {
    auto* opt = app_->add_option(flags, field, desc)->capture_default_str();
    bindings_.push_back({key, opt,
                         [&field](const Json& j) { field = j.is_null() ? kUnset : j.get<double>(); },
                         [&field] { return std::isnan(field) ? Json(nullptr) : Json(field); }});
    return opt;
  }

  // Fills options not given on the command line from --config, then echoes
  // the resolved configuration to stderr.
  void resolve(const std::string& command) {
    if (!config_path_.empty()) {
      const Json cfg = io::read_json(config_path_);
      if (!cfg.is_object()) throw FormatError(config_path_ + ": expected an object");
      for (auto it = cfg.begin(); it != cfg.end(); ++it) {
        auto b = std::find_if(bindings_.begin(), bindings_.end(), [&](const Binding& x) { return x.key == it.key(); });
        if (b == bindings_.end()) throw FormatError(config_path_ + ": unknown key '" + it.key() + "'");
        if (b->option->count() > 0) continue;
        try {
          b->set(*it);
        } catch (const Json::exception& e) {
          throw FormatError(config_path_ + ": bad value for '" + it.key() + "': " + e.what());
        }
      }
    }
    Json resolved = Json::object();
    for (const auto& b : bindings_) resolved[b.key] = b.get();
    std::cerr << Json{{"command", command}, {"config", resolved}}.dump() << '\n';
  }

 private:
  struct Binding {
    std::string key;
    CLI::Option* option;
    std::function<void(const Json&)> set;
    std::function<Json()> get;
  };
  CLI::App* app_;
  std::string config_path_;
  std::vector<Binding> bindings_;
};

Pose make_pose(const std::vector<double>& position, const std::vector<double>& orientation, const char* what) {
  if (position.size() != 3) throw InvalidArgument(std::string(what) + ": expected 3 coordinates");
  Pose p;
  p.position = Vec3(position[0], position[1], position[2]);
  if (!orientation.empty()) {
    if (orientation.size() != 4) throw InvalidArgument(std::string(what) + ": orientation needs w x y z");
    p.orientation = Quat(orientation[0], orientation[1], orientation[2], orientation[3]);
  }
  p.validate();
  return p;
}

fs::path resolve_relative(const fs::path& base_file, const std::string& p) {
  fs::path path(p);
  return path.is_relative() ? base_file.parent_path() / path : path;
}

Rir rir_entry(const Json& line, const fs::path& file, const std::string& where) {
  if (!line.contains("rir")) throw FormatError(where + ": missing 'rir'");
  Rir rir = line["rir"].is_string() ? io::read_rir(resolve_relative(file, line["rir"].get<std::string>()))
                                    : io::rir_from_json(line["rir"], where + ".rir");
  if (line.contains("onset")) rir.onset = io::get_number(line, "onset", where);
  return rir;
}

// JSONL lines {"tx": pose, "rx": pose, "rir": path-or-object, "onset": s}.
std::vector<TrainSample> load_dataset(const fs::path& path) {
  std::vector<TrainSample> out;
  const auto lines = io::read_jsonl(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string where = path.string() + ":" + std::to_string(i + 1);
    io::check_keys(lines[i], {"tx", "rx", "rir", "onset", "name"}, where);
    if (!lines[i].contains("tx") || !lines[i].contains("rx")) throw FormatError(where + ": missing 'tx' or 'rx'");
    TrainSample s;
    s.tx = io::pose_from_json(lines[i]["tx"], where + ".tx");
    s.rx = io::pose_from_json(lines[i]["rx"], where + ".rx");
    s.measured = rir_entry(lines[i], path, where);
    out.push_back(std::move(s));
  }
  if (out.empty()) throw FormatError(path.string() + ": empty dataset");
  return out;
}

Trajectory trajectory_from_json(const Json& j, const std::string& where) {
  if (j.is_object() && j.contains("times")) {
    io::check_keys(j, {"times", "poses"}, where);
    Trajectory t;
    t.times = j["times"].get<std::vector<double>>();
    if (!j.contains("poses") || !j["poses"].is_array()) throw FormatError(where + ": missing 'poses'");
    for (const auto& p : j["poses"]) t.poses.push_back(io::pose_from_json(p, where + ".poses"));
    if (t.times.empty() || t.times.size() != t.poses.size()) throw FormatError(where + ": times and poses differ");
    return t;
  }
  return Trajectory::fixed(io::pose_from_json(j, where));
}

struct SessionFile {
  SessionConfig config;
  ClockModel rx_clock;
  ClockModel tx_clock;
};

SessionFile session_from_json(const Json& j) {
  io::check_keys(j, {"duration", "first_exchange", "interval", "latency_min", "latency_max", "snr_db", "c1", "c2",
                     "max_bounces", "rir_length", "tx", "rx", "bursts", "seed", "rx_clock", "tx_clock"},
                 "session");
  SessionFile s;
  auto& c = s.config;
  auto num = [&](const char* key, double& field) {
    if (j.contains(key)) field = io::get_number(j, key, "session");
  };
  num("duration", c.duration);
  num("first_exchange", c.first_exchange);
  num("interval", c.interval);
  num("latency_min", c.latency_min);
  num("latency_max", c.latency_max);
  num("rir_length", c.rir_length);
  if (j.contains("snr_db")) {
    if (j["snr_db"].is_null()) {
      c.snr_db.reset();
    } else {
      c.snr_db = io::get_number(j, "snr_db", "session");
    }
  }
  if (j.contains("c1")) c.c1 = io::chirp_from_json(j["c1"], "session.c1");
  if (j.contains("c2")) c.c2 = io::chirp_from_json(j["c2"], "session.c2");
  if (j.contains("max_bounces")) c.max_bounces = j["max_bounces"].get<int>();
  if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  if (!j.contains("tx") || !j.contains("rx")) throw FormatError("session: 'tx' and 'rx' are required");
  c.tx = trajectory_from_json(j["tx"], "session.tx");
  c.rx = trajectory_from_json(j["rx"], "session.rx");
  if (j.contains("bursts")) {
    for (const auto& b : j["bursts"]) {
      io::check_keys(b, {"start", "duration", "level_db"}, "session.bursts");
      NoiseBurst nb;
      nb.start = io::get_number(b, "start", "session.bursts");
      nb.duration = io::get_number(b, "duration", "session.bursts");
      if (b.contains("level_db")) nb.level_db = io::get_number(b, "level_db", "session.bursts");
      c.bursts.push_back(nb);
    }
  }
  if (j.contains("rx_clock")) s.rx_clock = io::clock_from_json(j["rx_clock"], "session.rx_clock");
  if (j.contains("tx_clock")) s.tx_clock = io::clock_from_json(j["tx_clock"], "session.tx_clock");
  return s;
}

std::string indexed(const char* prefix, std::size_t i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%04zu%s", prefix, i, ext);
  return buf;
}

Json metric_or_null(const std::function<double()>& fn) {
  try {
    return fn();
  } catch (const Error&) {
    return nullptr;
  }
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------- chirp

struct ChirpArgs {
  double f0 = kSyncChirp.f_start;
  double f1 = kSyncChirp.f_end;
  double dur = kSyncChirp.duration;
  double amplitude = 1.0;
  double sample_rate = kSampleRate;
  std::string output;
};

void setup(CLI::App* app, Binder& b, ChirpArgs& a) {
  b.add("--f0", "f0", a.f0, "start frequency (Hz)");
  b.add("--f1", "f1", a.f1, "end frequency (Hz)");
  b.add("--dur", "dur", a.dur, "duration (s)");
  b.add("--amplitude", "amplitude", a.amplitude, "peak amplitude");
  b.add("--sample-rate", "sample_rate", a.sample_rate, "sample rate (Hz)");
  b.add("-o,--output", "output", a.output, "output WAV");
  app->footer("Linear sweep with 5 ms raised-cosine fades, written as 32-bit float mono WAV.");
}

void run(const ChirpArgs& a) {
  if (a.output.empty()) throw UsageError("chirp: --output is required");
  const auto w = gen_chirp({a.f0, a.f1, a.dur, a.amplitude}, a.sample_rate);
  wav::write(a.output, w.samples, w.sample_rate);
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
  std::string scene, session, output;
  long long seed = -1;
};

void setup(CLI::App* app, Binder& b, SimulateArgs& a) {
  b.add("--scene", "scene", a.scene, "scene JSON");
  b.add("--session", "session", a.session, "session JSON (devices, clocks, schedule, noise)");
  b.add("--seed", "seed", a.seed, "noise seed; -1 keeps the session file's seed");
  b.add("-o,--output", "output", a.output, "output directory");
  app->footer(
      "Session defaults: duration 20 s, first exchange 0.25 s, interval 2 s, latency 0.05-0.15 s, SNR 20 dB,\n"
      "c1 11-19 kHz / c2 50 Hz-9 kHz 0.2 s chirps, 3 bounces, 0.3 s RIRs.\n"
      "Writes rx.wav, tx.wav, session_log.json and truth.jsonl.");
}

void run(const SimulateArgs& a) {
  if (a.scene.empty() || a.session.empty() || a.output.empty()) {
    throw UsageError("simulate: --scene, --session and --output are required");
  }
  const Scene scene = load_scene(a.scene);
  SessionFile s = session_from_json(io::read_json(a.session));
  if (a.seed >= 0) s.config.seed = static_cast<std::uint64_t>(a.seed);
  const auto rec = simulate_session(scene, s.config, s.rx_clock, s.tx_clock);
  fs::create_directories(a.output);
  const fs::path out(a.output);
  wav::write(out / "rx.wav", rec.rx.samples, rec.rx.sample_rate);
  wav::write(out / "tx.wav", rec.tx.samples, rec.tx.sample_rate);
  io::write_json(out / "session_log.json", {{"rx_t0", rec.rx.t0},
                                            {"tx_t0", rec.tx.t0},
                                            {"t1", rec.t1_log},
                                            {"t3", rec.t3_log},
                                            {"c1", io::to_json(s.config.c1)},
                                            {"c2", io::to_json(s.config.c2)},
                                            {"interval", s.config.interval},
                                            {"latency_max", s.config.latency_max},
                                            {"rir_length", s.config.rir_length}});
  std::vector<Json> truth;
  for (const auto& e : rec.plan.exchanges) {
    truth.push_back({{"index", e.index},
                     {"tof", e.tof},
                     {"tof_forward", e.tof_forward},
                     {"tof_backward", e.tof_backward},
                     {"latency", e.latency},
                     {"record", io::to_json(e.record)},
                     {"tx", io::to_json(e.tx_c2)},
                     {"rx", io::to_json(e.rx_c2)}});
  }
  io::write_jsonl(out / "truth.jsonl", truth);
}

// ---------------------------------------------------------------- handshake

struct HandshakeArgs {
  std::string input, output;
  double threshold = 0.3;
  double margin = 0.05;
  double delta_t = 0.002;
  double growth = 2.0;
  double rir_length = kUnset;
};

void setup(CLI::App* app, Binder& b, HandshakeArgs& a) {
  b.add("input", "input", a.input, "directory written by simulate");
  b.add("--threshold", "threshold", a.threshold, "detector correlation threshold");
  b.add("--margin", "margin", a.margin, "pairing margin (s)");
  b.add("--delta-t", "delta_t", a.delta_t, "direct-path window (s)");
  b.add("--growth", "growth", a.growth, "direct-path growth factor");
  b.add_number("--rir-length", "rir_length", a.rir_length, "RIR length (s); unset uses the session log");
  b.add("-o,--output", "output", a.output, "output directory");
  app->footer("Writes records.jsonl (t1..t4, tof, RIR file per exchange), rir_NNNN.wav and report.json.");
}

void run(const HandshakeArgs& a) {
  if (a.input.empty() || a.output.empty()) throw UsageError("handshake: input and --output are required");
  const fs::path in(a.input);
  const Json log = io::read_json(in / "session_log.json");
  io::check_keys(log, {"rx_t0", "tx_t0", "t1", "t3", "c1", "c2", "interval", "latency_max", "rir_length"},
                 "session_log");
  auto load = [&](const char* name, double t0) {
    auto audio = wav::read(in / name);
    Waveform w;
    w.samples = std::move(audio.samples);
    w.sample_rate = audio.sample_rate;
    w.t0 = t0;
    return w;
  };
  const Waveform rx = load("rx.wav", io::get_number(log, "rx_t0", "session_log"));
  const Waveform tx = load("tx.wav", io::get_number(log, "tx_t0", "session_log"));
  ProtocolConfig cfg;
  cfg.c1 = io::chirp_from_json(log.at("c1"), "session_log.c1");
  cfg.c2 = io::chirp_from_json(log.at("c2"), "session_log.c2");
  cfg.interval = io::get_number(log, "interval", "session_log");
  cfg.latency_max = io::get_number(log, "latency_max", "session_log");
  cfg.rir_length = std::isnan(a.rir_length) ? io::get_number(log, "rir_length", "session_log") : a.rir_length;
  cfg.detector.threshold = a.threshold;
  cfg.pairing_margin = a.margin;
  cfg.picker.delta_t = a.delta_t;
  cfg.picker.growth = a.growth;
  const auto t1 = log.at("t1").get<std::vector<double>>();
  const auto t3 = log.at("t3").get<std::vector<double>>();
  const auto report = run_protocol(rx, tx, t1, t3, cfg);

  fs::create_directories(a.output);
  const fs::path out(a.output);
  std::vector<Json> rows;
  for (const auto& e : report.exchanges) {
    const std::string name = indexed("rir", static_cast<std::size_t>(e.index), ".wav");
    wav::write(out / name, e.rir.taps, e.rir.sample_rate);
    Json row = io::to_json(e.record);
    row["index"] = e.index;
    row["tof"] = e.tof;
    row["onset"] = e.rir.onset;
    row["rir"] = name;
    rows.push_back(row);
  }
  io::write_jsonl(out / "records.jsonl", rows);
  io::write_json(out / "report.json", {{"attempted", report.attempted},
                                       {"completed", report.exchanges.size()},
                                       {"dropped", report.dropped},
                                       {"invalid", report.invalid},
                                       {"detection_rate", report.detection_rate()},
                                       {"c1_detections", report.c1_detections},
                                       {"c2_detections", report.c2_detections}});
}

// ---------------------------------------------------------------- extract

struct ExtractArgs {
  std::string recording, output, events;
  double f0 = kMeasureChirp.f_start;
  double f1 = kMeasureChirp.f_end;
  double dur = kMeasureChirp.duration;
  double arrival = kUnset;
  double onset = 0.0;
  double t0 = 0.0;
  double length = kDefaultRirLength;
  double threshold = 0.3;
};

void setup(CLI::App* app, Binder& b, ExtractArgs& a) {
  b.add("--recording", "recording", a.recording, "recording WAV");
  b.add("--f0", "f0", a.f0, "chirp start frequency (Hz)");
  b.add("--f1", "f1", a.f1, "chirp end frequency (Hz)");
  b.add("--dur", "dur", a.dur, "chirp duration (s)");
  b.add("--t0", "t0", a.t0, "local time of the recording's first sample (s)");
  b.add_number("--arrival", "arrival", a.arrival, "chirp arrival (s); unset detects the first chirp");
  b.add("--onset", "onset", a.onset, "time of flight stored on the RIR (s)");
  b.add("--length", "length", a.length, "RIR length (s)");
  b.add("--threshold", "threshold", a.threshold, "detector threshold when detecting");
  b.add("--events", "events", a.events, "optional CSV of detection events");
  b.add("-o,--output", "output", a.output, "output RIR (.json or .wav)");
  app->footer("Direct-path picking: h_min 5 x median |corr|, window 2 ms, growth 2.");
}

void run(const ExtractArgs& a) {
  if (a.recording.empty() || a.output.empty()) throw UsageError("extract: --recording and --output are required");
  auto audio = wav::read(a.recording);
  Waveform rec;
  rec.samples = std::move(audio.samples);
  rec.sample_rate = audio.sample_rate;
  rec.t0 = a.t0;
  const ChirpSpec spec{a.f0, a.f1, a.dur, 1.0};
  const Waveform chirp = gen_chirp(spec, rec.sample_rate);
  double arrival = a.arrival;
  if (std::isnan(arrival) || !a.events.empty()) {
    const std::vector<Waveform> chunks{rec};
    const auto events = detect_chirp_stream(chunks, spec, a.threshold);
    if (!a.events.empty()) write_events_csv(a.events, events);
    if (std::isnan(arrival)) {
      if (events.empty()) throw NoArrivalError("extract: no chirp detected in " + a.recording);
      arrival = refine_arrival(rec, chirp, events.front().time, {});
    }
  }
  io::write_rir(a.output, extract_rir(rec, chirp, arrival, a.onset, a.length));
}

// ---------------------------------------------------------------- render

struct RenderArgs {
  std::string scene, params, field, poses, output;
  std::vector<double> tx{1.0, 1.0, 1.5}, rx{3.0, 4.0, 1.2}, tx_orient, rx_orient;
  int max_bounces = 8;
  double length = kDefaultRirLength;
  double origin = kUnset;
};

void setup(CLI::App* app, Binder& b, RenderArgs& a) {
  b.add("--scene", "scene", a.scene, "scene JSON");
  b.add("--tx", "tx", a.tx, "Tx position")->expected(3);
  b.add("--rx", "rx", a.rx, "Rx position")->expected(3);
  b.add("--tx-orient", "tx_orient", a.tx_orient, "Tx orientation w x y z")->expected(4);
  b.add("--rx-orient", "rx_orient", a.rx_orient, "Rx orientation w x y z")->expected(4);
  b.add("--params", "params", a.params, "acoustic parameters JSON (default: scene materials, unit gains)");
  b.add("--field", "field", a.field, "render through a fitted field blob instead of ray tracing");
  b.add("--poses", "poses", a.poses, "JSONL of {tx, rx} poses; renders a dataset into --output");
  b.add("--max-bounces", "max_bounces", a.max_bounces, "reflection order");
  b.add("--length", "length", a.length, "RIR length (s)");
  b.add_number("--origin", "origin", a.origin, "absolute time of tap 0 (s); unset = earliest path (field: 0)");
  b.add("-o,--output", "output", a.output, "output RIR file, or directory with --poses");
  app->footer("FFT guard 256 samples; material curves interpolate on log frequency between octave bands.");
}

void run(const RenderArgs& a) {
  if (a.scene.empty() || a.output.empty()) throw UsageError("render: --scene and --output are required");
  const Scene scene = load_scene(a.scene);
  const AcousticParams params =
      a.params.empty() ? AcousticParams::from_scene(scene) : io::params_from_json(io::read_json(a.params), scene);
  std::optional<FieldModel> field;
  if (!a.field.empty()) field = load_field(a.field);
  RenderOptions opt;
  opt.length = a.length;
  opt.max_bounces = a.max_bounces;
  if (!std::isnan(a.origin)) opt.origin = a.origin;
  auto render_one = [&](const Pose& tx, const Pose& rx) {
    if (field) return render_field(*field, scene, rx, std::isnan(a.origin) ? 0.0 : a.origin);
    return render_rir(scene, tx, rx, params, opt);
  };
  if (a.poses.empty()) {
    io::write_rir(a.output, render_one(make_pose(a.tx, a.tx_orient, "--tx"), make_pose(a.rx, a.rx_orient, "--rx")));
    return;
  }
  const auto lines = io::read_jsonl(a.poses);
  std::vector<std::pair<Pose, Pose>> poses;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string where = a.poses + ":" + std::to_string(i + 1);
    io::check_keys(lines[i], {"tx", "rx"}, where);
    poses.emplace_back(io::pose_from_json(lines[i].at("tx"), where + ".tx"),
                       io::pose_from_json(lines[i].at("rx"), where + ".rx"));
  }
  std::vector<Rir> rirs(poses.size());
  parallel_for(poses.size(), [&](std::size_t i) { rirs[i] = render_one(poses[i].first, poses[i].second); });
  fs::create_directories(a.output);
  std::vector<Json> rows;
  for (std::size_t i = 0; i < rirs.size(); ++i) {
    const std::string name = indexed("rir", i, ".json");
    io::write_rir(fs::path(a.output) / name, rirs[i]);
    rows.push_back({{"tx", io::to_json(poses[i].first)}, {"rx", io::to_json(poses[i].second)}, {"rir", name}});
  }
  io::write_jsonl(fs::path(a.output) / "dataset.jsonl", rows);
}

// ---------------------------------------------------------------- fit-materials

struct FitMaterialsArgs {
  std::string scene, data, output, trace;
  double lr = 0.02;
  int iterations = 2000;
  int patience = 200;
  int max_bounces = 8;
  double f_lo = 50.0;
  double f_hi = 9000.0;
  std::vector<double> gate;
  bool train_gains = true;
};

void setup(CLI::App* app, Binder& b, FitMaterialsArgs& a) {
  b.add("--scene", "scene", a.scene, "scene JSON");
  b.add("--data", "data", a.data, "dataset JSONL of {tx, rx, rir}");
  b.add("--lr", "lr", a.lr, "Adam step size");
  b.add("--iterations", "iterations", a.iterations, "maximum iterations");
  b.add("--patience", "patience", a.patience, "stop after this many iterations without progress");
  b.add("--max-bounces", "max_bounces", a.max_bounces, "reflection order of the cached paths");
  b.add("--f-lo", "f_lo", a.f_lo, "loss band lower edge (Hz)");
  b.add("--f-hi", "f_hi", a.f_hi, "loss band upper edge (Hz)");
  b.add("--gate", "gate", a.gate, "optional time gate: start end (s after tap 0)")->expected(2);
  b.add("--train-gains", "train_gains", a.train_gains, "also fit Tx/Rx gain patterns");
  b.add("--trace", "trace", a.trace, "optional loss trace CSV");
  b.add("-o,--output", "output", a.output, "output parameters JSON");
  app->footer(
      "Init: R = 0.5 on every band, isotropic unit gains (SH degree 2). Adam beta 0.9/0.999, eps 1e-12.\n"
      "Tx degree-0 coefficient frozen (gain gauge). Progress = relative improvement > 1e-6.");
}

void run(const FitMaterialsArgs& a) {
  if (a.scene.empty() || a.data.empty() || a.output.empty()) {
    throw UsageError("fit-materials: --scene, --data and --output are required");
  }
  const Scene scene = load_scene(a.scene);
  FitConfig cfg;
  cfg.learning_rate = a.lr;
  cfg.iterations = a.iterations;
  cfg.patience = a.patience;
  cfg.train_gains = a.train_gains;
  cfg.loss.max_bounces = a.max_bounces;
  cfg.loss.f_lo = a.f_lo;
  cfg.loss.f_hi = a.f_hi;
  if (!a.gate.empty()) cfg.loss.gate = std::make_pair(a.gate[0], a.gate[1]);
  const auto result = fit_materials(scene, load_dataset(a.data), cfg);
  io::write_json(a.output, io::params_to_json(result.params.to_acoustic(), scene));
  if (!a.trace.empty()) {
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < result.loss.size(); ++i) {
      rows.push_back({static_cast<double>(i), result.loss[i], result.best_loss[i]});
    }
    io::write_csv(a.trace, {"iteration", "loss", "best_loss"}, rows);
  }
}

// ---------------------------------------------------------------- fit-field

struct FitFieldArgs {
  std::string scene, data, output, trace;
  std::size_t patches = 256;
  std::size_t rays = 512;
  int epochs = 40;
  std::size_t batch = 8;
  double lr = 0.01;
  double init_scale = 0.01;
  std::uint64_t seed = 1;
};

void setup(CLI::App* app, Binder& b, FitFieldArgs& a) {
  b.add("--scene", "scene", a.scene, "scene JSON");
  b.add("--data", "data", a.data, "dataset JSONL of {tx, rx, rir} sharing one Tx pose");
  b.add("--patches", "patches", a.patches, "surface patches P");
  b.add("--rays", "rays", a.rays, "ray directions K");
  b.add("--epochs", "epochs", a.epochs, "training epochs");
  b.add("--batch", "batch", a.batch, "minibatch size");
  b.add("--lr", "lr", a.lr, "Adam step size (cosine-decayed)");
  b.add("--init-scale", "init_scale", a.init_scale, "std of the initial emissions");
  b.add("--seed", "seed", a.seed, "initialization and shuffling seed");
  b.add("--trace", "trace", a.trace, "optional per-epoch loss CSV");
  b.add("-o,--output", "output", a.output, "output field blob");
  app->footer("Loss: multi-scale STFT (64/256/1024, hop 1/4) x 1.0 + envelope L1 x 0.5. Rx gain SH degree 2.");
}

void run(const FitFieldArgs& a) {
  if (a.scene.empty() || a.data.empty() || a.output.empty()) {
    throw UsageError("fit-field: --scene, --data and --output are required");
  }
  const Scene scene = load_scene(a.scene);
  FieldTrainConfig cfg;
  cfg.layout.patches = a.patches;
  cfg.layout.rays = a.rays;
  cfg.epochs = a.epochs;
  cfg.batch = a.batch;
  cfg.learning_rate = a.lr;
  cfg.init_scale = a.init_scale;
  cfg.seed = a.seed;
  const auto result = fit_field(scene, load_dataset(a.data), cfg);
  save_field(result.model, a.output);
  if (!a.trace.empty()) {
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < result.epoch_loss.size(); ++i) rows.push_back({static_cast<double>(i), result.epoch_loss[i]});
    io::write_csv(a.trace, {"epoch", "loss"}, rows);
  }
}

// ---------------------------------------------------------------- metrics

struct MetricsArgs {
  std::string a, b, output;
};

void setup(CLI::App* app, Binder& bind, MetricsArgs& a) {
  bind.add("--a", "a", a.a, "RIR file or directory");
  bind.add("--b", "b", a.b, "RIR file or directory (paired by file name)");
  bind.add("-o,--output", "output", a.output, "report CSV");
  app->footer(
      "Columns: env_err, amp_err, ms_stft_err and absolute T60 (s), C50 (dB), EDT (s) differences.\n"
      "T60 fits -5..-35 dB; C50 clamps at +-80 dB; nan marks RIRs with too little decay.");
}

std::vector<std::pair<std::string, fs::path>> rir_files(const fs::path& p) {
  std::vector<std::pair<std::string, fs::path>> out;
  if (fs::is_directory(p)) {
    for (const auto& e : fs::directory_iterator(p)) {
      const auto ext = e.path().extension();
      if (e.is_regular_file() && (ext == ".wav" || ext == ".json")) out.emplace_back(e.path().filename().string(), e.path());
    }
    std::sort(out.begin(), out.end());
  } else {
    out.emplace_back(p.filename().string(), p);
  }
  return out;
}

void run(const MetricsArgs& a) {
  if (a.a.empty() || a.b.empty() || a.output.empty()) throw UsageError("metrics: --a, --b and --output are required");
  const auto fa = rir_files(a.a);
  const auto fb = rir_files(a.b);
  std::vector<std::pair<fs::path, fs::path>> pairs;
  if (!fs::is_directory(a.a) && !fs::is_directory(a.b)) {
    pairs.emplace_back(fa.front().second, fb.front().second);
  } else {
    std::map<std::string, fs::path> bmap(fb.begin(), fb.end());
    for (const auto& [name, path] : fa) {
      const auto it = bmap.find(name);
      if (it == bmap.end()) throw InvalidArgument("metrics: " + name + " has no counterpart in " + a.b);
      pairs.emplace_back(path, it->second);
    }
  }
  std::vector<MetricComparison> rows(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t i) {
    rows[i] = compare(io::read_rir(pairs[i].first), io::read_rir(pairs[i].second));
  });
  std::ofstream out(a.output);
  if (!out) throw Error("cannot write " + a.output);
  out << "name,env_err,amp_err,ms_stft_err,t60_diff,c50_diff,edt_diff\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    out << pairs[i].first.filename().string();
    for (double v : {r.env, r.amp, r.stft, r.t60, r.c50, r.edt}) out << ',' << format_double(v);
    out << '\n';
  }
}

// ---------------------------------------------------------------- edit

struct EditArgs {
  std::string scene, script, output;
  std::vector<double> tx{1.0, 1.0, 1.5}, rx{3.0, 4.0, 1.2};
  int max_bounces = 8;
  double length = kDefaultRirLength;
};

void setup(CLI::App* app, Binder& b, EditArgs& a) {
  b.add("--scene", "scene", a.scene, "scene JSON");
  b.add("--script", "script", a.script, "edit script JSON, applied in order");
  b.add("--tx", "tx", a.tx, "Tx position")->expected(3);
  b.add("--rx", "rx", a.rx, "Rx position")->expected(3);
  b.add("--max-bounces", "max_bounces", a.max_bounces, "reflection order");
  b.add("--length", "length", a.length, "RIR length (s)");
  b.add("-o,--output", "output", a.output, "output directory");
  app->footer("Writes before.json, after.json, scene.ply (edited mesh) and report.json. Edits invalidate fitted fields.");
}

void run(const EditArgs& a) {
  if (a.scene.empty() || a.script.empty() || a.output.empty()) {
    throw UsageError("edit: --scene, --script and --output are required");
  }
  const Scene before = load_scene(a.scene);
  const auto ops = load_edit_script(a.script);
  const Scene after = apply_edits(before, ops);
  const Pose tx = make_pose(a.tx, {}, "--tx");
  const Pose rx = make_pose(a.rx, {}, "--rx");
  RenderOptions opt;
  opt.length = a.length;
  opt.max_bounces = a.max_bounces;
  const Rir r0 = render_rir(before, tx, rx, AcousticParams::from_scene(before), opt);
  const Rir r1 = render_rir(after, tx, rx, AcousticParams::from_scene(after), opt);
  fs::create_directories(a.output);
  const fs::path out(a.output);
  io::write_rir(out / "before.json", r0);
  io::write_rir(out / "after.json", r1);
  ply::write(out / "scene.ply", after.mesh);
  auto summary = [](const Rir& r) {
    return Json{{"energy", r.energy()},
                {"t60", metric_or_null([&] { return t60(r); })},
                {"c50", metric_or_null([&] { return c50(r); })},
                {"edt", metric_or_null([&] { return edt(r); })}};
  };
  Json segs = Json::array();
  for (const auto& s : after.segments) segs.push_back({{"id", s.id}, {"material", s.material}, {"faces", s.faces.size()}});
  io::write_json(out / "report.json", {{"ops", ops.size()}, {"before", summary(r0)}, {"after", summary(r1)}, {"segments", segs}});
}

// ---------------------------------------------------------------- localize

struct LocalizeArgs {
  std::string database, queries, scene, params, field, db_out, output;
  int k = kDefaultNeighbors;
  std::vector<int> grid{0, 0, 0};
  std::vector<double> grid_lo, grid_hi;
  std::vector<double> tx{1.0, 1.0, 1.5};
  int max_bounces = 4;
  double length = kDefaultRirLength;
};

void setup(CLI::App* app, Binder& b, LocalizeArgs& a) {
  b.add("--database", "database", a.database, "database blob (.bin) or JSONL of {rx, rir}");
  b.add("--queries", "queries", a.queries, "JSONL of {rir, rx (optional truth)}");
  b.add("--k", "k", a.k, "neighbours");
  b.add("--scene", "scene", a.scene, "scene JSON (needed for augmentation)");
  b.add("--grid", "grid", a.grid, "augmentation grid nx ny nz")->expected(3);
  b.add("--grid-lo", "grid_lo", a.grid_lo, "grid box lower corner (default: scene bounds inset 0.3 m)")->expected(3);
  b.add("--grid-hi", "grid_hi", a.grid_hi, "grid box upper corner")->expected(3);
  b.add("--tx", "tx", a.tx, "Tx position used by the augmentation renderer")->expected(3);
  b.add("--params", "params", a.params, "acoustic parameters JSON for ray-traced augmentation");
  b.add("--field", "field", a.field, "augment through a fitted field instead of ray tracing");
  b.add("--max-bounces", "max_bounces", a.max_bounces, "reflection order for ray-traced augmentation");
  b.add("--length", "length", a.length, "synthesized RIR length (s)");
  b.add("--db-out", "db_out", a.db_out, "write the (augmented) database blob");
  b.add("-o,--output", "output", a.output, "results CSV");
  app->footer("Features: 64 log-spaced RMS bins (dB) over 0-0.3 s of absolute time; IDW weights 1/(d + 1e-6).");
}

void run(const LocalizeArgs& a) {
  if (a.database.empty()) throw UsageError("localize: --database is required");
  RirDatabase db;
  if (fs::path(a.database).extension() == ".bin") {
    db = RirDatabase::load(a.database);
  } else {
    const auto lines = io::read_jsonl(a.database);
    for (std::size_t i = 0; i < lines.size(); ++i) {
      const std::string where = a.database + ":" + std::to_string(i + 1);
      io::check_keys(lines[i], {"tx", "rx", "rir", "onset", "name"}, where);
      db.add(io::pose_from_json(lines[i].at("rx"), where + ".rx").position, rir_entry(lines[i], a.database, where));
    }
  }
  if (a.grid.size() != 3) throw InvalidArgument("localize: --grid needs three counts");
  const std::size_t cells = static_cast<std::size_t>(std::max(0, a.grid[0])) * std::max(0, a.grid[1]) * std::max(0, a.grid[2]);
  if (cells > 0) {
    if (a.scene.empty()) throw InvalidArgument("localize: augmentation needs --scene");
    const Scene scene = load_scene(a.scene);
    Vec3 lo, hi;
    if (a.grid_lo.size() == 3 && a.grid_hi.size() == 3) {
      lo = Vec3(a.grid_lo[0], a.grid_lo[1], a.grid_lo[2]);
      hi = Vec3(a.grid_hi[0], a.grid_hi[1], a.grid_hi[2]);
    } else {
      if (scene.free_field()) throw InvalidArgument("localize: free-field scene needs --grid-lo/--grid-hi");
      const auto [blo, bhi] = scene.mesh.bounds();
      lo = blo + Vec3::Constant(0.3);
      hi = bhi - Vec3::Constant(0.3);
    }
    const auto grid = grid_positions(lo, hi, a.grid[0], a.grid[1], a.grid[2]);
    const Pose tx = make_pose(a.tx, {}, "--tx");
    RirRenderer renderer;
    std::shared_ptr<FieldModel> field;
    if (!a.field.empty()) {
      field = std::make_shared<FieldModel>(load_field(a.field));
      renderer = [&, field](const Vec3& p) { return render_field(*field, scene, Pose{p, Quat::Identity()}, 0.0); };
    } else {
      const AcousticParams params =
          a.params.empty() ? AcousticParams::from_scene(scene) : io::params_from_json(io::read_json(a.params), scene);
      RenderOptions opt;
      opt.length = a.length;
      opt.max_bounces = a.max_bounces;
      renderer = [&, params, opt](const Vec3& p) { return render_rir(scene, tx, Pose{p, Quat::Identity()}, params, opt); };
    }
    db = augment_database(db, renderer, grid);
  }
  if (!a.db_out.empty()) db.save(a.db_out);
  if (a.queries.empty()) return;
  if (a.output.empty()) throw UsageError("localize: --output is required with --queries");
  const auto lines = io::read_jsonl(a.queries);
  std::vector<std::vector<double>> rows;
  std::vector<double> errors;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string where = a.queries + ":" + std::to_string(i + 1);
    io::check_keys(lines[i], {"tx", "rx", "rir", "onset", "name"}, where);
    const Vec3 est = localize(db, rir_entry(lines[i], a.queries, where), a.k);
    std::vector<double> row{static_cast<double>(i), est.x(), est.y(), est.z()};
    if (lines[i].contains("rx")) {
      const Vec3 truth = io::pose_from_json(lines[i]["rx"], where + ".rx").position;
      const double err = (est - truth).norm();
      errors.push_back(err);
      row.insert(row.end(), {truth.x(), truth.y(), truth.z(), err});
    } else {
      row.insert(row.end(), {kUnset, kUnset, kUnset, kUnset});
    }
    rows.push_back(row);
  }
  io::write_csv(a.output, {"index", "x", "y", "z", "true_x", "true_y", "true_z", "error"}, rows);
  if (!errors.empty()) {
    std::sort(errors.begin(), errors.end());
    const std::size_t n = errors.size();
    const double median = n % 2 ? errors[n / 2] : 0.5 * (errors[n / 2 - 1] + errors[n / 2]);
    std::cerr << "median localization error: " << format_double(median) << " m over " << n << " queries\n";
  }
}

// ---------------------------------------------------------------- bench

struct BenchArgs {
  std::string scene, output;
  int repeats = 3;
  int max_bounces = 8;
  std::size_t rays = 1024;
};

void setup(CLI::App* app, Binder& b, BenchArgs& a) {
  b.add("--scene", "scene", a.scene, "scene JSON (default: 4x5x3 m shoebox, 8 subdivisions)");
  b.add("--repeats", "repeats", a.repeats, "timing repeats (minimum reported)");
  b.add("--max-bounces", "max_bounces", a.max_bounces, "ray-trace reflection order");
  b.add("--rays", "rays", a.rays, "field ray count K");
  b.add("-o,--output", "output", a.output, "optional JSON report (stdout otherwise)");
  app->footer("Timings are wall-clock and therefore not part of the determinism contract.");
}

void run(const BenchArgs& a) {
  if (a.repeats < 1) throw InvalidArgument("bench: --repeats must be at least 1");
  Scene scene;
  if (a.scene.empty()) {
    ShoeboxOptions opt;
    opt.subdivisions = 8;
    scene = make_shoebox(opt);
  } else {
    scene = load_scene(a.scene);
  }
  const auto [lo, hi] = scene.mesh.bounds();
  const Pose tx{lo + 0.3 * (hi - lo), Quat::Identity()};
  const Pose rx{lo + 0.7 * (hi - lo), Quat::Identity()};
  using clock = std::chrono::steady_clock;
  auto time_it = [&](const std::function<void()>& fn) {
    double best = std::numeric_limits<double>::infinity();
    for (int r = 0; r < a.repeats; ++r) {
      const auto t0 = clock::now();
      fn();
      best = std::min(best, std::chrono::duration<double>(clock::now() - t0).count());
    }
    return best;
  };
  const AcousticParams params = AcousticParams::from_scene(scene);
  RenderOptions ropt;
  ropt.max_bounces = a.max_bounces;
  const double t_trace = time_it([&] { render_rir(scene, tx, rx, params, ropt); });

  FieldLayout layout;
  layout.rays = a.rays;
  FieldModel field = make_field(scene, tx, layout);
  std::fill(field.emission.begin(), field.emission.end(), 1e-3);
  const double t_field = time_it([&] { render_field(field, scene, rx); });

  const auto dirs = sphere_directions(100000);
  const double t_rays = time_it([&] {
    for (const auto& d : dirs) ray_cast_first_hit(*scene.bvh, rx.position, d);
  });

  Waveform stream;
  stream.samples.assign(samples_for(10.0, kSampleRate), 0.0);
  const auto chirp = gen_chirp(kSyncChirp);
  for (double t = 0.5; t + 0.2 < 10.0; t += 1.0) {
    const std::size_t s = samples_for(t, kSampleRate);
    for (std::size_t i = 0; i < chirp.samples.size(); ++i) stream.samples[s + i] += chirp.samples[i];
  }
  const std::vector<Waveform> chunks{stream};
  const double t_detect = time_it([&] { detect_chirp_stream(chunks, kSyncChirp); });

  const Json report = {{"threads", thread_count()},
                       {"raytrace_render_s", t_trace},
                       {"field_render_s", t_field},
                       {"field_rays", a.rays},
                       {"field_over_raytrace", t_field / t_trace},
                       {"ray_casts_per_s", static_cast<double>(dirs.size()) / t_rays},
                       {"detector_realtime_factor", 10.0 / t_detect}};
  if (a.output.empty()) {
    std::cout << report.dump(2) << '\n';
  } else {
    io::write_json(a.output, report);
  }
}

// ---------------------------------------------------------------- wiring

struct Command {
  CLI::App* app = nullptr;
  std::unique_ptr<Binder> binder;
  std::function<void()> run;
};

template <class Args>
void add_command(CLI::App& root, std::vector<Command>& cmds, const std::string& name, const std::string& desc,
                 Args& args) {
  Command c;
  c.app = root.add_subcommand(name, desc);
  c.binder = std::make_unique<Binder>(c.app);
  setup(c.app, *c.binder, args);
  c.run = [&args] { run(args); };
  cmds.push_back(std::move(c));
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App root{"Acoustic room twin: handshake ToF, RIR rendering, material and field fitting", "roomtwin"};
  root.require_subcommand(1);
  unsigned threads = 0;
  root.add_option("--threads", threads, "worker threads (0 = available cores)")->capture_default_str();

  ChirpArgs chirp;
  SimulateArgs simulate;
  HandshakeArgs handshake;
  ExtractArgs extract;
  RenderArgs render;
  FitMaterialsArgs fit_materials_args;
  FitFieldArgs fit_field_args;
  MetricsArgs metrics;
  EditArgs edit;
  LocalizeArgs localize_args;
  BenchArgs bench;
  std::vector<Command> cmds;
  add_command(root, cmds, "chirp", "generate a linear chirp WAV", chirp);
  add_command(root, cmds, "simulate", "simulate a two-device handshake session", simulate);
  add_command(root, cmds, "handshake", "run the ToF protocol on simulated recordings", handshake);
  add_command(root, cmds, "extract", "extract an RIR from a recording", extract);
  add_command(root, cmds, "render", "render RIRs by ray tracing or a fitted field", render);
  add_command(root, cmds, "fit-materials", "estimate reflection spectra and gain patterns", fit_materials_args);
  add_command(root, cmds, "fit-field", "train a surface emitter field", fit_field_args);
  add_command(root, cmds, "metrics", "compare RIRs", metrics);
  add_command(root, cmds, "edit", "apply an edit script and re-render", edit);
  add_command(root, cmds, "localize", "fingerprint localization with optional augmentation", localize_args);
  add_command(root, cmds, "bench", "timing report", bench);

  try {
    root.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = root.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    set_thread_count(threads);
    for (auto& c : cmds) {
      if (c.app->parsed()) {
        c.binder->resolve(c.app->get_name());
        c.run();
      }
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

int cli_main(const std::vector<std::string>& args) {
  std::vector<std::string> storage;
  storage.reserve(args.size() + 1);
  storage.push_back("roomtwin");
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : storage) argv.push_back(s.data());
  argv.push_back(nullptr);
  return cli_main(static_cast<int>(storage.size()), argv.data());
}

}  // namespace roomtwin
