#include "roomtwin/field.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include "roomtwin/dsp.hpp"
#include "roomtwin/parallel.hpp"
#include "roomtwin/serialize.hpp"

namespace roomtwin {

namespace {

constexpr char kMagic[8] = {'R', 'T', 'F', 'I', 'E', 'L', 'D', '\0'};
constexpr std::size_t kBlock = 1024;

void bisect(const TriMesh& mesh, const std::vector<Vec3>& centroids, std::vector<int>& faces, std::size_t first,
            std::size_t count, std::size_t parts, int& next, std::vector<int>& out) {
  if (parts <= 1 || count <= 1) {
    for (std::size_t i = first; i < first + count; ++i) out[faces[i]] = next;
    ++next;
    return;
  }
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (std::size_t i = first; i < first + count; ++i) {
    lo = lo.cwiseMin(centroids[faces[i]]);
    hi = hi.cwiseMax(centroids[faces[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  auto begin = faces.begin() + static_cast<std::ptrdiff_t>(first);
  std::sort(begin, begin + static_cast<std::ptrdiff_t>(count), [&](int a, int b) {
    const double ca = centroids[a][axis], cb = centroids[b][axis];
    return ca != cb ? ca < cb : a < b;
  });
  const std::size_t left_parts = parts / 2;
  const std::size_t right_parts = parts - left_parts;
  double total = 0.0;
  for (std::size_t i = first; i < first + count; ++i) total += mesh.area(faces[i]);
  const double target = total * static_cast<double>(left_parts) / static_cast<double>(parts);
  std::size_t split = 0;
  double acc = 0.0;
  while (split < count && acc + 0.5 * mesh.area(faces[first + split]) < target) {
    acc += mesh.area(faces[first + split]);
    ++split;
  }
  split = std::clamp(split, left_parts, count - right_parts);
  bisect(mesh, centroids, faces, first, split, left_parts, next, out);
  bisect(mesh, centroids, faces, first + split, count - split, right_parts, next, out);
}

struct HitRay {
  std::size_t ray = 0;
  int patch = 0;
  double delay = 0.0;  // samples, relative to the output origin
  Vec3 local_dir;
};

std::vector<HitRay> trace_hits(const FieldModel& model, const Scene& scene, const Pose& rx, double origin) {
  if (!scene.contains(rx.position)) throw InvalidArgument("render_field: Rx lies outside the scene bounds");
  rx.validate();
  std::vector<std::optional<HitRay>> slots(model.directions.size());
  if (scene.bvh) {
    parallel_for(model.directions.size(), [&](std::size_t k) {
      const auto hit = ray_cast_first_hit(*scene.bvh, rx.position, model.directions[k]);
      if (!hit) return;
      HitRay h;
      h.ray = k;
      h.patch = model.face_patch[hit->face];
      h.delay = (hit->distance / model.speed_of_sound - origin) * model.sample_rate;
      h.local_dir = rx.to_local(model.directions[k]);
      slots[k] = h;
    });
  }
  std::vector<HitRay> hits;
  for (auto& s : slots) {
    if (s) hits.push_back(*s);
  }
  return hits;
}

// 1 / (t_n c) per output tap, zero where t_n <= 0.
std::vector<double> decay_factors(const FieldModel& model, double origin) {
  std::vector<double> f(model.taps, 0.0);
  for (std::size_t n = 0; n < model.taps; ++n) {
    const double t = origin + static_cast<double>(n) / model.sample_rate;
    f[n] = t > 0.0 ? 1.0 / (t * model.speed_of_sound) : 0.0;
  }
  return f;
}

// Two-tap fractional shift: y[n] += w * s(n - delay) for n in [n0, n1).
void add_shifted(std::span<const double> s, double w, double delay, std::size_t n0, std::size_t n1, double* y) {
  const double m = std::floor(delay);
  const double a = delay - m;
  const long shift = static_cast<long>(m);
  const long T = static_cast<long>(s.size());
  for (std::size_t n = n0; n < n1; ++n) {
    const long j = static_cast<long>(n) - shift;  // weight 1 - a
    double v = 0.0;
    if (j >= 0 && j < T) v += (1.0 - a) * s[j];
    if (j - 1 >= 0 && j - 1 < T) v += a * s[j - 1];
    y[n - n0] += w * v;
  }
}

std::vector<double> render_core(const FieldModel& model, const std::vector<HitRay>& hits,
                                const std::vector<double>& weights, const std::vector<double>& decay) {
  std::vector<double> out(model.taps, 0.0);
  const std::size_t blocks = (model.taps + kBlock - 1) / kBlock;
  parallel_for(blocks, [&](std::size_t b) {
    const std::size_t n0 = b * kBlock, n1 = std::min(model.taps, n0 + kBlock);
    for (std::size_t h = 0; h < hits.size(); ++h) {
      add_shifted(model.patch(hits[h].patch), weights[h], hits[h].delay, n0, n1, out.data() + n0);
    }
    for (std::size_t n = n0; n < n1; ++n) out[n] *= decay[n];
  });
  return out;
}

void check_layout(const Scene& scene, const std::vector<int>& face_patch, std::size_t patches) {
  if (face_patch.size() != scene.mesh.size()) throw InvalidArgument("field: patch map size differs from face count");
  for (int p : face_patch) {
    if (p < 0 || static_cast<std::size_t>(p) >= patches) throw InvalidArgument("field: patch id out of range");
  }
}

}  // namespace

void FieldModel::validate(const Scene& scene) const {
  check_layout(scene, face_patch, patches);
  if (emission.size() != patches * taps) throw InvalidArgument("field: emission table has the wrong size");
  for (double v : emission) {
    if (!std::isfinite(v)) throw InvalidArgument("field: non-finite emission value");
  }
  if (!(sample_rate > 0.0) || !(speed_of_sound > 0.0)) throw InvalidArgument("field: rates must be positive");
  if (rx_gain.coeffs.size() != sh_count(rx_gain.degree)) throw InvalidArgument("field: bad Rx gain coefficients");
}

std::vector<int> cluster_patches(const TriMesh& mesh, std::size_t patches) {
  if (patches == 0) throw InvalidArgument("cluster_patches: patch count must be positive");
  std::vector<int> out(mesh.size(), 0);
  if (mesh.empty()) return out;
  std::vector<Vec3> centroids(mesh.size());
  for (std::size_t f = 0; f < mesh.size(); ++f) centroids[f] = mesh.centroid(f);
  std::vector<int> faces(mesh.size());
  std::iota(faces.begin(), faces.end(), 0);
  int next = 0;
  bisect(mesh, centroids, faces, 0, faces.size(), std::min(patches, mesh.size()), next, out);
  return out;
}

FieldModel make_field(const Scene& scene, const Pose& tx, const FieldLayout& layout) {
  tx.validate();
  if (layout.rays == 0) throw InvalidArgument("field: ray count must be positive");
  FieldModel m;
  m.tx = tx;
  m.speed_of_sound = scene.speed_of_sound;
  m.taps = samples_for(layout.length, m.sample_rate);
  if (m.taps == 0) throw InvalidArgument("field: RIR length must be positive");
  if (layout.face_patch) {
    m.face_patch = *layout.face_patch;
    int max_id = -1;
    for (int p : m.face_patch) max_id = std::max(max_id, p);
    m.patches = static_cast<std::size_t>(max_id + 1);
  } else {
    m.face_patch = cluster_patches(scene.mesh, layout.patches);
    m.patches = scene.mesh.empty() ? 0 : std::min(layout.patches, scene.mesh.size());
  }
  check_layout(scene, m.face_patch, m.patches);
  m.directions = sphere_directions(layout.rays);
  m.emission.assign(m.patches * m.taps, 0.0);
  m.rx_gain = GainPattern::isotropic(1.0, layout.gain_degree);
  return m;
}

Rir render_field(const FieldModel& model, const Scene& scene, const Pose& rx, double origin,
                 FieldRenderStats* stats) {
  model.validate(scene);
  const auto hits = trace_hits(model, scene, rx, origin);
  const double inv_k = 1.0 / static_cast<double>(model.directions.size());
  std::vector<double> weights(hits.size());
  for (std::size_t h = 0; h < hits.size(); ++h) weights[h] = model.rx_gain.eval(hits[h].local_dir) * inv_k;
  if (stats) {
    stats->rays = model.directions.size();
    stats->hits = hits.size();
    // One emission lookup per hitting ray; misses never touch the table.
    stats->emitter_evaluations = hits.size();
  }
  Rir rir;
  rir.sample_rate = model.sample_rate;
  rir.onset = origin;
  rir.taps = render_core(model, hits, weights, decay_factors(model, origin));
  return rir;
}

namespace {

double objective_grad(std::span<const double> x, std::span<const double> target, const FieldTrainConfig& config,
                      std::vector<double>* grad) {
  std::vector<double> g1(x.size()), g2(x.size());
  const double a = dsp::ms_stft_loss_grad(x, target, g1);
  const double b = dsp::envelope_loss_grad(x, target, g2);
  if (grad) {
    grad->resize(x.size());
    for (std::size_t n = 0; n < x.size(); ++n) (*grad)[n] = config.stft_weight * g1[n] + config.envelope_weight * g2[n];
  }
  return config.stft_weight * a + config.envelope_weight * b;
}

}  // namespace

double field_objective(const FieldModel& model, const Scene& scene, const TrainSample& sample,
                       const FieldTrainConfig& config) {
  const auto rir = render_field(model, scene, sample.rx, sample.measured.onset);
  if (sample.measured.taps.size() != rir.taps.size()) throw InvalidArgument("field: RIR length mismatch");
  return objective_grad(rir.taps, sample.measured.taps, config, nullptr);
}

FieldFitResult fit_field(const Scene& scene, const std::vector<TrainSample>& samples,
                         const FieldTrainConfig& config) {
  if (samples.size() < 10) throw InvalidArgument("fit-field: at least 10 training samples are required");
  if (config.batch == 0 || config.epochs < 0 || !(config.learning_rate > 0.0)) {
    throw InvalidArgument("fit-field: batch and learning rate must be positive");
  }
  const Pose& tx = samples.front().tx;
  const std::size_t taps = samples.front().measured.taps.size();
  for (const auto& s : samples) {
    if ((s.tx.position - tx.position).norm() > 1e-9 || s.tx.orientation.angularDistance(tx.orientation) > 1e-9) {
      throw InvalidArgument("fit-field: all samples must share one Tx pose");
    }
    if (s.measured.taps.size() != taps || s.measured.sample_rate != kSampleRate) {
      throw InvalidArgument("fit-field: measured RIRs must share one length and the working sample rate");
    }
  }
  FieldLayout layout = config.layout;
  layout.length = static_cast<double>(taps) / kSampleRate;
  FieldModel model = make_field(scene, tx, layout);
  model.taps = taps;
  model.emission.assign(model.patches * taps, 0.0);

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, config.init_scale);
  for (double& v : model.emission) v = normal(rng);

  // Geometry is fixed: cache hits and decay factors per sample.
  struct Cache {
    std::vector<HitRay> hits;
    std::vector<double> decay;
    std::vector<std::vector<std::size_t>> by_patch;
  };
  std::vector<Cache> cache(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    cache[i].hits = trace_hits(model, scene, samples[i].rx, samples[i].measured.onset);
    cache[i].decay = decay_factors(model, samples[i].measured.onset);
    cache[i].by_patch.assign(model.patches, {});
    for (std::size_t h = 0; h < cache[i].hits.size(); ++h) {
      cache[i].by_patch[cache[i].hits[h].patch].push_back(h);
    }
  }

  const std::size_t nsh = model.rx_gain.coeffs.size();
  const std::size_t nparams = model.emission.size() + nsh;
  std::vector<double> m(nparams, 0.0), v(nparams, 0.0), grad(nparams, 0.0);
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-12;
  const double inv_k = 1.0 / static_cast<double>(model.directions.size());
  const std::size_t steps_per_epoch = (samples.size() + config.batch - 1) / config.batch;
  const double total_steps = static_cast<double>(steps_per_epoch) * std::max(1, config.epochs);
  std::size_t step = 0;

  FieldFitResult result;
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t first = 0; first < order.size(); first += config.batch) {
      const std::size_t last = std::min(order.size(), first + config.batch);
      const double bsize = static_cast<double>(last - first);
      std::fill(grad.begin(), grad.end(), 0.0);
      double batch_loss = 0.0;
      for (std::size_t b = first; b < last; ++b) {
        const auto& c = cache[order[b]];
        const auto& target = samples[order[b]].measured.taps;
        std::vector<double> weights(c.hits.size());
        std::vector<std::vector<double>> dgain(c.hits.size(), std::vector<double>(nsh));
        for (std::size_t h = 0; h < c.hits.size(); ++h) {
          weights[h] = model.rx_gain.eval_with_grad(c.hits[h].local_dir, dgain[h]) * inv_k;
        }
        const auto x = render_core(model, c.hits, weights, c.decay);
        std::vector<double> gx;
        batch_loss += objective_grad(x, target, config, &gx);
        // q = dL/dy scaled by the decay factor, i.e. dL/d(pre-decay sum).
        std::vector<double> q(taps);
        for (std::size_t n = 0; n < taps; ++n) q[n] = gx[n] * c.decay[n] / bsize;
        std::vector<double> dweight(c.hits.size(), 0.0);
        parallel_for(model.patches, [&](std::size_t p) {
          if (c.by_patch[p].empty()) return;
          const auto s = model.patch(p);
          double* gs = grad.data() + p * taps;
          for (std::size_t h : c.by_patch[p]) {
            const double delay = c.hits[h].delay;
            const double fl = std::floor(delay);
            const double a = delay - fl;
            const long shift = static_cast<long>(fl);
            const long T = static_cast<long>(taps);
            double dw = 0.0;
            for (long j = 0; j < T; ++j) {
              // s[j] reaches taps n = j + shift (weight 1 - a) and n + 1 (weight a).
              const long n = j + shift;
              double adj = 0.0;
              if (n >= 0 && n < T) adj += (1.0 - a) * q[n];
              if (n + 1 >= 0 && n + 1 < T) adj += a * q[n + 1];
              gs[j] += weights[h] * adj;
              dw += s[j] * adj;
            }
            dweight[h] = dw;
          }
        });
        if (config.train_gain) {
          for (std::size_t h = 0; h < c.hits.size(); ++h) {
            for (std::size_t i = 0; i < nsh; ++i) grad[model.emission.size() + i] += dweight[h] * inv_k * dgain[h][i];
          }
        }
      }
      batch_loss /= bsize;
      epoch_loss += batch_loss;
      if (!std::isfinite(batch_loss)) throw Error("fit-field: loss became non-finite");

      const double lr = 0.5 * config.learning_rate * (1.0 + std::cos(kPi * static_cast<double>(step) / total_steps));
      ++step;
      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      auto update = [&](std::size_t i, double& value) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
        value -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
      };
      for (std::size_t i = 0; i < model.emission.size(); ++i) update(i, model.emission[i]);
      for (std::size_t i = 0; i < nsh; ++i) update(model.emission.size() + i, model.rx_gain.coeffs[i]);
    }
    result.epoch_loss.push_back(epoch_loss / static_cast<double>(steps_per_epoch));
  }
  result.model = std::move(model);
  return result;
}

void save_field(const FieldModel& model, const std::filesystem::path& path) {
  io::Json header = {{"version", FieldModel::kVersion},
                     {"sample_rate", model.sample_rate},
                     {"speed_of_sound", model.speed_of_sound},
                     {"taps", model.taps},
                     {"patches", model.patches},
                     {"rays", model.directions.size()},
                     {"tx", io::to_json(model.tx)},
                     {"rx_gain", io::to_json(model.rx_gain)},
                     {"face_patch", model.face_patch}};
  io::Json dirs = io::Json::array();
  for (const auto& d : model.directions) dirs.push_back(io::to_json(d));
  header["directions"] = dirs;
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  auto put = [&](const void* p, std::size_t n) { out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); };
  static_assert(std::endian::native == std::endian::little, "field blobs are written little-endian");
  const std::uint32_t version = FieldModel::kVersion;
  const std::uint64_t len = text.size();
  put(kMagic, sizeof(kMagic));
  put(&version, sizeof(version));
  put(&len, sizeof(len));
  put(text.data(), text.size());
  put(model.emission.data(), model.emission.size() * sizeof(double));
  if (!out) throw Error("failed writing " + path.string());
}

FieldModel load_field(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  auto get = [&](void* p, std::size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in) throw FormatError(path.string() + ": truncated field blob");
  };
  char magic[8];
  get(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw FormatError(path.string() + ": not a field blob");
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  get(&version, sizeof(version));
  if (version != FieldModel::kVersion) {
    throw FormatError(path.string() + ": unsupported field format version " + std::to_string(version));
  }
  get(&len, sizeof(len));
  if (len > (1u << 30)) throw FormatError(path.string() + ": header too large");
  std::string text(len, '\0');
  get(text.data(), len);
  io::Json h;
  try {
    h = io::Json::parse(text);
  } catch (const io::Json::exception& e) {
    throw FormatError(path.string() + ": bad header: " + e.what());
  }
  FieldModel m;
  try {
    m.sample_rate = h.at("sample_rate").get<double>();
    m.speed_of_sound = h.at("speed_of_sound").get<double>();
    m.taps = h.at("taps").get<std::size_t>();
    m.patches = h.at("patches").get<std::size_t>();
    m.tx = io::pose_from_json(h.at("tx"), "field.tx");
    m.rx_gain = io::gain_from_json(h.at("rx_gain"), "field.rx_gain");
    m.face_patch = h.at("face_patch").get<std::vector<int>>();
    for (const auto& d : h.at("directions")) m.directions.push_back(io::vec3_from_json(d, "field.directions"));
    if (m.directions.size() != h.at("rays").get<std::size_t>()) throw FormatError("ray count mismatch");
  } catch (const io::Json::exception& e) {
    throw FormatError(path.string() + ": bad header: " + e.what());
  }
  if (m.patches > 0 && m.taps > (std::size_t{1} << 40) / m.patches) throw FormatError(path.string() + ": table too large");
  m.emission.resize(m.patches * m.taps);
  get(m.emission.data(), m.emission.size() * sizeof(double));
  return m;
}

}  // namespace roomtwin
