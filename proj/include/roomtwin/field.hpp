#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "roomtwin/estimate.hpp"
#include "roomtwin/scene.hpp"
#include "roomtwin/sh.hpp"

namespace roomtwin {

// Surface emitter field conditioned on one Tx pose. Every mesh face belongs
// to one patch; each patch re-emits a tabulated waveform (direction
// independent) whose bin j is absolute time j / sample_rate after the Tx
// emission.
struct FieldModel {
  static constexpr int kVersion = 1;

  Pose tx;
  double sample_rate = kSampleRate;
  double speed_of_sound = kSpeedOfSound;
  std::size_t taps = 0;            // T, also the rendered RIR length
  std::size_t patches = 0;         // P
  std::vector<int> face_patch;     // per mesh face
  std::vector<Vec3> directions;    // K world-frame ray directions
  std::vector<double> emission;    // P x T, row-major
  GainPattern rx_gain = GainPattern::isotropic();

  std::span<double> patch(std::size_t p) { return {emission.data() + p * taps, taps}; }
  std::span<const double> patch(std::size_t p) const { return {emission.data() + p * taps, taps}; }
  // Throws InvalidArgument when the model does not fit the scene's mesh or
  // holds non-finite emissions.
  void validate(const Scene& scene) const;
};

// Area-balanced recursive bisection of the faces into min(patches, faces)
// clusters along the longest centroid axis. Returns a patch id per face.
std::vector<int> cluster_patches(const TriMesh& mesh, std::size_t patches);

struct FieldLayout {
  std::size_t patches = 256;
  std::size_t rays = 512;
  double length = kDefaultRirLength;
  int gain_degree = kDefaultShDegree;
  std::optional<std::vector<int>> face_patch;  // overrides clustering
};

// Zero emissions, isotropic unit Rx gain.
FieldModel make_field(const Scene& scene, const Pose& tx, const FieldLayout& layout = {});

struct FieldRenderStats {
  std::size_t rays = 0;
  std::size_t hits = 0;
  std::size_t emitter_evaluations = 0;
};

// h[n] = (1/K) sum over hitting rays of G(w_k) s_p(t_n - d_k/c) / (t_n c)
// with t_n = origin + n / fs; taps with t_n <= 0 are zero. Throws
// InvalidArgument when rx lies outside the scene bounds.
Rir render_field(const FieldModel& model, const Scene& scene, const Pose& rx, double origin = 0.0,
                 FieldRenderStats* stats = nullptr);

struct FieldTrainConfig {
  FieldLayout layout;
  int epochs = 40;
  std::size_t batch = 8;
  double learning_rate = 0.01;  // cosine-decayed to zero
  double init_scale = 0.01;     // std of the initial emissions
  double stft_weight = 1.0;
  double envelope_weight = 0.5;
  bool train_gain = true;
  std::uint64_t seed = 1;
};

// Training objective for one sample: weighted multi-scale STFT plus
// envelope L1 between the rendered and measured taps.
double field_objective(const FieldModel& model, const Scene& scene, const TrainSample& sample,
                       const FieldTrainConfig& config = {});

struct FieldFitResult {
  FieldModel model;
  std::vector<double> epoch_loss;  // mean objective over each epoch's batches
};

// Adam over emissions and Rx gain coefficients. Requires at least 10
// samples sharing one Tx pose and one RIR length; each sample's onset is the
// absolute time of its tap 0.
FieldFitResult fit_field(const Scene& scene, const std::vector<TrainSample>& samples,
                         const FieldTrainConfig& config = {});

// Binary blob: 8-byte magic, u32 format version, u64 header length, JSON
// header, then P x T little-endian float64 emissions.
void save_field(const FieldModel& model, const std::filesystem::path& path);
FieldModel load_field(const std::filesystem::path& path);

}  // namespace roomtwin
