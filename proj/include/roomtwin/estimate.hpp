#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "roomtwin/raytrace.hpp"

namespace roomtwin {

struct TrainSample {
  Pose tx;
  Pose rx;
  Rir measured;  // onset = absolute delay of tap 0
};

// Learnable parameters: per-segment logits of R (segment order x bands) and
// raw SH coefficients of both gain patterns.
struct EstimateParams {
  int degree = kDefaultShDegree;
  std::vector<std::array<double, kNumBands>> raw_r;
  std::vector<double> raw_tx;
  std::vector<double> raw_rx;

  // R = 0.5 everywhere, unit isotropic gains.
  static EstimateParams initial(std::size_t segments, int degree = kDefaultShDegree);
  // Inverse of to_acoustic; R values are clamped into (0, 1) first.
  static EstimateParams from_acoustic(const AcousticParams& acoustic);
  AcousticParams to_acoustic() const;

  std::size_t size() const;
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> values);
  std::size_t r_index(std::size_t segment, std::size_t band) const { return segment * kNumBands + band; }
  std::size_t tx_index(std::size_t i) const { return raw_r.size() * kNumBands + i; }
  std::size_t rx_index(std::size_t i) const { return tx_index(raw_tx.size()) + i; }
};

double logit(double p);

// Zero-phase brick-wall band limit applied on an fft_size grid; returns the
// first x.size() samples.
std::vector<double> band_limit(std::span<const double> x, std::size_t fft_size, double sample_rate, double f_lo,
                               double f_hi);

// Mean squared error over taps; throws InvalidArgument on length or sample
// rate mismatch.
double rir_loss(const Rir& rendered, const Rir& measured);
double batch_loss(std::span<const Rir> rendered, std::span<const Rir> measured);

struct LossConfig {
  int max_bounces = 8;
  double f_lo = 50.0;
  double f_hi = 9000.0;
  // Optional [start, end) seconds after tap 0; the loss averages over gated
  // taps only.
  std::optional<std::pair<double, double>> gate;
};

// Paths and band-limited targets cached once per dataset (geometry is fixed).
// All measured RIRs must share one length and sample rate.
class InverseProblem {
 public:
  InverseProblem(const Scene& scene, std::vector<TrainSample> samples, LossConfig config = {});

  double loss(const EstimateParams& params) const;
  // Gradient w.r.t. every entry of params.flatten().
  double loss_and_grad(const EstimateParams& params, std::vector<double>& grad) const;
  // Band-limited rendered RIR for sample i (same taps and onset as the target).
  Rir render(const EstimateParams& params, std::size_t i) const;

  std::size_t sample_count() const { return samples_.size(); }
  std::size_t segment_count() const { return segments_; }
  const std::vector<SpecularPath>& paths(std::size_t i) const { return cache_[i].paths; }
  const FrequencyGrid& grid() const { return grid_; }

 private:
  struct PathCache {
    double delay = 0.0;  // samples relative to the target's onset
    double inv_length = 0.0;
    std::vector<int> segments;  // segment order indices
    Vec3 dir_tx, dir_rx;        // gain lookup directions in device frames
  };
  struct SampleCache {
    std::vector<SpecularPath> paths;
    std::vector<PathCache> items;
    std::vector<double> target;  // band-limited measured taps
  };

  static constexpr std::size_t kAll = static_cast<std::size_t>(-1);
  double evaluate(const EstimateParams& params, std::vector<double>* grad, std::size_t only,
                  std::vector<double>* rendered = nullptr) const;

  std::size_t segments_ = 0;
  std::vector<TrainSample> samples_;
  LossConfig config_;
  FrequencyGrid grid_;
  std::size_t taps_ = 0;
  std::size_t k_lo_ = 0, k_hi_ = 0;  // inclusive pass band bins
  std::vector<double> gate_;          // per-tap weight
  double gate_count_ = 0.0;
  std::vector<BandWeights> weights_;  // per pass-band bin
  std::vector<SampleCache> cache_;
};

struct FitConfig {
  double learning_rate = 0.02;
  int iterations = 2000;
  int patience = 200;
  double tolerance = 1e-6;  // relative improvement counted as progress
  // MSE values on RIR taps are small, so the usual 1e-8 would swamp the
  // normalised step.
  double adam_epsilon = 1e-12;
  bool train_gains = true;
  bool freeze_tx_dc = true;  // gauge fix
  LossConfig loss;
};

struct FitResult {
  EstimateParams params;         // best-loss parameters
  std::vector<double> loss;      // per iteration, before the update
  std::vector<double> best_loss;  // running minimum
  int iterations = 0;
};

// Adam from `init` (default EstimateParams::initial). Throws Error when the
// loss becomes NaN.
FitResult fit_materials(const Scene& scene, std::vector<TrainSample> samples, const FitConfig& config = {},
                        std::optional<EstimateParams> init = std::nullopt);

}  // namespace roomtwin
