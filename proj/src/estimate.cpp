#include "roomtwin/estimate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "roomtwin/fft.hpp"
#include "roomtwin/parallel.hpp"

namespace roomtwin {

using Complex = std::complex<double>;

namespace {
constexpr double kMinReflectance = 1e-3;
}

double logit(double p) { return std::log(p / (1.0 - p)); }

EstimateParams EstimateParams::initial(std::size_t segments, int degree) {
  EstimateParams p;
  p.degree = degree;
  p.raw_r.assign(segments, std::array<double, kNumBands>{});
  p.raw_tx = GainPattern::isotropic(1.0, degree).coeffs;
  p.raw_rx = p.raw_tx;
  return p;
}

EstimateParams EstimateParams::from_acoustic(const AcousticParams& acoustic) {
  if (acoustic.tx.degree != acoustic.rx.degree) {
    throw InvalidArgument("estimate: Tx and Rx gain patterns must share one SH degree");
  }
  EstimateParams p;
  p.degree = acoustic.tx.degree;
  for (const auto& m : acoustic.materials) {
    std::array<double, kNumBands> raw{};
    for (std::size_t b = 0; b < kNumBands; ++b) {
      raw[b] = logit(std::clamp(m.R[b], kMinReflectance, 1.0 - kMinReflectance));
    }
    p.raw_r.push_back(raw);
  }
  p.raw_tx = acoustic.tx.coeffs;
  p.raw_rx = acoustic.rx.coeffs;
  return p;
}

AcousticParams EstimateParams::to_acoustic() const {
  AcousticParams a;
  for (const auto& raw : raw_r) {
    MaterialSpectrum m;
    for (std::size_t b = 0; b < kNumBands; ++b) m.R[b] = sigmoid(raw[b]);
    a.materials.push_back(m);
  }
  a.tx = GainPattern{degree, raw_tx};
  a.rx = GainPattern{degree, raw_rx};
  return a;
}

std::size_t EstimateParams::size() const { return raw_r.size() * kNumBands + raw_tx.size() + raw_rx.size(); }

std::vector<double> EstimateParams::flatten() const {
  std::vector<double> out;
  out.reserve(size());
  for (const auto& raw : raw_r) out.insert(out.end(), raw.begin(), raw.end());
  out.insert(out.end(), raw_tx.begin(), raw_tx.end());
  out.insert(out.end(), raw_rx.begin(), raw_rx.end());
  return out;
}

void EstimateParams::unflatten(std::span<const double> values) {
  if (values.size() != size()) throw InvalidArgument("estimate: parameter vector has the wrong size");
  std::size_t i = 0;
  for (auto& raw : raw_r) {
    for (auto& v : raw) v = values[i++];
  }
  for (auto& v : raw_tx) v = values[i++];
  for (auto& v : raw_rx) v = values[i++];
}

std::vector<double> band_limit(std::span<const double> x, std::size_t fft_size, double sample_rate, double f_lo,
                               double f_hi) {
  if (fft_size < x.size()) throw InvalidArgument("band_limit: fft size shorter than the signal");
  auto spec = fft::rfft(x, fft_size);
  for (std::size_t k = 0; k < spec.size(); ++k) {
    const double f = static_cast<double>(k) * sample_rate / static_cast<double>(fft_size);
    if (f < f_lo || f > f_hi) spec[k] = Complex{};
  }
  auto y = fft::irfft(spec, fft_size);
  y.resize(x.size());
  return y;
}

double rir_loss(const Rir& rendered, const Rir& measured) {
  if (rendered.taps.size() != measured.taps.size() || rendered.taps.empty()) {
    throw InvalidArgument("rir_loss: RIR lengths differ or are empty");
  }
  if (rendered.sample_rate != measured.sample_rate) throw InvalidArgument("rir_loss: sample rates differ");
  double acc = 0.0;
  for (std::size_t n = 0; n < rendered.taps.size(); ++n) {
    const double d = rendered.taps[n] - measured.taps[n];
    acc += d * d;
  }
  return acc / static_cast<double>(rendered.taps.size());
}

double batch_loss(std::span<const Rir> rendered, std::span<const Rir> measured) {
  if (rendered.size() != measured.size() || rendered.empty()) {
    throw InvalidArgument("batch_loss: batch sizes differ or are empty");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < rendered.size(); ++i) acc += rir_loss(rendered[i], measured[i]);
  return acc / static_cast<double>(rendered.size());
}

InverseProblem::InverseProblem(const Scene& scene, std::vector<TrainSample> samples, LossConfig config)
    : segments_(scene.segments.size()), samples_(std::move(samples)), config_(config) {
  if (samples_.empty()) throw InvalidArgument("estimate: empty training set");
  if (!(config_.f_lo >= 0.0) || !(config_.f_hi > config_.f_lo)) {
    throw InvalidArgument("estimate: band limits must satisfy 0 <= f_lo < f_hi");
  }
  taps_ = samples_.front().measured.taps.size();
  for (const auto& s : samples_) {
    if (s.measured.taps.size() != taps_ || taps_ == 0) {
      throw InvalidArgument("estimate: all measured RIRs must share one non-zero length");
    }
    if (s.measured.sample_rate != kSampleRate) {
      throw InvalidArgument("estimate: measured RIRs must use the renderer sample rate");
    }
    s.tx.validate();
    s.rx.validate();
  }
  grid_ = FrequencyGrid::for_length(taps_, kSampleRate);
  const double df = kSampleRate / static_cast<double>(grid_.fft_size);
  k_lo_ = static_cast<std::size_t>(std::ceil(config_.f_lo / df - 1e-9));
  k_hi_ = std::min(grid_.bins() - 1, static_cast<std::size_t>(std::floor(config_.f_hi / df + 1e-9)));
  if (k_lo_ > k_hi_) throw InvalidArgument("estimate: pass band contains no frequency bins");
  for (std::size_t k = k_lo_; k <= k_hi_; ++k) weights_.push_back(band_weights(grid_.freq(k)));

  gate_.assign(taps_, 1.0);
  if (config_.gate) {
    const auto [a, b] = *config_.gate;
    for (std::size_t n = 0; n < taps_; ++n) {
      const double t = static_cast<double>(n) / kSampleRate;
      gate_[n] = (t >= a && t < b) ? 1.0 : 0.0;
    }
  }
  gate_count_ = 0.0;
  for (double g : gate_) gate_count_ += g;
  if (gate_count_ == 0.0) throw InvalidArgument("estimate: time gate selects no taps");

  cache_.resize(samples_.size());
  const double max_delay = static_cast<double>(grid_.fft_size) - 128.0;
  parallel_for(samples_.size(), [&](std::size_t i) {
    const auto& s = samples_[i];
    auto& c = cache_[i];
    c.paths = enumerate_paths(scene, s.tx.position, s.rx.position, config_.max_bounces);
    for (const auto& p : c.paths) {
      const double delay = (p.length / scene.speed_of_sound - s.measured.onset) * kSampleRate;
      if (delay >= max_delay || delay < -128.0) continue;
      PathCache pc;
      pc.delay = delay;
      pc.inv_length = 1.0 / p.length;
      for (int seg : p.segments) pc.segments.push_back(static_cast<int>(scene.segment_index(seg)));
      pc.dir_tx = s.tx.to_local(p.departure);
      pc.dir_rx = s.rx.to_local(-p.arrival);
      c.items.push_back(std::move(pc));
    }
    c.target = band_limit(s.measured.taps, grid_.fft_size, kSampleRate, config_.f_lo, config_.f_hi);
  });
}

double InverseProblem::loss(const EstimateParams& params) const { return evaluate(params, nullptr, kAll); }

double InverseProblem::loss_and_grad(const EstimateParams& params, std::vector<double>& grad) const {
  grad.assign(params.size(), 0.0);
  return evaluate(params, &grad, kAll);
}

Rir InverseProblem::render(const EstimateParams& params, std::size_t i) const {
  if (i >= samples_.size()) throw InvalidArgument("estimate: sample index out of range");
  Rir out;
  out.onset = samples_[i].measured.onset;
  evaluate(params, nullptr, i, &out.taps);
  return out;
}

double InverseProblem::evaluate(const EstimateParams& params, std::vector<double>* grad, std::size_t only,
                                std::vector<double>* rendered) const {
  if (params.raw_r.size() != segments_) throw InvalidArgument("estimate: parameter segment count mismatch");
  const std::size_t nsh = sh_count(params.degree);
  if (params.raw_tx.size() != nsh || params.raw_rx.size() != nsh) {
    throw InvalidArgument("estimate: SH coefficient count does not match the degree");
  }
  const std::size_t nb = k_hi_ - k_lo_ + 1;
  const std::size_t N = grid_.fft_size;
  const double inv_n = 1.0 / static_cast<double>(N);

  // Reflection curves on the pass band.
  std::vector<std::array<double, kNumBands>> R(segments_);
  std::vector<std::vector<double>> curve(segments_, std::vector<double>(nb));
  for (std::size_t s = 0; s < segments_; ++s) {
    for (std::size_t b = 0; b < kNumBands; ++b) R[s][b] = sigmoid(params.raw_r[s][b]);
    for (std::size_t j = 0; j < nb; ++j) {
      const auto& w = weights_[j];
      curve[s][j] = w.w_lo * R[s][w.lo] + w.w_hi * R[s][w.hi];
    }
  }
  const GainPattern gtx{params.degree, params.raw_tx};
  const GainPattern grx{params.degree, params.raw_rx};

  const std::size_t first = only == kAll ? 0 : only;
  const std::size_t count = only == kAll ? samples_.size() : 1;
  const double batch = static_cast<double>(count);
  std::vector<double> losses(count, 0.0);
  std::vector<std::vector<double>> grads(grad ? count : 0);

  parallel_for(count, [&](std::size_t local) {
    const std::size_t i = first + local;
    const auto& c = cache_[i];
    const std::size_t np = c.items.size();

    std::vector<double> amp(np), gt(np), gr(np);
    std::vector<std::vector<double>> dgt(np, std::vector<double>(nsh)), dgr(np, std::vector<double>(nsh));
    for (std::size_t p = 0; p < np; ++p) {
      const auto& pc = c.items[p];
      gt[p] = gtx.eval_with_grad(pc.dir_tx, dgt[p]);
      gr[p] = grx.eval_with_grad(pc.dir_rx, dgr[p]);
      amp[p] = gt[p] * gr[p] * pc.inv_length;
    }

    auto phasor_start = [&](double delay, double& step) {
      step = -2.0 * kPi * delay * inv_n;
      return std::polar(1.0, step * static_cast<double>(k_lo_));
    };

    std::vector<Complex> spec(grid_.bins(), Complex{});
    for (std::size_t p = 0; p < np; ++p) {
      const auto& pc = c.items[p];
      double step = 0.0;
      Complex z = phasor_start(pc.delay, step);
      const Complex rot = std::polar(1.0, step);
      for (std::size_t j = 0; j < nb; ++j) {
        if (j > 0 && (j & 1023) == 0) z = std::polar(1.0, step * static_cast<double>(k_lo_ + j));
        double prod = amp[p];
        for (int s : pc.segments) prod *= curve[s][j];
        spec[k_lo_ + j] += prod * z;
        z *= rot;
      }
    }
    auto r = fft::irfft(spec, N);
    r.resize(taps_);
    double acc = 0.0;
    std::vector<double> g(taps_, 0.0);
    for (std::size_t n = 0; n < taps_; ++n) {
      const double d = r[n] - c.target[n];
      acc += gate_[n] * d * d;
      g[n] = 2.0 * gate_[n] * d / (gate_count_ * batch);
    }
    losses[local] = acc / gate_count_;
    if (rendered) *rendered = std::move(r);
    if (!grad) return;

    // Adjoint of the real inverse transform restricted to the pass band.
    const auto G = fft::rfft(g, N);
    std::vector<Complex> W(nb);
    for (std::size_t j = 0; j < nb; ++j) {
      const std::size_t k = k_lo_ + j;
      const double ck = (k == 0 || 2 * k == N) ? 1.0 : 2.0;
      W[j] = ck * inv_n * std::conj(G[k]);
    }

    auto& out = grads[local];
    out.assign(params.size(), 0.0);
    std::vector<std::vector<double>> Q(segments_, std::vector<double>(nb, 0.0));
    std::vector<double> vals, suffix;
    for (std::size_t p = 0; p < np; ++p) {
      const auto& pc = c.items[p];
      const std::size_t order = pc.segments.size();
      vals.resize(order);
      suffix.resize(order + 1);
      double step = 0.0;
      Complex z = phasor_start(pc.delay, step);
      const Complex rot = std::polar(1.0, step);
      double S = 0.0;
      for (std::size_t j = 0; j < nb; ++j) {
        if (j > 0 && (j & 1023) == 0) z = std::polar(1.0, step * static_cast<double>(k_lo_ + j));
        const double re = (z * W[j]).real();
        z *= rot;
        suffix[order] = 1.0;
        for (std::size_t b = order; b-- > 0;) {
          vals[b] = curve[pc.segments[b]][j];
          suffix[b] = suffix[b + 1] * vals[b];
        }
        S += re * suffix[0];
        const double scaled = re * amp[p];
        double prefix = 1.0;
        for (std::size_t b = 0; b < order; ++b) {
          Q[pc.segments[b]][j] += scaled * prefix * suffix[b + 1];
          prefix *= vals[b];
        }
      }
      // d loss / d amp = S; amp = gt * gr / d.
      const double d_gt = S * gr[p] * pc.inv_length;
      const double d_gr = S * gt[p] * pc.inv_length;
      for (std::size_t m = 0; m < nsh; ++m) {
        out[params.tx_index(m)] += d_gt * dgt[p][m];
        out[params.rx_index(m)] += d_gr * dgr[p][m];
      }
    }
    for (std::size_t s = 0; s < segments_; ++s) {
      std::array<double, kNumBands> dR{};
      for (std::size_t j = 0; j < nb; ++j) {
        const auto& w = weights_[j];
        dR[w.lo] += w.w_lo * Q[s][j];
        dR[w.hi] += w.w_hi * Q[s][j];
      }
      for (std::size_t b = 0; b < kNumBands; ++b) {
        out[params.r_index(s, b)] += dR[b] * R[s][b] * (1.0 - R[s][b]);
      }
    }
  });

  double total = 0.0;
  for (double l : losses) total += l;
  if (grad) {
    for (const auto& g : grads) {
      for (std::size_t m = 0; m < g.size(); ++m) (*grad)[m] += g[m];
    }
  }
  return total / batch;
}

FitResult fit_materials(const Scene& scene, std::vector<TrainSample> samples, const FitConfig& config,
                        std::optional<EstimateParams> init) {
  if (!(config.learning_rate > 0.0) || config.iterations < 0 || config.patience < 1) {
    throw InvalidArgument("fit-materials: learning rate must be positive and patience at least 1");
  }
  const InverseProblem problem(scene, std::move(samples), config.loss);
  EstimateParams params = init ? *init : EstimateParams::initial(problem.segment_count());
  if (params.raw_r.size() != problem.segment_count()) {
    throw InvalidArgument("fit-materials: initial parameters do not match the scene's segment count");
  }

  FitResult result;
  result.params = params;
  std::vector<double> theta = params.flatten();
  std::vector<double> m(theta.size(), 0.0), v(theta.size(), 0.0), grad;
  constexpr double beta1 = 0.9, beta2 = 0.999;
  double best = std::numeric_limits<double>::infinity();
  double progress_mark = best;
  int since = 0;

  for (int it = 0; it < config.iterations; ++it) {
    params.unflatten(theta);
    const double loss = problem.loss_and_grad(params, grad);
    if (!std::isfinite(loss)) {
      throw Error("fit-materials: loss became non-finite at iteration " + std::to_string(it));
    }
    result.loss.push_back(loss);
    if (loss < best) {
      best = loss;
      result.params = params;
    }
    result.best_loss.push_back(best);
    if (loss < progress_mark * (1.0 - config.tolerance)) {
      progress_mark = loss;
      since = 0;
    } else if (++since >= config.patience) {
      break;
    }
    if (loss == 0.0) break;

    if (!config.train_gains) {
      for (std::size_t i = params.tx_index(0); i < grad.size(); ++i) grad[i] = 0.0;
    }
    if (config.freeze_tx_dc) grad[params.tx_index(0)] = 0.0;
    const double t = static_cast<double>(it + 1);
    const double c1 = 1.0 - std::pow(beta1, t);
    const double c2 = 1.0 - std::pow(beta2, t);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      if (!std::isfinite(grad[i])) {
        throw Error("fit-materials: gradient became non-finite at iteration " + std::to_string(it));
      }
      m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
      theta[i] -= config.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + config.adam_epsilon);
    }
  }
  result.iterations = static_cast<int>(result.loss.size());
  return result;
}

}  // namespace roomtwin
