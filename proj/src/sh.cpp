#include "roomtwin/sh.hpp"

#include <cmath>
#include <complex>

namespace roomtwin {

void sh_basis(const Vec3& dir, int degree, std::span<double> out) {
  if (degree < 0) throw InvalidArgument("SH degree must be non-negative");
  if (out.size() < sh_count(degree)) throw InvalidArgument("SH output span too small");
  const double z = dir.z();
  // Q[l] holds P_l^m(z) / sin^m(theta) for the current m.
  std::vector<double> q(static_cast<std::size_t>(degree) + 1);
  std::complex<double> xy_pow{1.0, 0.0};
  const std::complex<double> xy{dir.x(), dir.y()};
  double double_fact = 1.0;  // (2m - 1)!!
  for (int m = 0; m <= degree; ++m) {
    if (m > 0) {
      double_fact *= 2.0 * m - 1.0;
      xy_pow *= xy;
    }
    q[m] = double_fact;
    if (m + 1 <= degree) q[m + 1] = z * (2.0 * m + 1.0) * q[m];
    for (int l = m + 2; l <= degree; ++l) {
      q[l] = ((2.0 * l - 1.0) * z * q[l - 1] - (l + m - 1.0) * q[l - 2]) / (l - m);
    }
    for (int l = m; l <= degree; ++l) {
      // K_lm = sqrt((2l+1)/(4 pi) (l-m)!/(l+m)!)
      double ratio = 1.0;
      for (int k = l - m + 1; k <= l + m; ++k) ratio /= k;
      const double k_lm = std::sqrt((2.0 * l + 1.0) / (4.0 * kPi) * ratio);
      const std::size_t base = static_cast<std::size_t>(l * l + l);
      if (m == 0) {
        out[base] = k_lm * q[l];
      } else {
        out[base + m] = std::sqrt(2.0) * k_lm * q[l] * xy_pow.real();
        out[base - m] = std::sqrt(2.0) * k_lm * q[l] * xy_pow.imag();
      }
    }
  }
}

std::vector<double> sh_basis(const Vec3& dir, int degree) {
  std::vector<double> out(sh_count(degree));
  sh_basis(dir, degree, out);
  return out;
}

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

GainPattern GainPattern::isotropic(double gain, int degree) {
  if (!(gain > 0.0)) throw InvalidArgument("isotropic gain must be positive");
  GainPattern g;
  g.degree = degree;
  g.coeffs.assign(sh_count(degree), 0.0);
  const double y00 = 0.5 / std::sqrt(kPi);
  // Inverse softplus.
  g.coeffs[0] = (gain > 30.0 ? gain : std::log(std::expm1(gain))) / y00;
  return g;
}

double GainPattern::raw(const Vec3& local_dir) const {
  if (coeffs.size() != sh_count(degree)) throw InvalidArgument("gain pattern coefficient count mismatch");
  double basis[64];
  std::vector<double> heap;
  std::span<double> b(basis, sh_count(degree) <= 64 ? sh_count(degree) : 0);
  if (b.empty()) {
    heap.resize(sh_count(degree));
    b = heap;
  }
  sh_basis(local_dir, degree, b);
  double acc = 0.0;
  for (std::size_t i = 0; i < coeffs.size(); ++i) acc += coeffs[i] * b[i];
  return acc;
}

double GainPattern::eval_with_grad(const Vec3& local_dir, std::span<double> grad) const {
  if (coeffs.size() != sh_count(degree)) throw InvalidArgument("gain pattern coefficient count mismatch");
  sh_basis(local_dir, degree, grad);
  double acc = 0.0;
  for (std::size_t i = 0; i < coeffs.size(); ++i) acc += coeffs[i] * grad[i];
  const double s = sigmoid(acc);
  for (std::size_t i = 0; i < coeffs.size(); ++i) grad[i] *= s;
  return softplus(acc);
}

}  // namespace roomtwin
