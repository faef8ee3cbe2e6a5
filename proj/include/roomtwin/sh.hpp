#pragma once

#include <span>
#include <vector>

#include "roomtwin/common.hpp"

namespace roomtwin {

inline constexpr int kDefaultShDegree = 2;

constexpr std::size_t sh_count(int degree) { return static_cast<std::size_t>((degree + 1) * (degree + 1)); }

// Orthonormal real spherical harmonics of a unit direction, index l*l + l + m,
// without the Condon-Shortley phase (Y_1,1 is proportional to +x).
void sh_basis(const Vec3& dir, int degree, std::span<double> out);
std::vector<double> sh_basis(const Vec3& dir, int degree);

double softplus(double x);
double sigmoid(double x);

// Direction-dependent device gain: softplus of a real SH expansion evaluated
// in the device's local frame.
struct GainPattern {
  int degree = kDefaultShDegree;
  std::vector<double> coeffs = std::vector<double>(sh_count(kDefaultShDegree), 0.0);

  // Constant gain g > 0 in every direction.
  static GainPattern isotropic(double gain = 1.0, int degree = kDefaultShDegree);

  double raw(const Vec3& local_dir) const;
  double eval(const Vec3& local_dir) const { return softplus(raw(local_dir)); }
  // d gain / d coeffs at local_dir, written to grad (size sh_count(degree)).
  double eval_with_grad(const Vec3& local_dir, std::span<double> grad) const;
};

}  // namespace roomtwin
