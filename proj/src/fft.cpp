#include "roomtwin/fft.hpp"

#include <fftw3.h>

#include <algorithm>
#include <map>
#include <mutex>
#include <tuple>

namespace roomtwin::fft {

namespace {

enum class Kind { kR2C, kC2R, kForward, kInverse };

// The FFTW planner is not thread-safe; executing an existing plan on new
// arrays is. Plans are created once per (kind, size) and never destroyed.
class PlanCache {
 public:
  fftw_plan get(Kind kind, std::size_t n) {
    std::lock_guard lock(mutex_);
    auto key = std::make_tuple(kind, n);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;
    const int len = static_cast<int>(n);
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    auto* real = static_cast<double*>(fftw_malloc(sizeof(double) * n));
    auto* cplx = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n));
    auto* cplx2 = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n));
    fftw_plan plan = nullptr;
    switch (kind) {
      case Kind::kR2C:
        plan = fftw_plan_dft_r2c_1d(len, real, cplx, flags);
        break;
      case Kind::kC2R:
        plan = fftw_plan_dft_c2r_1d(len, cplx, real, flags);
        break;
      case Kind::kForward:
        plan = fftw_plan_dft_1d(len, cplx, cplx2, FFTW_FORWARD, flags);
        break;
      case Kind::kInverse:
        plan = fftw_plan_dft_1d(len, cplx, cplx2, FFTW_BACKWARD, flags);
        break;
    }
    fftw_free(real);
    fftw_free(cplx);
    fftw_free(cplx2);
    plans_.emplace(key, plan);
    return plan;
  }

 private:
  std::mutex mutex_;
  std::map<std::tuple<Kind, std::size_t>, fftw_plan> plans_;
};

PlanCache& cache() {
  static PlanCache instance;
  return instance;
}

fftw_complex* as_fftw(Complex* p) { return reinterpret_cast<fftw_complex*>(p); }

}  // namespace

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

std::vector<Complex> rfft(std::span<const double> x, std::size_t n) {
  std::vector<double> in(n, 0.0);
  std::copy_n(x.begin(), std::min(n, x.size()), in.begin());
  std::vector<Complex> out(n / 2 + 1);
  fftw_execute_dft_r2c(cache().get(Kind::kR2C, n), in.data(), as_fftw(out.data()));
  return out;
}

std::vector<double> irfft(std::span<const Complex> spectrum, std::size_t n) {
  // c2r overwrites its input.
  std::vector<Complex> in(n / 2 + 1, Complex{});
  std::copy_n(spectrum.begin(), std::min(in.size(), spectrum.size()), in.begin());
  std::vector<double> out(n);
  fftw_execute_dft_c2r(cache().get(Kind::kC2R, n), as_fftw(in.data()), out.data());
  const double scale = 1.0 / static_cast<double>(n);
  for (double& v : out) v *= scale;
  return out;
}

std::vector<Complex> forward(std::span<const Complex> x, std::size_t n) {
  std::vector<Complex> in(n, Complex{});
  std::copy_n(x.begin(), std::min(n, x.size()), in.begin());
  std::vector<Complex> out(n);
  fftw_execute_dft(cache().get(Kind::kForward, n), as_fftw(in.data()), as_fftw(out.data()));
  return out;
}

std::vector<Complex> inverse(std::span<const Complex> x, std::size_t n) {
  std::vector<Complex> in(n, Complex{});
  std::copy_n(x.begin(), std::min(n, x.size()), in.begin());
  std::vector<Complex> out(n);
  fftw_execute_dft(cache().get(Kind::kInverse, n), as_fftw(in.data()), as_fftw(out.data()));
  const double scale = 1.0 / static_cast<double>(n);
  for (auto& v : out) v *= scale;
  return out;
}

}  // namespace roomtwin::fft
