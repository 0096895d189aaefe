#include "idpose/diffusion.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "idpose/errors.hpp"
#include "idpose/rng.hpp"

namespace idpose {

LatentMap::LatentMap(LatentShape shape, float fill)
    : shape_(shape), data_(shape.size(), fill) {
  if (!shape.valid()) {
    throw Error(ErrorCode::kShapeMismatch, "latent dimensions must be >= 1");
  }
}

LatentMap::LatentMap(LatentShape shape, std::vector<float> data)
    : shape_(shape), data_(std::move(data)) {
  if (!shape.valid() || data_.size() != shape.size()) {
    throw Error(ErrorCode::kShapeMismatch,
                "latent data does not match its declared shape");
  }
}

bool LatentMap::all_finite() const {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

NoiseSchedule build_schedule(const ScheduleParams& params) {
  if (params.num_steps < 2) {
    throw ValidationError({"num_steps"});
  }
  const int n = params.num_steps;
  const double lo = std::sqrt(params.beta_start);
  const double hi = std::sqrt(params.beta_end);
  NoiseSchedule s;
  s.num_steps = n;
  s.alpha_bar.resize(n);
  double running = 1.0;
  for (int i = 0; i < n; ++i) {
    const double r = lo + (static_cast<double>(i) / (n - 1)) * (hi - lo);
    running *= 1.0 - r * r;
    s.alpha_bar[i] = running;
  }
  return s;
}

int step_index(double t_frac, int num_steps) {
  const double scaled = t_frac * num_steps;
  if (!std::isfinite(scaled)) throw ValidationError({"t_frac"});
  const long long t = std::llround(scaled);
  if (t < 1 || t > num_steps - 1) throw ValidationError({"t_frac"});
  return static_cast<int>(t);
}

double gaussian_at(std::uint64_t seed, std::uint64_t index) {
  const std::uint64_t a = counter_hash(seed, 2 * index);
  const std::uint64_t b = counter_hash(seed, 2 * index + 1);
  // u1 in (0, 1] so the log is finite; u2 in [0, 1).
  const double u1 = (static_cast<double>(a >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = static_cast<double>(b >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

void fill_gaussian(std::uint64_t seed, std::span<float> out) {
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(gaussian_at(seed, i));
  }
}

NoiseSample draw_noise(const NoiseKey& key, const LatentShape& shape) {
  NoiseSample s{LatentMap(shape), key.t_frac, key.seed};
  fill_gaussian(key.seed, s.eps.data());
  return s;
}

LatentMap mix(const LatentMap& z, const NoiseSample& noise,
              const NoiseSchedule& schedule) {
  if (!(z.shape() == noise.eps.shape())) {
    throw Error(ErrorCode::kShapeMismatch, "noise shape differs from latent");
  }
  const int t = step_index(noise.t_frac, schedule.num_steps);
  const double ab = schedule.alpha_bar_at(t);
  const double signal = std::sqrt(ab);
  const double spread = std::sqrt(1.0 - ab);
  LatentMap out(z.shape());
  auto dst = out.data();
  auto src = z.data();
  auto eps = noise.eps.data();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i] = static_cast<float>(signal * src[i] + spread * eps[i]);
  }
  return out;
}

double noise_error(const LatentMap& eps_hat, const LatentMap& eps) {
  if (!(eps_hat.shape() == eps.shape())) {
    throw Error(ErrorCode::kShapeMismatch,
                "predicted and true noise differ in shape");
  }
  const auto a = eps_hat.data();
  const auto b = eps.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

}  // namespace idpose
