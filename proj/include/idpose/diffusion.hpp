#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace idpose {

struct LatentShape {
  int channels = 0;
  int height = 0;
  int width = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(channels) * height * width;
  }
  bool valid() const { return channels >= 1 && height >= 1 && width >= 1; }
  friend bool operator==(const LatentShape&, const LatentShape&) = default;
};

// Dense (channels, height, width) grid of 32-bit reals, row-major with the
// channel as the slowest axis.
class LatentMap {
 public:
  LatentMap() = default;
  explicit LatentMap(LatentShape shape, float fill = 0.0f);
  LatentMap(LatentShape shape, std::vector<float> data);

  const LatentShape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  float& at(int c, int y, int x) { return data_[index(c, y, x)]; }
  float at(int c, int y, int x) const { return data_[index(c, y, x)]; }

  bool all_finite() const;

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * shape_.height + y) * shape_.width + x;
  }

  LatentShape shape_;
  std::vector<float> data_;
};

// Cumulative signal-retention coefficients of the forward noising process.
struct NoiseSchedule {
  int num_steps = 0;
  std::vector<double> alpha_bar;  // strictly decreasing, all in (0, 1)

  double alpha_bar_at(int step) const { return alpha_bar.at(step); }
};

struct ScheduleParams {
  int num_steps = 1000;
  double beta_start = 0.00085;
  double beta_end = 0.012;
};

// Scaled-linear beta schedule (linear in sqrt(beta)).
NoiseSchedule build_schedule(const ScheduleParams& params = {});

// Maps a step fraction to a discrete step by rounding; throws kValidation if
// the result falls outside [1, num_steps - 1].
int step_index(double t_frac, int num_steps);

// Identifies a noise draw: the Gaussian field is a pure function of the seed,
// so only (seed, t_frac) needs to cross a process boundary.
struct NoiseKey {
  std::uint64_t seed = 0;
  double t_frac = 0.2;
};

struct NoiseSample {
  LatentMap eps;
  double t_frac = 0.0;
  std::uint64_t seed = 0;
};

// Counter-based standard normal draw keyed by (seed, element index).
// Bit-reproducible: it depends on nothing but its two arguments.
double gaussian_at(std::uint64_t seed, std::uint64_t index);

void fill_gaussian(std::uint64_t seed, std::span<float> out);
NoiseSample draw_noise(const NoiseKey& key, const LatentShape& shape);

// sqrt(alpha_bar[t]) * z + sqrt(1 - alpha_bar[t]) * eps.
LatentMap mix(const LatentMap& z, const NoiseSample& noise,
              const NoiseSchedule& schedule);

// Mean squared element-wise difference.
double noise_error(const LatentMap& eps_hat, const LatentMap& eps);

}  // namespace idpose
