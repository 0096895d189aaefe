#include <cmath>
#include <vector>

#include <doctest.h>
#include <omp.h>

#include "idpose/rng.hpp"
#include "idpose/splat_kernels.hpp"

using namespace idpose;
using namespace idpose::kernels;

namespace {

SplatBatch random_batch(int points, int channels, const LatentShape& shape,
                        std::uint64_t seed) {
  CounterStream rng(seed);
  SplatBatch b;
  b.channels = channels;
  for (int p = 0; p < points; ++p) {
    // Some points fall outside the grid; their tails still reach it.
    b.u.push_back(rng.uniform(-4.0, shape.width + 4.0));
    b.v.push_back(rng.uniform(-4.0, shape.height + 4.0));
    for (int c = 0; c < channels; ++c) b.amplitude.push_back(rng.uniform(-1, 1));
  }
  return b;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("single point splat matches the closed form") {
  const LatentShape shape{1, 8, 8};
  SplatBatch b;
  b.channels = 1;
  b.u = {3.2};
  b.v = {4.9};
  b.amplitude = {2.0};
  std::vector<double> out(shape.size());
  splat_reference(b, shape, 1.5, out);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      const double dx = x + 0.5 - 3.2, dy = y + 0.5 - 4.9;
      const double oracle = 2.0 * std::exp(-(dx * dx + dy * dy) / (2 * 1.5 * 1.5));
      CHECK(out[y * 8 + x] == doctest::Approx(oracle).epsilon(1e-14));
    }
  }
}

TEST_CASE("parallel splat equals the reference for any thread count") {
  const LatentShape shape{4, 32, 32};
  const SplatBatch b = random_batch(200, 4, shape, 3);
  std::vector<double> ref(shape.size()), par(shape.size());
  splat_reference(b, shape, 1.5, ref);
  for (int threads : {1, 2, 4}) {
    omp_set_num_threads(threads);
    splat_parallel(b, shape, 1.5, par);
    CHECK(max_abs_diff(ref, par) < 1e-12);
  }
  // Bitwise determinism across thread counts.
  std::vector<double> one(shape.size()), four(shape.size());
  omp_set_num_threads(1);
  splat_parallel(b, shape, 1.5, one);
  omp_set_num_threads(4);
  splat_parallel(b, shape, 1.5, four);
  CHECK(one == four);
}

TEST_CASE("splat VJP matches the reference and finite differences") {
  const LatentShape shape{3, 16, 20};
  const SplatBatch b = random_batch(40, 3, shape, 5);
  std::vector<double> g(shape.size());
  CounterStream rng(6);
  for (double& x : g) x = rng.uniform(-1, 1);

  std::vector<double> gu_ref(b.points()), gv_ref(b.points()), gu(b.points()), gv(b.points());
  splat_vjp_reference(b, shape, 1.3, g, gu_ref, gv_ref);
  for (int threads : {1, 3}) {
    omp_set_num_threads(threads);
    splat_vjp_parallel(b, shape, 1.3, g, gu, gv);
    CHECK(max_abs_diff(gu_ref, gu) < 1e-12);
    CHECK(max_abs_diff(gv_ref, gv) < 1e-12);
  }

  // <g, d out/d u_p> by central differences.
  auto loss = [&](const SplatBatch& bb) {
    std::vector<double> out(shape.size());
    splat_reference(bb, shape, 1.3, out);
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += g[i] * out[i];
    return s;
  };
  const double h = 1e-5;
  for (std::size_t p = 0; p < b.points(); p += 7) {
    SplatBatch up = b, dn = b;
    up.u[p] += h;
    dn.u[p] -= h;
    CHECK(gu_ref[p] == doctest::Approx((loss(up) - loss(dn)) / (2 * h)).epsilon(1e-6));
    up = b;
    dn = b;
    up.v[p] += h;
    dn.v[p] -= h;
    CHECK(gv_ref[p] == doctest::Approx((loss(up) - loss(dn)) / (2 * h)).epsilon(1e-6));
  }
}

TEST_CASE("empty batch yields an empty image") {
  const LatentShape shape{2, 4, 4};
  SplatBatch b;
  b.channels = 2;
  std::vector<double> out(shape.size(), 7.0);
  splat_parallel(b, shape, 1.5, out);
  for (double v : out) CHECK(v == 0.0);
}
