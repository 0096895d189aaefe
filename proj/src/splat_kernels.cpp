#include "idpose/splat_kernels.hpp"

#include <cmath>
#include <cstddef>

#include "idpose/errors.hpp"

namespace idpose::kernels {

namespace {

// Below this many multiply-adds the fork/join cost outweighs the work.
constexpr std::size_t kParallelThreshold = 1 << 16;

void check_sizes(const SplatBatch& batch, const LatentShape& shape,
                 std::size_t out_size) {
  if (batch.channels != shape.channels ||
      batch.amplitude.size() != batch.points() * batch.channels ||
      batch.v.size() != batch.points() || out_size != shape.size()) {
    throw Error(ErrorCode::kShapeMismatch, "splat buffers disagree in size");
  }
}

// Row-major (points x n) table of exp(-(i + 0.5 - centre)^2 / (2 sigma^2)) and,
// optionally, its derivative with respect to the centre.
void axis_table(std::span<const double> centres, int n, double sigma,
                std::vector<double>& g, std::vector<double>* dg) {
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  const double inv_s2 = 1.0 / (sigma * sigma);
  g.resize(centres.size() * n);
  if (dg) dg->resize(centres.size() * n);
  for (std::size_t p = 0; p < centres.size(); ++p) {
    for (int i = 0; i < n; ++i) {
      const double d = (i + 0.5) - centres[p];
      const double e = std::exp(-d * d * inv2s2);
      g[p * n + i] = e;
      if (dg) (*dg)[p * n + i] = e * d * inv_s2;
    }
  }
}

}  // namespace

void splat_reference(const SplatBatch& batch, const LatentShape& shape,
                     double sigma, std::span<double> out) {
  check_sizes(batch, shape, out.size());
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  const int C = shape.channels, H = shape.height, W = shape.width;
  for (int c = 0; c < C; ++c) {
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        double acc = 0.0;
        for (std::size_t p = 0; p < batch.points(); ++p) {
          const double dx = x + 0.5 - batch.u[p];
          const double dy = y + 0.5 - batch.v[p];
          acc += batch.amplitude[p * C + c] *
                 std::exp(-(dx * dx + dy * dy) * inv2s2);
        }
        out[(static_cast<std::size_t>(c) * H + y) * W + x] = acc;
      }
    }
  }
}

void splat_parallel(const SplatBatch& batch, const LatentShape& shape,
                    double sigma, std::span<double> out) {
  check_sizes(batch, shape, out.size());
  const int C = shape.channels, H = shape.height, W = shape.width;
  const std::size_t P = batch.points();
  std::vector<double> gx, gy;
  axis_table(batch.u, W, sigma, gx, nullptr);
  axis_table(batch.v, H, sigma, gy, nullptr);

  const bool go_parallel = P * shape.size() >= kParallelThreshold;
  const int rows = C * H;
#pragma omp parallel for schedule(static) if (go_parallel)
  for (int row = 0; row < rows; ++row) {
    const int c = row / H;
    const int y = row % H;
    double* dst = out.data() + static_cast<std::size_t>(row) * W;
    for (int x = 0; x < W; ++x) dst[x] = 0.0;
    for (std::size_t p = 0; p < P; ++p) {
      const double a = batch.amplitude[p * C + c] * gy[p * H + y];
      if (a == 0.0) continue;
      const double* gxp = gx.data() + p * W;
      for (int x = 0; x < W; ++x) dst[x] += a * gxp[x];
    }
  }
}

void splat_vjp_reference(const SplatBatch& batch, const LatentShape& shape,
                         double sigma, std::span<const double> grad_out,
                         std::span<double> grad_u, std::span<double> grad_v) {
  check_sizes(batch, shape, grad_out.size());
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  const double inv_s2 = 1.0 / (sigma * sigma);
  const int C = shape.channels, H = shape.height, W = shape.width;
  for (std::size_t p = 0; p < batch.points(); ++p) {
    double gu = 0.0, gv = 0.0;
    for (int c = 0; c < C; ++c) {
      const double a = batch.amplitude[p * C + c];
      for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
          const double dx = x + 0.5 - batch.u[p];
          const double dy = y + 0.5 - batch.v[p];
          const double k = std::exp(-(dx * dx + dy * dy) * inv2s2);
          const double g =
              grad_out[(static_cast<std::size_t>(c) * H + y) * W + x] * a * k;
          gu += g * dx * inv_s2;
          gv += g * dy * inv_s2;
        }
      }
    }
    grad_u[p] = gu;
    grad_v[p] = gv;
  }
}

void splat_vjp_parallel(const SplatBatch& batch, const LatentShape& shape,
                        double sigma, std::span<const double> grad_out,
                        std::span<double> grad_u, std::span<double> grad_v) {
  check_sizes(batch, shape, grad_out.size());
  const int C = shape.channels, H = shape.height, W = shape.width;
  const std::size_t P = batch.points();
  std::vector<double> gx, gy, dgx, dgy;
  axis_table(batch.u, W, sigma, gx, &dgx);
  axis_table(batch.v, H, sigma, gy, &dgy);

  const bool go_parallel = P * shape.size() >= kParallelThreshold;
  const long long n_points = static_cast<long long>(P);
#pragma omp parallel for schedule(static) if (go_parallel)
  for (long long pi = 0; pi < n_points; ++pi) {
    const std::size_t p = static_cast<std::size_t>(pi);
    const double* gxp = gx.data() + p * W;
    const double* dgxp = dgx.data() + p * W;
    const double* gyp = gy.data() + p * H;
    const double* dgyp = dgy.data() + p * H;
    double gu = 0.0, gv = 0.0;
    for (int c = 0; c < C; ++c) {
      const double a = batch.amplitude[p * C + c];
      if (a == 0.0) continue;
      double su = 0.0, sv = 0.0;
      for (int y = 0; y < H; ++y) {
        const double* g = grad_out.data() + (static_cast<std::size_t>(c) * H + y) * W;
        double row_g = 0.0, row_dg = 0.0;
        for (int x = 0; x < W; ++x) {
          row_g += g[x] * gxp[x];
          row_dg += g[x] * dgxp[x];
        }
        su += gyp[y] * row_dg;
        sv += dgyp[y] * row_g;
      }
      gu += a * su;
      gv += a * sv;
    }
    grad_u[p] = gu;
    grad_v[p] = gv;
  }
}

}  // namespace idpose::kernels
