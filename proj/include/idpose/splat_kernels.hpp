#pragma once

#include <span>
#include <vector>

#include "idpose/diffusion.hpp"

namespace idpose::kernels {

// Projected points ready for splatting. amplitude holds points x channels
// values (feature times lighting weight), point-major.
struct SplatBatch {
  int channels = 0;
  std::vector<double> u;  // column coordinate, cell centres at x + 0.5
  std::vector<double> v;  // row coordinate, cell centres at y + 0.5
  std::vector<double> amplitude;

  std::size_t points() const { return u.size(); }
};

// Accumulates every point's Gaussian footprint into `out` (size = shape.size()),
// overwriting it. The reference version evaluates the 2-D kernel directly per
// (cell, point) and is kept as the oracle for the parallel one.
void splat_reference(const SplatBatch& batch, const LatentShape& shape,
                     double sigma, std::span<double> out);

// Same result through the separable factorisation exp(-dx^2) * exp(-dy^2),
// parallel over output rows. Each output cell sums points in index order, so
// the result does not depend on the thread count.
void splat_parallel(const SplatBatch& batch, const LatentShape& shape,
                    double sigma, std::span<double> out);

// Vector-Jacobian product: given dL/d(out), writes dL/du and dL/dv for every
// point.
void splat_vjp_reference(const SplatBatch& batch, const LatentShape& shape,
                         double sigma, std::span<const double> grad_out,
                         std::span<double> grad_u, std::span<double> grad_v);

void splat_vjp_parallel(const SplatBatch& batch, const LatentShape& shape,
                        double sigma, std::span<const double> grad_out,
                        std::span<double> grad_u, std::span<double> grad_v);

}  // namespace idpose::kernels
