#pragma once

#include <optional>
#include <string>

#include <Eigen/Core>

#include "idpose/diffusion.hpp"
#include "idpose/pose.hpp"

namespace idpose {

struct ViewHandle {
  std::string id;
  LatentMap latent;
  std::optional<std::string> image_ref;
};

struct EvalRequest {
  std::string reference_id;
  std::string target_id;
  SphericalPose pose;
  NoiseKey noise;
  bool want_gradient = false;
};

struct EvalResult {
  double error = 0.0;
  // d error / d(d_polar, d_azimuth, d_radius), when the backend provides it.
  std::optional<Eigen::Vector3d> gradient;
};

struct BackendCapabilities {
  LatentShape latent_shape;
  bool has_gradient = false;
  int max_concurrency = 1;
};

// A view-conditioned noise predictor reduced to what pose inversion needs:
// the noise error of predicting the target's noise from the reference view
// and a relative pose. Implementations either tolerate concurrent evaluate()
// calls or report max_concurrency == 1.
class Backend {
 public:
  virtual ~Backend() = default;

  virtual BackendCapabilities capabilities() const = 0;
  virtual EvalResult evaluate(const EvalRequest& request) = 0;
};

}  // namespace idpose
