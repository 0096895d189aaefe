#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "idpose/backend.hpp"
#include "idpose/diffusion.hpp"
#include "idpose/pose.hpp"

namespace idpose {

struct ScenePoint {
  Eigen::Vector3d position;
  std::vector<double> feature;  // one value per latent channel
};

// Analytic stand-in for a 3-D object: feature-carrying points around the
// origin, rendered by Gaussian splatting through the look-at camera.
struct SyntheticScene {
  std::vector<ScenePoint> points;
  int symmetry_order = 1;
  LatentShape latent_shape{4, 32, 32};
  std::optional<Eigen::Vector3d> lighting_direction;
  double splat_sigma = 1.5;  // cells
  double fov_deg = 60.0;

  void validate() const;
};

struct SceneRecipe {
  int num_points = 48;
  int symmetry_order = 1;
  bool lighting = false;
  LatentShape latent_shape{4, 32, 32};
  double feature_amplitude = 0.25;
};

// Draws a random scene. Points lie in a shell of radius [0.55, 1]; features are
// a smooth random field over the direction plus a per-point term. With
// symmetry_order k, a base set is replicated under rotations by 2pi/k about z.
// Lit scenes have their features scaled so that the Lambertian-weighted
// feature energy matches the unlit scene.
SyntheticScene make_scene(const SceneRecipe& recipe, std::uint64_t seed);

// Per-point Lambertian weights (all 1 without lighting).
std::vector<double> lighting_weights(const SyntheticScene& scene);

std::vector<double> render(const SyntheticScene& scene,
                           const AbsoluteCamera& camera);
LatentMap render_latent(const SyntheticScene& scene,
                        const AbsoluteCamera& camera);

// Serial-kernel rendering, kept as the oracle for render().
std::vector<double> render_reference(const SyntheticScene& scene,
                                     const AbsoluteCamera& camera);

// Gradient of a scalar loss with respect to (polar, azimuth, radius) of the
// camera, given dLoss/d(rendered latent).
Eigen::Vector3d render_vjp(const SyntheticScene& scene,
                           const AbsoluteCamera& camera,
                           std::span<const double> grad_latent);

// The predictor of the synthetic backend. With prior_variance = 0 it predicts
// eps_hat = (z_t - sqrt(ab) * render(p)) / sqrt(1 - ab), so the noise error is
// ab / (1 - ab) * MSE(render(p), target) and vanishes exactly at the true
// pose. prior_variance > 0 turns it into the posterior-mean denoiser for a
// Gaussian prior N(render(p), prior_variance) on the clean latent, and
// model_noise adds a pose-keyed deterministic perturbation of that scale to
// eps_hat; both model an imperfect network and are off by default.
struct SyntheticPredictorOptions {
  ScheduleParams schedule;
  double prior_variance = 0.0;
  double model_noise = 0.0;
  int max_concurrency = 64;
};

class SyntheticBackend : public Backend {
 public:
  explicit SyntheticBackend(SyntheticScene scene,
                            SyntheticPredictorOptions options = {});

  // Registers a view with its true camera. Without a latent the view's latent
  // is rendered from the scene.
  void add_view(const std::string& id, const AbsoluteCamera& camera,
                std::optional<LatentMap> latent = std::nullopt);

  const SyntheticScene& scene() const { return scene_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  const AbsoluteCamera& camera_of(const std::string& id) const;
  const LatentMap& latent_of(const std::string& id) const;

  BackendCapabilities capabilities() const override;
  EvalResult evaluate(const EvalRequest& request) override;

 private:
  struct View {
    AbsoluteCamera camera;
    LatentMap latent;
  };
  const View& view(const std::string& id) const;
  std::shared_ptr<const std::vector<float>> noise_field(std::uint64_t seed) const;
  std::shared_ptr<const std::vector<double>> cached_render(const AbsoluteCamera& camera) const;

  // A probe evaluates the same two cameras under a handful of noise seeds, so
  // recent noise fields and renders are kept.
  using CameraKey = std::array<std::uint64_t, 3>;
  struct EvalCache {
    std::mutex mutex;
    std::unordered_map<std::uint64_t, std::shared_ptr<const std::vector<float>>> fields;
    std::deque<std::uint64_t> order;
    std::deque<std::pair<CameraKey, std::shared_ptr<const std::vector<double>>>> renders;
  };

  SyntheticScene scene_;
  SyntheticPredictorOptions options_;
  NoiseSchedule schedule_;
  std::unordered_map<std::string, View> views_;
  std::unique_ptr<EvalCache> cache_ = std::make_unique<EvalCache>();
};

}  // namespace idpose
