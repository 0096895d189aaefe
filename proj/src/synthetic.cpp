#include "idpose/synthetic.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <thread>

#include "idpose/errors.hpp"
#include "idpose/rng.hpp"
#include "idpose/splat_kernels.hpp"

namespace idpose {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kMinDepth = 1e-3;

struct Projection {
  kernels::SplatBatch batch;
  // d(u, v) / d(polar, azimuth, radius) for each kept point.
  std::vector<Eigen::Matrix<double, 2, 3>> jacobian;
};

Projection project(const SyntheticScene& scene, const AbsoluteCamera& camera,
                   bool with_jacobian) {
  const double st = std::sin(camera.polar), ct = std::cos(camera.polar);
  const double sp = std::sin(camera.azimuth), cp = std::cos(camera.azimuth);
  const Eigen::Vector3d e_r(st * cp, st * sp, ct);
  const Eigen::Vector3d e_theta(ct * cp, ct * sp, -st);
  const Eigen::Vector3d e_phi(-sp, cp, 0.0);
  const double r = camera.radius;

  const LatentShape& shape = scene.latent_shape;
  const double focal =
      0.5 * shape.width / std::tan(0.5 * scene.fov_deg * kPi / 180.0);
  const double cx = 0.5 * shape.width, cy = 0.5 * shape.height;
  const std::vector<double> weights = lighting_weights(scene);

  Projection out;
  out.batch.channels = shape.channels;
  for (std::size_t i = 0; i < scene.points.size(); ++i) {
    const Eigen::Vector3d& X = scene.points[i].position;
    const double rx = e_r.dot(X), tx = e_theta.dot(X), px = e_phi.dot(X);
    const double xc = px;
    const double yc = -tx;
    const double depth = r - rx;
    if (depth <= kMinDepth) continue;

    out.batch.u.push_back(cx + focal * xc / depth);
    out.batch.v.push_back(cy - focal * yc / depth);
    for (int c = 0; c < shape.channels; ++c) {
      out.batch.amplitude.push_back(weights[i] * scene.points[i].feature[c]);
    }
    if (!with_jacobian) continue;

    // Partials of camera-frame coordinates with respect to (polar, azimuth,
    // radius), from the derivatives of the spherical unit vectors.
    const Eigen::Vector3d dxc(0.0, -(st * rx + ct * tx), 0.0);
    const Eigen::Vector3d dyc(rx, -ct * px, 0.0);
    const Eigen::Vector3d dd(-tx, -st * px, 1.0);
    const double inv_d2 = 1.0 / (depth * depth);
    Eigen::Matrix<double, 2, 3> j;
    j.row(0) = (focal * (dxc * depth - xc * dd) * inv_d2).transpose();
    j.row(1) = (-focal * (dyc * depth - yc * dd) * inv_d2).transpose();
    out.jacobian.push_back(j);
  }
  return out;
}

std::uint64_t hash_text(const std::string& s) { return derive_seed(0, s); }

}  // namespace

void SyntheticScene::validate() const {
  std::vector<std::string> bad;
  if (points.size() < 4) bad.emplace_back("points");
  if (symmetry_order < 1) bad.emplace_back("symmetry_order");
  if (!latent_shape.valid()) bad.emplace_back("latent_shape");
  if (!(splat_sigma > 0.0)) bad.emplace_back("splat_sigma");
  if (!(fov_deg > 0.0 && fov_deg < 180.0)) bad.emplace_back("fov_deg");
  if (lighting_direction &&
      std::abs(lighting_direction->norm() - 1.0) > 1e-9) {
    bad.emplace_back("lighting_direction");
  }
  for (const auto& p : points) {
    if (static_cast<int>(p.feature.size()) != latent_shape.channels ||
        !p.position.allFinite()) {
      bad.emplace_back("points.feature");
      break;
    }
  }
  if (!bad.empty()) throw ValidationError(std::move(bad));
}

SyntheticScene make_scene(const SceneRecipe& recipe, std::uint64_t seed) {
  if (recipe.num_points < 4 || recipe.symmetry_order < 1 ||
      !recipe.latent_shape.valid()) {
    throw ValidationError({"scene_recipe"});
  }
  CounterStream rng(derive_seed(seed, "scene"));
  const int k = recipe.symmetry_order;
  const int base = (recipe.num_points + k - 1) / k;
  const int channels = recipe.latent_shape.channels;

  // Smooth field: random combination of degree-1 and degree-2 polynomials of
  // the unit direction, per channel.
  constexpr int kBasis = 8;
  std::vector<double> coeff(static_cast<std::size_t>(channels) * kBasis);
  for (double& c : coeff) c = 2.0 * rng.next_unit() - 1.0;
  auto basis = [](const Eigen::Vector3d& n, int j) {
    switch (j) {
      case 0: return n.x();
      case 1: return n.y();
      case 2: return n.z();
      case 3: return n.x() * n.y() * 2.0;
      case 4: return n.x() * n.z() * 2.0;
      case 5: return n.y() * n.z() * 2.0;
      case 6: return n.x() * n.x() - n.y() * n.y();
      default: return 1.5 * n.z() * n.z() - 0.5;
    }
  };

  SyntheticScene scene;
  scene.symmetry_order = k;
  scene.latent_shape = recipe.latent_shape;
  std::vector<ScenePoint> base_points;
  for (int i = 0; i < base; ++i) {
    // Uniform direction, restricted away from the poles of the z axis so that
    // no point sits on the symmetry axis.
    const double z = rng.uniform(-0.85, 0.85);
    const double phi = rng.uniform(0.0, 2.0 * kPi);
    const double rho = std::sqrt(1.0 - z * z);
    const Eigen::Vector3d n(rho * std::cos(phi), rho * std::sin(phi), z);
    const double shell = rng.uniform(0.55, 1.0);
    ScenePoint p;
    p.position = shell * n;
    p.feature.resize(channels);
    for (int c = 0; c < channels; ++c) {
      double field = 0.0;
      for (int j = 0; j < kBasis; ++j) field += coeff[c * kBasis + j] * basis(n, j);
      const double own = 2.0 * rng.next_unit() - 1.0;
      p.feature[c] = recipe.feature_amplitude * (0.6 * field + 0.4 * own);
    }
    base_points.push_back(std::move(p));
  }
  for (int copy = 0; copy < k; ++copy) {
    const double a = 2.0 * kPi * copy / k;
    const double ca = std::cos(a), sa = std::sin(a);
    for (const auto& p : base_points) {
      ScenePoint q = p;
      q.position = Eigen::Vector3d(ca * p.position.x() - sa * p.position.y(),
                                   sa * p.position.x() + ca * p.position.y(),
                                   p.position.z());
      scene.points.push_back(std::move(q));
    }
  }
  if (recipe.lighting) {
    const double elev = rng.uniform(20.0, 50.0) * kPi / 180.0;
    const double az = rng.uniform(0.0, 2.0 * kPi);
    scene.lighting_direction = Eigen::Vector3d(
        std::cos(elev) * std::cos(az), std::cos(elev) * std::sin(az),
        std::sin(elev));
    // Shading darkens half the object; rescale features so the shaded scene
    // carries the same feature energy as the unlit one.
    const auto w = lighting_weights(scene);
    double lit = 0.0;
    for (double wi : w) lit += wi * wi;
    const double gain = std::sqrt(static_cast<double>(w.size()) / lit);
    for (auto& p : scene.points) {
      for (double& f : p.feature) f *= gain;
    }
  }
  return scene;
}

std::vector<double> lighting_weights(const SyntheticScene& scene) {
  std::vector<double> w(scene.points.size(), 1.0);
  if (!scene.lighting_direction) return w;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double n = scene.points[i].position.norm();
    w[i] = n > 0.0 ? std::max(0.0, scene.points[i].position.dot(
                                       *scene.lighting_direction) / n)
                   : 0.0;
  }
  return w;
}

std::vector<double> render(const SyntheticScene& scene,
                           const AbsoluteCamera& camera) {
  const Projection proj = project(scene, camera, false);
  std::vector<double> out(scene.latent_shape.size());
  kernels::splat_parallel(proj.batch, scene.latent_shape, scene.splat_sigma,
                          out);
  return out;
}

std::vector<double> render_reference(const SyntheticScene& scene,
                                     const AbsoluteCamera& camera) {
  const Projection proj = project(scene, camera, false);
  std::vector<double> out(scene.latent_shape.size());
  kernels::splat_reference(proj.batch, scene.latent_shape, scene.splat_sigma,
                           out);
  return out;
}

LatentMap render_latent(const SyntheticScene& scene,
                        const AbsoluteCamera& camera) {
  const std::vector<double> z = render(scene, camera);
  std::vector<float> f(z.begin(), z.end());
  return LatentMap(scene.latent_shape, std::move(f));
}

Eigen::Vector3d render_vjp(const SyntheticScene& scene,
                           const AbsoluteCamera& camera,
                           std::span<const double> grad_latent) {
  const Projection proj = project(scene, camera, true);
  const std::size_t n = proj.batch.points();
  std::vector<double> gu(n), gv(n);
  kernels::splat_vjp_parallel(proj.batch, scene.latent_shape,
                              scene.splat_sigma, grad_latent, gu, gv);
  Eigen::Vector3d g = Eigen::Vector3d::Zero();
  for (std::size_t p = 0; p < n; ++p) {
    g += (gu[p] * proj.jacobian[p].row(0) + gv[p] * proj.jacobian[p].row(1))
             .transpose();
  }
  return g;
}

SyntheticBackend::SyntheticBackend(SyntheticScene scene,
                                   SyntheticPredictorOptions options)
    : scene_(std::move(scene)),
      options_(options),
      schedule_(build_schedule(options.schedule)) {
  scene_.validate();
  std::vector<std::string> bad;
  if (!(options_.prior_variance >= 0.0)) bad.emplace_back("prior_variance");
  if (!(options_.model_noise >= 0.0)) bad.emplace_back("model_noise");
  if (options_.max_concurrency < 1) bad.emplace_back("max_concurrency");
  if (!bad.empty()) throw ValidationError(std::move(bad));
}

void SyntheticBackend::add_view(const std::string& id,
                                const AbsoluteCamera& camera,
                                std::optional<LatentMap> latent) {
  if (!is_valid(camera)) throw ValidationError({"camera"});
  LatentMap z = latent ? std::move(*latent) : render_latent(scene_, camera);
  if (!(z.shape() == scene_.latent_shape)) {
    throw Error(ErrorCode::kShapeMismatch,
                "view latent shape differs from the scene's latent shape");
  }
  views_.insert_or_assign(id, View{camera, std::move(z)});
}

const SyntheticBackend::View& SyntheticBackend::view(
    const std::string& id) const {
  const auto it = views_.find(id);
  if (it == views_.end()) {
    throw Error(ErrorCode::kUnknownView, "unknown view id: " + id);
  }
  return it->second;
}

const AbsoluteCamera& SyntheticBackend::camera_of(const std::string& id) const {
  return view(id).camera;
}

const LatentMap& SyntheticBackend::latent_of(const std::string& id) const {
  return view(id).latent;
}

BackendCapabilities SyntheticBackend::capabilities() const {
  return {scene_.latent_shape, true, options_.max_concurrency};
}

std::shared_ptr<const std::vector<float>> SyntheticBackend::noise_field(
    std::uint64_t seed) const {
  constexpr std::size_t kCapacity = 64;
  EvalCache& cache = *cache_;
  {
    std::lock_guard lock(cache.mutex);
    if (auto it = cache.fields.find(seed); it != cache.fields.end()) return it->second;
  }
  auto field = std::make_shared<std::vector<float>>(scene_.latent_shape.size());
  fill_gaussian(seed, *field);
  std::lock_guard lock(cache.mutex);
  if (cache.fields.emplace(seed, field).second) {
    cache.order.push_back(seed);
    if (cache.order.size() > kCapacity) {
      cache.fields.erase(cache.order.front());
      cache.order.pop_front();
    }
  }
  return field;
}

std::shared_ptr<const std::vector<double>> SyntheticBackend::cached_render(
    const AbsoluteCamera& camera) const {
  constexpr std::size_t kCapacity = 8;
  const CameraKey key{std::bit_cast<std::uint64_t>(camera.polar),
                      std::bit_cast<std::uint64_t>(camera.azimuth),
                      std::bit_cast<std::uint64_t>(camera.radius)};
  EvalCache& cache = *cache_;
  {
    std::lock_guard lock(cache.mutex);
    for (const auto& [k, v] : cache.renders) {
      if (k == key) return v;
    }
  }
  auto image = std::make_shared<const std::vector<double>>(render(scene_, camera));
  std::lock_guard lock(cache.mutex);
  cache.renders.emplace_back(key, image);
  if (cache.renders.size() > kCapacity) cache.renders.pop_front();
  return image;
}

EvalResult SyntheticBackend::evaluate(const EvalRequest& request) {
  if (request.reference_id == request.target_id) {
    throw ValidationError({"target_id"});
  }
  if (!is_valid(request.pose)) throw ValidationError({"pose"});
  const View& ref = view(request.reference_id);
  const View& tgt = view(request.target_id);

  const AbsoluteCamera cam = apply_relative(ref.camera, request.pose);
  const auto rendered = cached_render(cam);
  const std::vector<double>& predicted = *rendered;

  const int t = step_index(request.noise.t_frac, schedule_.num_steps);
  const double ab = schedule_.alpha_bar_at(t);
  const double sigma_t = std::sqrt(1.0 - ab);
  const double signal = std::sqrt(ab);
  const double denom = options_.prior_variance * ab + sigma_t * sigma_t;

  std::uint64_t model_key = 0;
  if (options_.model_noise > 0.0) {
    model_key = derive_seed(request.noise.seed, "model-noise");
    model_key = counter_hash(model_key, hash_text(request.reference_id));
    model_key = counter_hash(model_key, hash_text(request.target_id));
    for (double v : {request.pose.d_polar, request.pose.d_azimuth,
                     request.pose.d_radius}) {
      model_key = counter_hash(model_key, std::bit_cast<std::uint64_t>(v));
    }
  }

  const auto z_true = tgt.latent.data();
  const std::size_t n = z_true.size();
  const auto field = noise_field(request.noise.seed);
  const std::vector<float>& noise = *field;
  std::vector<double> residual(n);
  double err = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double eps = noise[i];
    const double z_t = signal * z_true[i] + sigma_t * eps;
    const double eps_hat = sigma_t * (z_t - signal * predicted[i]) / denom;
    residual[i] = eps_hat - eps;
    double d = residual[i];
    if (options_.model_noise > 0.0) {
      d += options_.model_noise * gaussian_at(model_key, i);
    }
    err += d * d;
  }
  err /= static_cast<double>(n);

  EvalResult result{err, std::nullopt};
  if (request.want_gradient) {
    // The model-noise term is zero-mean and pose-independent in expectation,
    // so the gradient reported is that of the expected error.
    const double scale = -2.0 * sigma_t * signal / denom / static_cast<double>(n);
    for (double& r : residual) r *= scale;
    const Eigen::Vector3d g_cam = render_vjp(scene_, cam, residual);
    Eigen::Vector3d g;
    g.x() = polar_clamped(ref.camera, request.pose) ? 0.0 : g_cam.x();
    g.y() = g_cam.y();
    g.z() = g_cam.z() * ref.camera.radius;
    result.gradient = g;
  }
  return result;
}

}  // namespace idpose
