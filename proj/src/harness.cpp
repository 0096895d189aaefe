#include "idpose/harness.hpp"

#include <numbers>
#include <ostream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>

#include "idpose/errors.hpp"
#include "idpose/preprocess.hpp"
#include "idpose/rng.hpp"

namespace fs = std::filesystem;

namespace idpose {

namespace {

constexpr int kImageScale = 8;  // image pixels per latent cell

double deg(double d) { return d * std::numbers::pi / 180.0; }

}  // namespace

std::vector<AbsoluteCamera> sample_cameras(int n, std::uint64_t seed,
                                           const CameraSampling& sampling) {
  CounterStream rng(derive_seed(seed, "cameras"));
  std::vector<AbsoluteCamera> out;
  for (int k = 0; k < n; ++k) {
    const double polar =
        deg(rng.uniform(sampling.polar_min_deg, sampling.polar_max_deg));
    const double azimuth = rng.uniform(0.0, 2.0 * std::numbers::pi);
    out.push_back({polar, azimuth, sampling.radius});
  }
  return out;
}

SceneManifest make_synthetic_session(const SceneRecipe& recipe, int n_views,
                                     std::uint64_t seed, const fs::path& dir,
                                     const std::string& scene_id,
                                     const CameraSampling& sampling) {
  if (n_views < 2) throw ValidationError({"views"});
  fs::create_directories(dir);
  const SyntheticScene scene = make_scene(recipe, seed);
  write_json_file(scene_json(scene), dir / "scene.json");

  SceneManifest m;
  m.scene_id = scene_id;
  m.base_dir = dir;
  m.synthetic_scene = "scene.json";
  const auto cameras = sample_cameras(n_views, seed, sampling);
  for (int k = 0; k < n_views; ++k) {
    ManifestView v;
    v.id = fmt::format("view_{}", k);
    v.image_path = v.id + ".png";
    v.latent_path = v.id + ".f32";
    v.gt_camera = cameras[k];
    const LatentMap latent = render_latent(scene, cameras[k]);
    write_latent(latent, dir / *v.latent_path);
    if (!cv::imwrite((dir / v.image_path).string(),
                     latent_preview(latent, kImageScale))) {
      throw Error(ErrorCode::kIo, fmt::format("cannot write {}", v.image_path));
    }
    m.views.push_back(std::move(v));
  }
  save_manifest(m, dir / "manifest.json");
  return m;
}

std::unique_ptr<SyntheticBackend> synthetic_backend_for(
    const SceneManifest& manifest, const SyntheticPredictorOptions& options) {
  manifest.validate();
  if (!manifest.synthetic_scene) {
    throw ValidationError({"synthetic_scene"});
  }
  if (!manifest.has_ground_truth()) {
    throw Error(ErrorCode::kEvaluationUnavailable,
                "the synthetic backend needs every view's true camera");
  }
  auto backend = std::make_unique<SyntheticBackend>(
      scene_from_json(read_json_file(manifest.resolve(*manifest.synthetic_scene))),
      options);
  for (const auto& v : manifest.views) {
    std::optional<LatentMap> latent;
    if (v.latent_path) latent = read_latent(manifest.resolve(*v.latent_path));
    backend->add_view(v.id, *v.gt_camera, std::move(latent));
  }
  return backend;
}

void register_manifest_views(RemoteBackend& backend,
                             const SceneManifest& manifest) {
  manifest.validate();
  const LatentShape shape = backend.capabilities().latent_shape;
  const cv::Size out_size(shape.width * kImageScale, shape.height * kImageScale);

  std::vector<std::optional<cv::Mat>> masks;
  std::vector<cv::Mat> present;
  for (const auto& v : manifest.views) {
    if (v.mask_path) {
      masks.emplace_back(
          read_image(manifest.resolve(*v.mask_path).string(), cv::IMREAD_GRAYSCALE));
      present.push_back(*masks.back());
    } else {
      masks.emplace_back(std::nullopt);
    }
  }
  const int window = present.empty() ? 0 : session_window_side(present);
  for (std::size_t k = 0; k < manifest.views.size(); ++k) {
    const auto& v = manifest.views[k];
    const cv::Mat image =
        read_image(manifest.resolve(v.image_path).string(), cv::IMREAD_UNCHANGED);
    backend.register_view(v.id,
                          encode_png(preprocess(image, masks[k], window, out_size)));
  }
}

std::vector<SweepRow> sweep_noise_step(const std::vector<SceneManifest>& scenes,
                                       const std::vector<double>& t_values,
                                       const EstimationConfig& cfg,
                                       const BackendFactory& backend_for) {
  if (scenes.empty()) throw ValidationError({"manifests"});
  if (t_values.empty()) throw ValidationError({"t_values"});
  for (const auto& s : scenes) {
    if (!s.has_ground_truth()) {
      throw Error(ErrorCode::kEvaluationUnavailable,
                  fmt::format("scene '{}' has no ground truth", s.scene_id));
    }
  }
  std::vector<EstimationConfig> configs;
  for (double t : t_values) {
    EstimationConfig c = cfg;
    c.probe_t_frac = t;
    c.validate();
    configs.push_back(c);
  }

  std::vector<std::vector<MetricsReport>> per_t(t_values.size());
  for (const auto& scene : scenes) {
    const std::unique_ptr<Backend> backend = backend_for(scene);
    const auto ids = scene.ordered_view_ids();
    for (std::size_t ti = 0; ti < configs.size(); ++ti) {
      PoseGraph graph;
      graph.views = ids;
      graph.mode = MultiviewMode::kNaive;
      for (std::size_t i = 1; i < ids.size(); ++i) {
        graph.poses.push_back(
            estimate_pair(ids[0], ids[i], pair_config(configs[ti], i), *backend).pose);
      }
      per_t[ti].push_back(evaluate_scene(scene, graph));
    }
  }
  std::vector<SweepRow> rows;
  for (std::size_t ti = 0; ti < t_values.size(); ++ti) {
    rows.push_back({t_values[ti], merge_reports(per_t[ti])});
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "t_frac,scenes,pairs,rot_acc_15,rot_acc_30,pos_acc_20\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{:.6f},{:.6f},{:.6f}\n", r.t_frac,
                       r.report.scenes, r.report.pairs, r.report.rot_acc_15,
                       r.report.rot_acc_30, r.report.pos_acc_20);
  }
  return out;
}

void write_trace_jsonl(std::ostream& out, const PoseGraph& graph) {
  for (std::size_t k = 0; k < graph.traces.size(); ++k) {
    for (const auto& e : graph.traces[k]) {
      nlohmann::json j = trace_entry_json(e, "refine");
      j["view_id"] = graph.views.at(k + 1);
      out << j.dump() << '\n';
    }
  }
}

}  // namespace idpose
