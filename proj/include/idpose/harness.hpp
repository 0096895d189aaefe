#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "idpose/estimator.hpp"
#include "idpose/metrics.hpp"
#include "idpose/multiview.hpp"
#include "idpose/remote.hpp"
#include "idpose/scene_io.hpp"
#include "idpose/synthetic.hpp"

namespace idpose {

// Ground-truth cameras of generated sessions share one radius, so relative
// poses have d_radius = 0 and both directional errors vanish at the truth.
struct CameraSampling {
  double polar_min_deg = 50.0;
  double polar_max_deg = 130.0;
  double radius = 3.0;
};

std::vector<AbsoluteCamera> sample_cameras(int n, std::uint64_t seed,
                                           const CameraSampling& sampling = {});

// Writes scene.json, one latent (+ sidecar) and one preview PNG per view, and
// manifest.json into `dir`; returns the manifest.
SceneManifest make_synthetic_session(const SceneRecipe& recipe, int n_views,
                                     std::uint64_t seed,
                                     const std::filesystem::path& dir,
                                     const std::string& scene_id,
                                     const CameraSampling& sampling = {});

// Builds the oracle backend of a synthetic manifest: the scene, every view's
// true camera, and stored latents where the manifest names them.
std::unique_ptr<SyntheticBackend> synthetic_backend_for(
    const SceneManifest& manifest, const SyntheticPredictorOptions& options = {});

// Preprocesses every view image (masks optional) to 8x the backend's latent
// resolution and uploads it.
void register_manifest_views(RemoteBackend& backend, const SceneManifest& manifest);

using BackendFactory =
    std::function<std::unique_ptr<Backend>(const SceneManifest&)>;

struct SweepRow {
  double t_frac = 0.0;
  MetricsReport report;
};

// For every t, estimates each non-anchor view against the anchor with
// estimate_pair (probe_t_frac = t) and pools the metrics over all scenes.
std::vector<SweepRow> sweep_noise_step(const std::vector<SceneManifest>& scenes,
                                       const std::vector<double>& t_values,
                                       const EstimationConfig& cfg,
                                       const BackendFactory& backend_for);

std::string sweep_csv(const std::vector<SweepRow>& rows);

// One JSON object per line: every refinement step of every pose.
void write_trace_jsonl(std::ostream& out, const PoseGraph& graph);

}  // namespace idpose
