#pragma once

#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "idpose/multiview.hpp"
#include "idpose/scene_io.hpp"

namespace idpose {

inline constexpr double kRotationThresholdTight = 15.0;  // degrees
inline constexpr double kRotationThresholdLoose = 30.0;  // degrees
inline constexpr double kPositionThreshold = 0.20;       // fraction of radius

struct ViewError {
  std::string scene_id;
  std::string view_id;
  double rotation_error_deg = 0.0;
  double position_error = 0.0;
};

// Accuracies pool the per-view errors of every contributing scene.
struct MetricsReport {
  int scenes = 0;
  int n_views = 0;
  int pairs = 0;
  double rot_acc_15 = 0.0;
  double rot_acc_30 = 0.0;
  double pos_acc_20 = 0.0;
  std::vector<ViewError> per_view;

  // Recomputes the accuracies from per_view.
  void finalize();
};

// Scores every non-anchor estimate against the manifest's ground truth. The
// estimated camera is apply_relative(gt anchor, pose); rotations are compared
// relative to the anchor. Throws kEvaluationUnavailable without ground truth.
MetricsReport evaluate_scene(const SceneManifest& manifest,
                             const PoseGraph& estimates);

MetricsReport merge_reports(const std::vector<MetricsReport>& reports);

nlohmann::json report_json(const MetricsReport& report);

}  // namespace idpose
