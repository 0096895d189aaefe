#include "idpose/metrics.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "idpose/errors.hpp"

namespace idpose {

void MetricsReport::finalize() {
  pairs = static_cast<int>(per_view.size());
  int r15 = 0, r30 = 0, p20 = 0;
  for (const auto& e : per_view) {
    r15 += e.rotation_error_deg < kRotationThresholdTight;
    r30 += e.rotation_error_deg < kRotationThresholdLoose;
    p20 += e.position_error < kPositionThreshold;
  }
  const double denom = pairs > 0 ? pairs : 1;
  rot_acc_15 = r15 / denom;
  rot_acc_30 = r30 / denom;
  pos_acc_20 = p20 / denom;
}

MetricsReport evaluate_scene(const SceneManifest& manifest,
                             const PoseGraph& estimates) {
  manifest.validate();
  if (!manifest.has_ground_truth()) {
    throw Error(ErrorCode::kEvaluationUnavailable,
                fmt::format("scene '{}' has no ground-truth cameras",
                            manifest.scene_id));
  }
  estimates.validate();
  const ManifestView& anchor = manifest.views.at(manifest.anchor_index);
  if (estimates.views.front() != anchor.id) {
    throw ValidationError({"anchor_view"});
  }
  if (estimates.size() != manifest.views.size()) {
    throw ValidationError({"poses"});
  }
  const AbsoluteCamera& gt_anchor = *anchor.gt_camera;
  const RotationMatrix r_anchor = camera_to_extrinsics(gt_anchor).rotation;

  MetricsReport report;
  report.scenes = 1;
  report.n_views = static_cast<int>(manifest.views.size());
  for (std::size_t k = 1; k < estimates.size(); ++k) {
    const ManifestView& view = manifest.view(estimates.views[k]);
    const AbsoluteCamera& gt = *view.gt_camera;
    const AbsoluteCamera est = apply_relative(gt_anchor, estimates.pose(k));
    const Extrinsics gt_x = camera_to_extrinsics(gt);
    const Extrinsics est_x = camera_to_extrinsics(est);
    ViewError e;
    e.scene_id = manifest.scene_id;
    e.view_id = view.id;
    // The estimated anchor equals the true anchor, so both relative
    // rotations share the same left factor.
    e.rotation_error_deg = rotation_angle_deg(r_anchor.transpose() * gt_x.rotation,
                                              r_anchor.transpose() * est_x.rotation);
    e.position_error =
        normalized_position_error(est_x.position, gt_x.position, gt.radius);
    report.per_view.push_back(std::move(e));
  }
  report.finalize();
  return report;
}

MetricsReport merge_reports(const std::vector<MetricsReport>& reports) {
  MetricsReport out;
  for (const auto& r : reports) {
    out.scenes += r.scenes;
    out.n_views += r.n_views;
    out.per_view.insert(out.per_view.end(), r.per_view.begin(), r.per_view.end());
  }
  out.finalize();
  return out;
}

nlohmann::json report_json(const MetricsReport& report) {
  nlohmann::json per_view = nlohmann::json::array();
  for (const auto& e : report.per_view) {
    per_view.push_back({{"scene_id", e.scene_id},
                        {"view_id", e.view_id},
                        {"rotation_error_deg", e.rotation_error_deg},
                        {"normalized_position_error", e.position_error}});
  }
  return {{"schema_version", kSchemaVersion},
          {"scenes", report.scenes},
          {"n_views", report.n_views},
          {"pairs", report.pairs},
          {"rot_acc_15", report.rot_acc_15},
          {"rot_acc_30", report.rot_acc_30},
          {"pos_acc_20", report.pos_acc_20},
          {"per_view", std::move(per_view)}};
}

}  // namespace idpose
