#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "idpose/backend.hpp"
#include "idpose/estimator.hpp"
#include "idpose/pose.hpp"

namespace idpose {

enum class MultiviewMode { kNaive, kTr, kFull };

std::string_view mode_name(MultiviewMode mode);
// Throws ValidationError({"mode"}) for anything but naive, tr, full.
MultiviewMode parse_mode(std::string_view name);

// Relative poses of views 1..n-1 with respect to view 0 (the anchor).
struct PoseGraph {
  std::vector<std::string> views;
  std::vector<SphericalPose> poses;  // poses[i - 1]: anchor -> view i
  MultiviewMode mode = MultiviewMode::kFull;
  // Per non-anchor pose, the refinement steps that moved it.
  std::vector<std::vector<TraceEntry>> traces;
  int refine_steps = 0;

  std::size_t size() const { return views.size(); }
  const SphericalPose& pose(std::size_t view) const { return poses.at(view - 1); }
  void validate() const;
};

// l_{0,i}(p_i) + l_{0,j}(p_j) + l_{i,j}(compose(reverse(p_i), p_j)), every term
// a probe_pairwise_error with cfg. Views are indices into `views`.
double triangular_error(const SphericalPose& p_i, const SphericalPose& p_j,
                        std::size_t i, std::size_t j,
                        const std::vector<std::string>& views,
                        const EstimationConfig& cfg, Backend& backend);

struct GroupExploration {
  // groups[i - 1]: updated candidates of view i against the anchor.
  std::vector<Exploration> groups;
  // instability[i - 1][u] = sum over j != i of min_v triangular error of
  // (p_{i,u}, p_{j,v}); infinite when a term cannot be evaluated.
  std::vector<std::vector<double>> instability;
  PoseGraph graph;
};

// Seed used for the anchor pair (0, i) in every mode, so the modes share
// their per-pair exploration.
EstimationConfig pair_config(const EstimationConfig& cfg, std::size_t view);

GroupExploration explore_group(const std::vector<std::string>& views,
                               const EstimationConfig& cfg, Backend& backend);

// Exactly cfg.refine_iters_per_pose * (n - 1) gradient steps on randomly drawn
// ordered view pairs. Naive graphs draw only pairs that contain the anchor.
PoseGraph refine_graph(PoseGraph graph, const EstimationConfig& cfg,
                       Backend& backend);

PoseGraph estimate_multiview(const std::vector<std::string>& views,
                             const EstimationConfig& cfg, Backend& backend,
                             MultiviewMode mode);

// {schema_version, anchor_camera, poses, absolute_cameras}.
nlohmann::json pose_graph_json(const PoseGraph& graph,
                               const AbsoluteCamera& anchor_camera);

}  // namespace idpose
