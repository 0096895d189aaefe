#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "idpose/backend.hpp"
#include "idpose/pose.hpp"

namespace idpose {

// Two-view pose inversion settings.
struct EstimationConfig {
  int m_candidates = 8;
  double probe_t_frac = 0.2;
  int probe_batch = 16;
  double explore_alpha = 10.0;
  int explore_iters_per_candidate = 10;
  double refine_alpha = 1.0;
  std::pair<double, double> refine_t_range{0.2, 0.8};
  int refine_iters_per_pose = 600;
  int convergence_window = 50;
  double convergence_tol = 1e-4;
  std::uint64_t seed = 0;
  std::optional<double> elevation_hint;
  // Iterations spent on one direction before switching to the other.
  int alternation_period = 1;
  // Updates keep |d_radius| <= radius_limit so both a pose and its reverse
  // stay valid.
  double radius_limit = 0.9;

  // Throws ValidationError naming every invalid field.
  void validate() const;
};

void to_json(nlohmann::json& j, const EstimationConfig& cfg);
// Missing keys keep their defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, EstimationConfig& cfg);

enum class Direction { kForward, kReverse };

struct TraceEntry {
  int iteration = 0;
  SphericalPose pose;  // pose before the step
  double error = 0.0;
  Direction direction = Direction::kForward;
};

struct Candidate {
  SphericalPose pose;
  double probe_error = 0.0;
  std::vector<TraceEntry> trace;
};

struct Exploration {
  std::vector<Candidate> candidates;
  std::size_t selected = 0;

  const Candidate& best() const { return candidates.at(selected); }
};

struct PairEstimate {
  SphericalPose pose;
  double final_pairwise_error = 0.0;
  int iterations_used = 0;
  bool converged = false;
  std::vector<TraceEntry> trace;
  std::optional<Exploration> exploration;
};

// Directional noise error l(pose; reference -> target) and its pose gradient.
// Falls back to central differences (h = 1e-3 per field, one shared noise
// draw) when the backend does not return a gradient.
EvalResult directional_error(Backend& backend, const std::string& reference,
                             const std::string& target,
                             const SphericalPose& pose, const NoiseKey& noise,
                             bool want_gradient);

std::vector<Candidate> sample_candidates(const EstimationConfig& cfg);

// l(p; x0, x1) + l(-p; x1, x0), each averaged over probe_batch noise draws
// whose seeds depend only on cfg.seed.
double probe_pairwise_error(const SphericalPose& pose, const std::string& view0,
                            const std::string& view1,
                            const EstimationConfig& cfg, Backend& backend);

// Gradient descent alternating between the forward and reverse objectives.
// Every iteration draws fresh noise and a step fraction from
// cfg.refine_t_range, both keyed by stream_seed. Stops after max_iters or,
// when check_convergence is set, once the mean step norm over the trailing
// convergence window drops below the tolerance.
struct DescentResult {
  SphericalPose pose;
  int iterations = 0;
  bool converged = false;
  std::vector<TraceEntry> trace;
};
DescentResult descend(const SphericalPose& initial, const std::string& view0,
                      const std::string& view1, const EstimationConfig& cfg,
                      Backend& backend, double alpha, int max_iters,
                      std::uint64_t stream_seed, bool check_convergence);

// Samples, updates and probes candidates; picks the lowest probe error, ties
// to the lower index.
Exploration explore(const std::string& view0, const std::string& view1,
                    const EstimationConfig& cfg, Backend& backend);

PairEstimate refine(const SphericalPose& initial, const std::string& view0,
                    const std::string& view1, const EstimationConfig& cfg,
                    Backend& backend);

PairEstimate estimate_pair(const std::string& view0, const std::string& view1,
                           const EstimationConfig& cfg, Backend& backend);

std::string_view direction_name(Direction d);
nlohmann::json trace_entry_json(const TraceEntry& e, std::string_view stage);

}  // namespace idpose
