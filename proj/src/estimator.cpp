#include "idpose/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <exception>
#include <limits>
#include <numbers>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "idpose/errors.hpp"
#include "idpose/rng.hpp"

namespace idpose {

namespace {

constexpr double kMaxNoiseFrac = 0.99;
const Eigen::Vector3d kFiniteDifferenceStep(1e-3, 1e-3, 1e-3);

bool valid_frac(double t) { return t > 0.0 && t <= kMaxNoiseFrac; }

int evaluation_threads(Backend& backend, int work_items) {
  return std::max(1, std::min(backend.capabilities().max_concurrency,
                              work_items));
}

}  // namespace

void EstimationConfig::validate() const {
  std::vector<std::string> bad;
  if (m_candidates < 1) bad.emplace_back("m_candidates");
  if (!valid_frac(probe_t_frac)) bad.emplace_back("probe_t_frac");
  if (probe_batch < 1) bad.emplace_back("probe_batch");
  if (!(explore_alpha > 0.0) || !std::isfinite(explore_alpha))
    bad.emplace_back("explore_alpha");
  if (explore_iters_per_candidate < 0)
    bad.emplace_back("explore_iters_per_candidate");
  if (!(refine_alpha > 0.0) || !std::isfinite(refine_alpha))
    bad.emplace_back("refine_alpha");
  if (!valid_frac(refine_t_range.first) || !valid_frac(refine_t_range.second) ||
      !(refine_t_range.first < refine_t_range.second))
    bad.emplace_back("refine_t_range");
  if (refine_iters_per_pose < 0) bad.emplace_back("refine_iters_per_pose");
  if (convergence_window < 1) bad.emplace_back("convergence_window");
  if (!(convergence_tol >= 0.0)) bad.emplace_back("convergence_tol");
  if (elevation_hint && !std::isfinite(*elevation_hint))
    bad.emplace_back("elevation_hint");
  if (alternation_period < 1) bad.emplace_back("alternation_period");
  if (!(radius_limit > 0.0 && radius_limit < 1.0))
    bad.emplace_back("radius_limit");
  if (!bad.empty()) throw ValidationError(std::move(bad));
}

void to_json(nlohmann::json& j, const EstimationConfig& cfg) {
  j = nlohmann::json{
      {"m_candidates", cfg.m_candidates},
      {"probe_t_frac", cfg.probe_t_frac},
      {"probe_batch", cfg.probe_batch},
      {"explore_alpha", cfg.explore_alpha},
      {"explore_iters_per_candidate", cfg.explore_iters_per_candidate},
      {"refine_alpha", cfg.refine_alpha},
      {"refine_t_range", {cfg.refine_t_range.first, cfg.refine_t_range.second}},
      {"refine_iters_per_pose", cfg.refine_iters_per_pose},
      {"convergence_window", cfg.convergence_window},
      {"convergence_tol", cfg.convergence_tol},
      {"seed", cfg.seed},
      {"alternation_period", cfg.alternation_period},
      {"radius_limit", cfg.radius_limit},
  };
  j["elevation_hint"] = cfg.elevation_hint ? nlohmann::json(*cfg.elevation_hint)
                                           : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, EstimationConfig& cfg) {
  if (!j.is_object()) throw ValidationError({"config"});
  std::vector<std::string> bad;
  auto read = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const nlohmann::json::exception&) {
      bad.emplace_back(key);
    }
  };
  read("m_candidates", cfg.m_candidates);
  read("probe_t_frac", cfg.probe_t_frac);
  read("probe_batch", cfg.probe_batch);
  read("explore_alpha", cfg.explore_alpha);
  read("explore_iters_per_candidate", cfg.explore_iters_per_candidate);
  read("refine_alpha", cfg.refine_alpha);
  read("refine_iters_per_pose", cfg.refine_iters_per_pose);
  read("convergence_window", cfg.convergence_window);
  read("convergence_tol", cfg.convergence_tol);
  read("seed", cfg.seed);
  read("alternation_period", cfg.alternation_period);
  read("radius_limit", cfg.radius_limit);
  if (j.contains("refine_t_range")) {
    const auto& r = j.at("refine_t_range");
    if (r.is_array() && r.size() == 2 && r[0].is_number() && r[1].is_number()) {
      cfg.refine_t_range = {r[0].get<double>(), r[1].get<double>()};
    } else {
      bad.emplace_back("refine_t_range");
    }
  }
  if (j.contains("elevation_hint")) {
    const auto& h = j.at("elevation_hint");
    if (h.is_null()) {
      cfg.elevation_hint.reset();
    } else if (h.is_number()) {
      cfg.elevation_hint = h.get<double>();
    } else {
      bad.emplace_back("elevation_hint");
    }
  }
  static const char* kKnown[] = {
      "m_candidates", "probe_t_frac", "probe_batch", "explore_alpha",
      "explore_iters_per_candidate", "refine_alpha", "refine_t_range",
      "refine_iters_per_pose", "convergence_window", "convergence_tol", "seed",
      "elevation_hint", "alternation_period", "radius_limit"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(std::begin(kKnown), std::end(kKnown), key) ==
        std::end(kKnown)) {
      bad.push_back(key);
    }
  }
  if (!bad.empty()) throw ValidationError(std::move(bad));
}

EvalResult directional_error(Backend& backend, const std::string& reference,
                             const std::string& target,
                             const SphericalPose& pose, const NoiseKey& noise,
                             bool want_gradient) {
  EvalRequest req{reference, target, pose, noise, want_gradient};
  EvalResult res = backend.evaluate(req);
  if (!want_gradient || res.gradient) return res;

  Eigen::Vector3d g;
  for (int k = 0; k < 3; ++k) {
    Eigen::Vector3d step = Eigen::Vector3d::Zero();
    step[k] = kFiniteDifferenceStep[k];
    req.want_gradient = false;
    req.pose = SphericalPose::from_vector(pose.as_vector() + step);
    const double up = backend.evaluate(req).error;
    req.pose = SphericalPose::from_vector(pose.as_vector() - step);
    const double down = backend.evaluate(req).error;
    g[k] = (up - down) / (2.0 * kFiniteDifferenceStep[k]);
  }
  res.gradient = g;
  return res;
}

std::vector<Candidate> sample_candidates(const EstimationConfig& cfg) {
  const double polar = cfg.elevation_hint.value_or(0.0);
  std::vector<Candidate> out;
  out.reserve(cfg.m_candidates);
  for (int k = 0; k < cfg.m_candidates; ++k) {
    Candidate c;
    c.pose = {polar, 2.0 * std::numbers::pi * k / cfg.m_candidates, 0.0};
    out.push_back(std::move(c));
  }
  return out;
}

double probe_pairwise_error(const SphericalPose& pose, const std::string& view0,
                            const std::string& view1,
                            const EstimationConfig& cfg, Backend& backend) {
  const SphericalPose rev = reverse(pose);
  double forward = 0.0, backward = 0.0;
  for (int k = 0; k < cfg.probe_batch; ++k) {
    const NoiseKey key{derive_seed(cfg.seed, "probe", k), cfg.probe_t_frac};
    forward += backend.evaluate({view0, view1, pose, key, false}).error;
    backward += backend.evaluate({view1, view0, rev, key, false}).error;
  }
  return (forward + backward) / cfg.probe_batch;
}

DescentResult descend(const SphericalPose& initial, const std::string& view0,
                      const std::string& view1, const EstimationConfig& cfg,
                      Backend& backend, double alpha, int max_iters,
                      std::uint64_t stream_seed, bool check_convergence) {
  CounterStream t_stream(derive_seed(stream_seed, "t"));
  DescentResult out;
  out.pose = initial;
  std::deque<double> window;
  double window_sum = 0.0;

  for (int k = 0; k < max_iters; ++k) {
    const Direction dir = (k / cfg.alternation_period) % 2 == 0
                              ? Direction::kForward
                              : Direction::kReverse;
    const NoiseKey key{derive_seed(stream_seed, "noise", k),
                       t_stream.uniform(cfg.refine_t_range.first,
                                        cfg.refine_t_range.second)};
    EvalResult r;
    Eigen::Vector3d grad;
    if (dir == Direction::kForward) {
      r = directional_error(backend, view0, view1, out.pose, key, true);
      grad = *r.gradient;
    } else {
      r = directional_error(backend, view1, view0, reverse(out.pose), key,
                            true);
      grad = -*r.gradient;
    }
    out.trace.push_back({k, out.pose, r.error, dir});
    if (!std::isfinite(r.error) || !grad.allFinite()) {
      throw Error(ErrorCode::kNonFiniteGradient,
                  fmt::format("non-finite gradient at iteration {} pose "
                              "({:.17g}, {:.17g}, {:.17g}) error {:.17g}",
                              k, out.pose.d_polar, out.pose.d_azimuth,
                              out.pose.d_radius, r.error));
    }

    Eigen::Vector3d next = out.pose.as_vector() - alpha * grad;
    next.z() = std::clamp(next.z(), -cfg.radius_limit, cfg.radius_limit);
    const double step = (next - out.pose.as_vector()).norm();
    out.pose = SphericalPose::from_vector(next);
    out.iterations = k + 1;

    if (!check_convergence) continue;
    window.push_back(step);
    window_sum += step;
    if (static_cast<int>(window.size()) > cfg.convergence_window) {
      window_sum -= window.front();
      window.pop_front();
    }
    if (static_cast<int>(window.size()) == cfg.convergence_window &&
        window_sum / cfg.convergence_window < cfg.convergence_tol) {
      out.converged = true;
      break;
    }
  }
  return out;
}

Exploration explore(const std::string& view0, const std::string& view1,
                    const EstimationConfig& cfg, Backend& backend) {
  cfg.validate();
  Exploration out;
  out.candidates = sample_candidates(cfg);
  const int m = static_cast<int>(out.candidates.size());
  std::vector<std::exception_ptr> failures(m);

  // Candidates are independent; each one's noise stream is keyed by its
  // index, so the outcome does not depend on scheduling.
#pragma omp parallel for schedule(dynamic) num_threads(evaluation_threads(backend, m))
  for (int u = 0; u < m; ++u) {
    Candidate& c = out.candidates[u];
    try {
      DescentResult d = descend(c.pose, view0, view1, cfg, backend,
                                cfg.explore_alpha,
                                cfg.explore_iters_per_candidate,
                                derive_seed(cfg.seed, "explore", u), false);
      c.pose = d.pose;
      c.trace = std::move(d.trace);
      c.probe_error = probe_pairwise_error(c.pose, view0, view1, cfg, backend);
      if (!std::isfinite(c.probe_error)) {
        c.probe_error = std::numeric_limits<double>::infinity();
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNonFiniteGradient &&
          e.code() != ErrorCode::kDegenerateRadius) {
        failures[u] = std::current_exception();
      }
      c.probe_error = std::numeric_limits<double>::infinity();
    } catch (...) {
      failures[u] = std::current_exception();
    }
  }
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }

  std::size_t best = 0;
  bool any_finite = false;
  for (std::size_t u = 0; u < out.candidates.size(); ++u) {
    const double e = out.candidates[u].probe_error;
    if (!std::isfinite(e)) continue;
    if (!any_finite || e < out.candidates[best].probe_error) best = u;
    any_finite = true;
  }
  if (!any_finite) {
    throw Error(ErrorCode::kExplorationFailed,
                "every candidate produced a non-finite error");
  }
  out.selected = best;
  return out;
}

PairEstimate refine(const SphericalPose& initial, const std::string& view0,
                    const std::string& view1, const EstimationConfig& cfg,
                    Backend& backend) {
  cfg.validate();
  if (!is_valid(initial)) throw ValidationError({"initial_pose"});
  DescentResult d =
      descend(initial, view0, view1, cfg, backend, cfg.refine_alpha,
              cfg.refine_iters_per_pose, derive_seed(cfg.seed, "refine"), true);
  PairEstimate out;
  out.pose = d.pose;
  out.iterations_used = d.iterations;
  out.converged = d.converged;
  out.trace = std::move(d.trace);
  out.final_pairwise_error =
      probe_pairwise_error(out.pose, view0, view1, cfg, backend);
  return out;
}

PairEstimate estimate_pair(const std::string& view0, const std::string& view1,
                           const EstimationConfig& cfg, Backend& backend) {
  Exploration ex = explore(view0, view1, cfg, backend);
  PairEstimate est = refine(ex.best().pose, view0, view1, cfg, backend);
  est.exploration = std::move(ex);
  return est;
}

std::string_view direction_name(Direction d) {
  return d == Direction::kForward ? "forward" : "reverse";
}

nlohmann::json trace_entry_json(const TraceEntry& e, std::string_view stage) {
  return {{"stage", stage},
          {"iteration", e.iteration},
          {"pose", {e.pose.d_polar, e.pose.d_azimuth, e.pose.d_radius}},
          {"error", e.error},
          {"direction", direction_name(e.direction)}};
}

}  // namespace idpose
