#include "idpose/multiview.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <map>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "idpose/errors.hpp"
#include "idpose/rng.hpp"

namespace idpose {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_views(const std::vector<std::string>& views, std::size_t min) {
  if (views.size() < min) throw ValidationError({"views"});
}

// Pairwise probe that reports an unusable composed pose as infinite.
double guarded_probe(const SphericalPose& p_i, const SphericalPose& p_j,
                     const std::string& view_i, const std::string& view_j,
                     const EstimationConfig& cfg, Backend& backend) {
  try {
    const SphericalPose q = compose(reverse(p_i), p_j);
    if (!is_valid(q) || !is_valid(reverse(q))) return kInf;
    const double e = probe_pairwise_error(q, view_i, view_j, cfg, backend);
    return std::isfinite(e) ? e : kInf;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kDegenerateRadius) return kInf;
    throw;
  }
}

}  // namespace

std::string_view mode_name(MultiviewMode mode) {
  switch (mode) {
    case MultiviewMode::kNaive: return "naive";
    case MultiviewMode::kTr: return "tr";
    case MultiviewMode::kFull: return "full";
  }
  return "full";
}

MultiviewMode parse_mode(std::string_view name) {
  if (name == "naive") return MultiviewMode::kNaive;
  if (name == "tr") return MultiviewMode::kTr;
  if (name == "full") return MultiviewMode::kFull;
  throw ValidationError({"mode"});
}

void PoseGraph::validate() const {
  std::vector<std::string> bad;
  if (views.size() < 2) bad.emplace_back("views");
  if (poses.size() + 1 != views.size()) bad.emplace_back("poses");
  if (!std::all_of(poses.begin(), poses.end(),
                   [](const SphericalPose& p) { return is_valid(p); })) {
    bad.emplace_back("poses");
  }
  if (!bad.empty()) throw ValidationError(std::move(bad));
}

double triangular_error(const SphericalPose& p_i, const SphericalPose& p_j,
                        std::size_t i, std::size_t j,
                        const std::vector<std::string>& views,
                        const EstimationConfig& cfg, Backend& backend) {
  if (i == j || i == 0 || j == 0 || i >= views.size() || j >= views.size()) {
    throw ValidationError({"view_index"});
  }
  const std::string& anchor = views[0];
  return probe_pairwise_error(p_i, anchor, views[i], cfg, backend) +
         probe_pairwise_error(p_j, anchor, views[j], cfg, backend) +
         probe_pairwise_error(compose(reverse(p_i), p_j), views[i], views[j],
                              cfg, backend);
}

EstimationConfig pair_config(const EstimationConfig& cfg, std::size_t view) {
  EstimationConfig out = cfg;
  out.seed = derive_seed(cfg.seed, "pair", view);
  return out;
}

GroupExploration explore_group(const std::vector<std::string>& views,
                               const EstimationConfig& cfg, Backend& backend) {
  require_views(views, 3);
  cfg.validate();
  const std::size_t n = views.size();
  const int m = cfg.m_candidates;

  GroupExploration out;
  for (std::size_t i = 1; i < n; ++i) {
    out.groups.push_back(explore(views[0], views[i], pair_config(cfg, i), backend));
  }
  auto candidate = [&](std::size_t i, int u) -> const SphericalPose& {
    return out.groups[i - 1].candidates[u].pose;
  };

  // Anchor terms re-probed with the group config so every triangle is built
  // from identically keyed probes.
  std::vector<std::vector<double>> anchor(n - 1, std::vector<double>(m));
  // Cross terms are symmetric under swapping (i, u) with (j, v) because the
  // pairwise probe sums both directions, so only i < j is evaluated.
  struct CrossKey {
    std::size_t i, j;
    int u, v;
  };
  std::vector<CrossKey> cross_keys;
  for (std::size_t i = 1; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      for (int u = 0; u < m; ++u)
        for (int v = 0; v < m; ++v) cross_keys.push_back({i, j, u, v});
  std::vector<double> cross(cross_keys.size());

  const int total_anchor = static_cast<int>((n - 1) * m);
  const int total = total_anchor + static_cast<int>(cross_keys.size());
  const int threads =
      std::max(1, std::min(backend.capabilities().max_concurrency, total));
  std::vector<std::exception_ptr> failures(total);

#pragma omp parallel for schedule(dynamic) num_threads(threads)
  for (int k = 0; k < total; ++k) {
    try {
      if (k < total_anchor) {
        const std::size_t i = static_cast<std::size_t>(k / m) + 1;
        const int u = k % m;
        const double e = probe_pairwise_error(candidate(i, u), views[0],
                                              views[i], cfg, backend);
        anchor[i - 1][u] = std::isfinite(e) ? e : kInf;
      } else {
        const CrossKey& c = cross_keys[k - total_anchor];
        cross[k - total_anchor] =
            guarded_probe(candidate(c.i, c.u), candidate(c.j, c.v), views[c.i],
                          views[c.j], cfg, backend);
      }
    } catch (...) {
      failures[k] = std::current_exception();
    }
  }
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }

  auto cross_at = [&](std::size_t i, int u, std::size_t j, int v) {
    if (i > j) {
      std::swap(i, j);
      std::swap(u, v);
    }
    std::size_t offset = 0;
    for (std::size_t a = 1; a < n; ++a)
      for (std::size_t b = a + 1; b < n; ++b) {
        if (a == i && b == j) {
          return cross[offset + static_cast<std::size_t>(u) * m + v];
        }
        offset += static_cast<std::size_t>(m) * m;
      }
    return kInf;
  };

  out.graph.views = views;
  out.graph.mode = MultiviewMode::kFull;
  out.graph.traces.assign(n - 1, {});
  out.instability.assign(n - 1, std::vector<double>(m, 0.0));
  for (std::size_t i = 1; i < n; ++i) {
    for (int u = 0; u < m; ++u) {
      double e = 0.0;
      for (std::size_t j = 1; j < n; ++j) {
        if (j == i) continue;
        double best = kInf;
        for (int v = 0; v < m; ++v) {
          best = std::min(best, anchor[i - 1][u] + anchor[j - 1][v] +
                                    cross_at(i, u, j, v));
        }
        e += best;
      }
      out.instability[i - 1][u] = e;
    }
    const auto& row = out.instability[i - 1];
    // min_element keeps the first minimum, i.e. the lowest u on ties.
    const auto best = std::min_element(row.begin(), row.end());
    if (!std::isfinite(*best)) {
      throw Error(ErrorCode::kExplorationFailed,
                  fmt::format("no candidate of view {} has a finite "
                              "triangular error",
                              views[i]));
    }
    out.graph.poses.push_back(candidate(i, static_cast<int>(best - row.begin())));
  }
  return out;
}

PoseGraph refine_graph(PoseGraph graph, const EstimationConfig& cfg,
                       Backend& backend) {
  cfg.validate();
  graph.validate();
  const std::size_t n = graph.size();
  graph.traces.resize(n - 1);

  // Ordered distinct pairs the sampler may draw.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      if (graph.mode == MultiviewMode::kNaive && i != 0 && j != 0) continue;
      pairs.emplace_back(i, j);
    }

  CounterStream pair_stream(derive_seed(cfg.seed, "graph-pairs"));
  CounterStream t_stream(derive_seed(cfg.seed, "graph-t"));
  std::map<std::pair<std::size_t, std::size_t>, int> visits;
  const int budget = cfg.refine_iters_per_pose * static_cast<int>(n - 1);

  for (int k = 0; k < budget; ++k) {
    const auto [i, j] = pairs[pair_stream.below(pairs.size())];
    const NoiseKey key{derive_seed(cfg.seed, "graph-noise", k),
                       t_stream.uniform(cfg.refine_t_range.first,
                                        cfg.refine_t_range.second)};
    std::size_t updated = 0;  // view whose pose moves
    Direction dir = Direction::kForward;
    EvalResult r;
    Eigen::Vector3d grad;
    if (i == 0) {
      updated = j;
      r = directional_error(backend, graph.views[0], graph.views[j],
                            graph.pose(j), key, true);
      grad = *r.gradient;
    } else if (j == 0) {
      updated = i;
      dir = Direction::kReverse;
      r = directional_error(backend, graph.views[i], graph.views[0],
                            reverse(graph.pose(i)), key, true);
      grad = -*r.gradient;
    } else {
      const int visit = visits[{i, j}]++;
      const SphericalPose q = compose(reverse(graph.pose(i)), graph.pose(j));
      r = directional_error(backend, graph.views[i], graph.views[j], q, key,
                            true);
      // q = p_j - p_i: +identity for p_j, -identity for p_i.
      if (visit % 2 == 0) {
        updated = j;
        grad = *r.gradient;
      } else {
        updated = i;
        dir = Direction::kReverse;
        grad = -*r.gradient;
      }
    }
    SphericalPose& p = graph.poses[updated - 1];
    graph.traces[updated - 1].push_back({k, p, r.error, dir});
    if (!std::isfinite(r.error) || !grad.allFinite()) {
      throw Error(ErrorCode::kNonFiniteGradient,
                  fmt::format("non-finite gradient at graph step {} on pair "
                              "({}, {}) pose ({:.17g}, {:.17g}, {:.17g}) "
                              "error {:.17g}",
                              k, i, j, p.d_polar, p.d_azimuth, p.d_radius,
                              r.error));
    }
    Eigen::Vector3d next = p.as_vector() - cfg.refine_alpha * grad;
    next.z() = std::clamp(next.z(), -cfg.radius_limit, cfg.radius_limit);
    p = SphericalPose::from_vector(next);
    ++graph.refine_steps;
  }
  return graph;
}

PoseGraph estimate_multiview(const std::vector<std::string>& views,
                             const EstimationConfig& cfg, Backend& backend,
                             MultiviewMode mode) {
  require_views(views, 2);
  cfg.validate();
  const std::size_t n = views.size();
  PoseGraph graph;
  graph.views = views;
  graph.mode = mode;

  if (n == 2 || mode == MultiviewMode::kNaive) {
    for (std::size_t i = 1; i < n; ++i) {
      PairEstimate est = estimate_pair(views[0], views[i], pair_config(cfg, i), backend);
      graph.poses.push_back(est.pose);
      graph.traces.push_back(std::move(est.trace));
      graph.refine_steps += est.iterations_used;
    }
    return graph;
  }

  if (mode == MultiviewMode::kTr) {
    for (std::size_t i = 1; i < n; ++i) {
      graph.poses.push_back(
          explore(views[0], views[i], pair_config(cfg, i), backend).best().pose);
    }
  } else {
    graph.poses = explore_group(views, cfg, backend).graph.poses;
  }
  graph.traces.assign(n - 1, {});
  return refine_graph(std::move(graph), cfg, backend);
}

nlohmann::json pose_graph_json(const PoseGraph& graph,
                               const AbsoluteCamera& anchor_camera) {
  graph.validate();
  auto camera_json = [](const AbsoluteCamera& c) {
    return nlohmann::json{
        {"polar", c.polar}, {"azimuth", c.azimuth}, {"radius", c.radius}};
  };
  nlohmann::json poses = nlohmann::json::array();
  nlohmann::json cameras = nlohmann::json::array();
  cameras.push_back(
      {{"view_id", graph.views[0]}, {"camera", camera_json(anchor_camera)}});
  for (std::size_t i = 1; i < graph.size(); ++i) {
    const SphericalPose& p = graph.pose(i);
    poses.push_back({{"view_id", graph.views[i]},
                     {"d_polar", p.d_polar},
                     {"d_azimuth", p.d_azimuth},
                     {"d_radius", p.d_radius}});
    cameras.push_back({{"view_id", graph.views[i]},
                       {"camera", camera_json(apply_relative(anchor_camera, p))}});
  }
  return {{"schema_version", 1},
          {"mode", mode_name(graph.mode)},
          {"anchor_view", graph.views[0]},
          {"anchor_camera", camera_json(anchor_camera)},
          {"poses", std::move(poses)},
          {"absolute_cameras", std::move(cameras)}};
}

}  // namespace idpose
