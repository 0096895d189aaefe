#include <cmath>
#include <numbers>

#include <doctest.h>
#include <nlohmann/json.hpp>

#include "idpose/errors.hpp"
#include "idpose/multiview.hpp"
#include "idpose/rng.hpp"
#include "idpose/synthetic.hpp"

using namespace idpose;
using std::numbers::pi;

namespace {

struct Session {
  SyntheticBackend backend;
  std::vector<AbsoluteCamera> cameras;
  std::vector<std::string> views;

  SphericalPose truth(std::size_t i) const {
    return relative_between(cameras[0], cameras[i]);
  }
  double rotation_error(const PoseGraph& g, std::size_t i) const {
    return rotation_angle_deg(
        camera_to_extrinsics(apply_relative(cameras[0], g.pose(i))).rotation,
        camera_to_extrinsics(cameras[i]).rotation);
  }
};

Session session(std::size_t n, std::uint64_t seed, SceneRecipe recipe = {}) {
  Session s{SyntheticBackend(make_scene(recipe, seed)), {}, {}};
  CounterStream rng(derive_seed(seed, "cams"));
  for (std::size_t i = 0; i < n; ++i) {
    s.cameras.push_back({rng.uniform(50, 130) * pi / 180, rng.uniform(0, 2 * pi), 3.0});
    s.views.push_back("v" + std::to_string(i));
    s.backend.add_view(s.views.back(), s.cameras.back());
  }
  return s;
}

EstimationConfig small_config(std::uint64_t seed) {
  EstimationConfig cfg;
  cfg.seed = seed;
  cfg.m_candidates = 4;
  cfg.probe_batch = 2;
  cfg.refine_iters_per_pose = 150;
  return cfg;
}

PoseGraph graph_at(const Session& s, MultiviewMode mode) {
  PoseGraph g;
  g.views = s.views;
  g.mode = mode;
  for (std::size_t i = 1; i < s.views.size(); ++i) g.poses.push_back(s.truth(i));
  return g;
}

}  // namespace

TEST_CASE("mode names round-trip") {
  for (auto m : {MultiviewMode::kNaive, MultiviewMode::kTr, MultiviewMode::kFull}) {
    CHECK(parse_mode(mode_name(m)) == m);
  }
  try {
    parse_mode("fulll");
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(e.fields() == std::vector<std::string>{"mode"});
  }
}

TEST_CASE("triangular error is the sum of three pairwise probes") {
  Session s = session(3, 1);
  const EstimationConfig cfg = small_config(1);
  const SphericalPose p1 = s.truth(1), p2 = s.truth(2);
  const double tri = triangular_error(p1, p2, 1, 2, s.views, cfg, s.backend);
  const double sum = probe_pairwise_error(p1, "v0", "v1", cfg, s.backend) +
                     probe_pairwise_error(p2, "v0", "v2", cfg, s.backend) +
                     probe_pairwise_error(compose(reverse(p1), p2), "v1", "v2", cfg,
                                          s.backend);
  CHECK(tri == doctest::Approx(sum).epsilon(1e-12));
  CHECK(tri < 1e-9);

  SphericalPose off = p2;
  off.d_azimuth += pi / 6;
  CHECK(triangular_error(p1, off, 1, 2, s.views, cfg, s.backend) > 1e-4);
}

TEST_CASE("group exploration table matches a brute-force loop") {
  Session s = session(4, 2);
  const EstimationConfig cfg = small_config(2);
  const GroupExploration gx = explore_group(s.views, cfg, s.backend);
  REQUIRE(gx.groups.size() == 3u);
  for (std::size_t i = 1; i < 4; ++i) {
    for (int u = 0; u < cfg.m_candidates; ++u) {
      double want = 0.0;
      for (std::size_t j = 1; j < 4; ++j) {
        if (j == i) continue;
        double best = INFINITY;
        for (int v = 0; v < cfg.m_candidates; ++v) {
          best = std::min(best, triangular_error(gx.groups[i - 1].candidates[u].pose,
                                                 gx.groups[j - 1].candidates[v].pose,
                                                 i, j, s.views, cfg, s.backend));
        }
        want += best;
      }
      CHECK(gx.instability[i - 1][u] == doctest::Approx(want).epsilon(1e-12));
    }
    const auto& row = gx.instability[i - 1];
    const auto u_best = std::min_element(row.begin(), row.end()) - row.begin();
    CHECK(gx.graph.pose(i) == gx.groups[i - 1].candidates[u_best].pose);
  }
}

TEST_CASE("group candidates reuse the per-pair exploration") {
  Session s = session(3, 3);
  const EstimationConfig cfg = small_config(3);
  const GroupExploration gx = explore_group(s.views, cfg, s.backend);
  for (std::size_t i = 1; i < 3; ++i) {
    const Exploration ex = explore("v0", s.views[i], pair_config(cfg, i), s.backend);
    for (int u = 0; u < cfg.m_candidates; ++u) {
      CHECK(ex.candidates[u].pose == gx.groups[i - 1].candidates[u].pose);
    }
  }
}

TEST_CASE("graph refinement spends exactly its budget") {
  Session s = session(4, 4);
  EstimationConfig cfg = small_config(4);
  for (auto mode : {MultiviewMode::kTr, MultiviewMode::kFull}) {
    const PoseGraph g = refine_graph(graph_at(s, mode), cfg, s.backend);
    CHECK(g.refine_steps == cfg.refine_iters_per_pose * 3);
    std::size_t traced = 0;
    for (const auto& t : g.traces) traced += t.size();
    CHECK(traced == static_cast<std::size_t>(g.refine_steps));
  }
  // Naive refinement only touches anchor pairs but has the same budget.
  const PoseGraph naive = refine_graph(graph_at(s, MultiviewMode::kNaive), cfg, s.backend);
  CHECK(naive.refine_steps == cfg.refine_iters_per_pose * 3);
}

TEST_CASE("refinement keeps a correct graph correct") {
  Session s = session(4, 5);
  const PoseGraph g = refine_graph(graph_at(s, MultiviewMode::kTr), small_config(5), s.backend);
  for (std::size_t i = 1; i < 4; ++i) CHECK(s.rotation_error(g, i) < 2.0);
}

TEST_CASE("a perturbed pose is pulled back by its neighbours") {
  Session s = session(4, 6);
  PoseGraph g = graph_at(s, MultiviewMode::kTr);
  g.poses[1].d_azimuth += 15.0 * pi / 180;
  EstimationConfig cfg = small_config(6);
  cfg.refine_iters_per_pose = 300;
  const PoseGraph out = refine_graph(g, cfg, s.backend);
  CHECK(s.rotation_error(out, 2) < 1.0);
}

TEST_CASE("two views reduce every mode to the same pair estimate") {
  Session s = session(2, 7);
  const EstimationConfig cfg = small_config(7);
  const PoseGraph a = estimate_multiview(s.views, cfg, s.backend, MultiviewMode::kNaive);
  const PoseGraph b = estimate_multiview(s.views, cfg, s.backend, MultiviewMode::kTr);
  const PoseGraph c = estimate_multiview(s.views, cfg, s.backend, MultiviewMode::kFull);
  CHECK(a.poses == b.poses);
  CHECK(a.poses == c.poses);
}

TEST_CASE("multiview estimation is deterministic and recovers order-1 scenes") {
  Session s = session(3, 8);
  const EstimationConfig cfg = small_config(8);
  for (auto mode : {MultiviewMode::kNaive, MultiviewMode::kTr, MultiviewMode::kFull}) {
    const PoseGraph g1 = estimate_multiview(s.views, cfg, s.backend, mode);
    const PoseGraph g2 = estimate_multiview(s.views, cfg, s.backend, mode);
    CHECK(g1.poses == g2.poses);
    CHECK(g1.mode == mode);
    for (std::size_t i = 1; i < 3; ++i) CHECK(s.rotation_error(g1, i) < 5.0);
  }
}

TEST_CASE("graph export") {
  Session s = session(3, 9);
  const PoseGraph g = graph_at(s, MultiviewMode::kFull);
  const nlohmann::json j = pose_graph_json(g, s.cameras[0]);
  CHECK(j["schema_version"] == 1);
  CHECK(j["mode"] == "full");
  CHECK(j["anchor_view"] == "v0");
  CHECK(j["poses"].size() == 2u);
  CHECK(j["absolute_cameras"].size() == 3u);
  // The anchor camera is reported unchanged.
  CHECK(j["absolute_cameras"][0]["camera"]["azimuth"].get<double>() == s.cameras[0].azimuth);
  for (std::size_t i = 1; i < 3; ++i) {
    const auto& cam = j["absolute_cameras"][i]["camera"];
    CHECK(cam["polar"].get<double>() == doctest::Approx(s.cameras[i].polar));
    CHECK(wrap_angle(cam["azimuth"].get<double>() - s.cameras[i].azimuth) ==
          doctest::Approx(0.0).epsilon(1e-9));
  }
  PoseGraph bad = g;
  bad.poses.pop_back();
  CHECK_THROWS_AS(pose_graph_json(bad, s.cameras[0]), ValidationError);
}

TEST_CASE("multiview input validation") {
  Session s = session(2, 10);
  CHECK_THROWS_AS(estimate_multiview({"v0"}, small_config(1), s.backend, MultiviewMode::kTr),
                  ValidationError);
}
