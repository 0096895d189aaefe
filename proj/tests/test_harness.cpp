#include <cmath>
#include <filesystem>
#include <numbers>
#include <sstream>

#include <doctest.h>
#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

#include "idpose/errors.hpp"
#include "idpose/harness.hpp"
#include "idpose/metrics.hpp"
#include "idpose/preprocess.hpp"
#include "idpose/scene_io.hpp"

using namespace idpose;
namespace fs = std::filesystem;
using std::numbers::pi;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("idpose_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

SceneManifest camera_manifest(const std::vector<AbsoluteCamera>& cams) {
  SceneManifest m;
  m.scene_id = "hand";
  for (std::size_t i = 0; i < cams.size(); ++i) {
    m.views.push_back({"v" + std::to_string(i), "v.png", {}, {}, cams[i]});
  }
  return m;
}

PoseGraph exact_graph(const SceneManifest& m) {
  PoseGraph g;
  g.views = m.ordered_view_ids();
  for (std::size_t i = 1; i < m.views.size(); ++i) {
    g.poses.push_back(relative_between(*m.views[0].gt_camera, *m.views[i].gt_camera));
  }
  return g;
}

const std::vector<AbsoluteCamera> kCams = {
    {pi / 2, 0.0, 3.0}, {pi / 2, 1.0, 3.0}, {1.2, 2.5, 3.0}, {1.9, 4.0, 3.0}};

}  // namespace

TEST_CASE("manifest validation") {
  SceneManifest m = camera_manifest(kCams);
  CHECK_NOTHROW(m.validate());
  CHECK(m.has_ground_truth());

  SceneManifest one = m;
  one.views.resize(1);
  CHECK_THROWS_AS(one.validate(), ValidationError);

  SceneManifest anchor = m;
  anchor.anchor_index = 4;
  CHECK_THROWS_AS(anchor.validate(), ValidationError);

  SceneManifest partial = m;
  partial.views[2].gt_camera.reset();
  try {
    partial.validate();
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(e.fields() == std::vector<std::string>{"views.gt_camera"});
  }

  SceneManifest dup = m;
  dup.views[1].id = "v0";
  CHECK_THROWS_AS(dup.validate(), ValidationError);

  m.anchor_index = 2;
  CHECK(m.ordered_view_ids() == std::vector<std::string>{"v2", "v0", "v1", "v3"});
  CHECK_THROWS_AS(m.view("nope"), Error);
}

TEST_CASE("manifest json round trip") {
  SceneManifest m = camera_manifest(kCams);
  m.views[1].mask_path = "m1.png";
  m.views[2].latent_path = "l2.f32";
  m.synthetic_scene = "scene.json";
  const fs::path dir = scratch_dir("manifest");
  save_manifest(m, dir / "manifest.json");
  const SceneManifest back = load_manifest(dir / "manifest.json");
  CHECK(manifest_json(back) == manifest_json(m));
  CHECK(back.base_dir == dir);
  CHECK(back.resolve("x.png") == dir / "x.png");
  CHECK(back.views[0].gt_camera->azimuth == kCams[0].azimuth);
  CHECK(find_manifests(dir) == std::vector<fs::path>{dir / "manifest.json"});
  CHECK_THROWS_AS(manifest_from_json(nlohmann::json::array(), dir), Error);
}

TEST_CASE("latent files") {
  LatentMap z({2, 3, 4});
  for (std::size_t i = 0; i < z.size(); ++i) z.data()[i] = 0.5f * i - 3.25f;
  const fs::path dir = scratch_dir("latent");
  write_latent(z, dir / "z.f32");
  const LatentMap back = read_latent(dir / "z.f32");
  CHECK(back.shape() == z.shape());
  CHECK(std::equal(back.data().begin(), back.data().end(), z.data().begin()));

  fs::resize_file(dir / "z.f32", 10);
  CHECK_THROWS_AS(read_latent(dir / "z.f32"), Error);
}

TEST_CASE("synthetic scene json round trip") {
  SceneRecipe r;
  r.lighting = true;
  r.symmetry_order = 2;
  const SyntheticScene s = make_scene(r, 4);
  const SyntheticScene back = scene_from_json(scene_json(s));
  CHECK(render(back, {1.1, 0.3, 3.0}) == render(s, {1.1, 0.3, 3.0}));
}

TEST_CASE("session window follows the largest mask") {
  cv::Mat a = cv::Mat::zeros(300, 300, CV_8U);
  cv::Mat b = cv::Mat::zeros(300, 300, CV_8U);
  a(cv::Rect(10, 20, 100, 60)).setTo(255);
  b(cv::Rect(50, 40, 90, 140)).setTo(255);
  CHECK(mask_bbox_side(a) == 100);
  CHECK(mask_bbox_side(b) == 140);
  CHECK(session_window_side({a, b}) == 210);
  CHECK_THROWS_AS(mask_bbox_side(cv::Mat::zeros(10, 10, CV_8U)), Error);
}

TEST_CASE("full-frame mask pads the frame with a white border") {
  cv::Mat img(100, 100, CV_8UC3, cv::Scalar(0, 0, 255));
  cv::Mat mask(100, 100, CV_8U, cv::Scalar(255));
  const int side = session_window_side({mask});
  CHECK(side == 150);
  const cv::Mat out = preprocess(img, mask, side, {150, 150});
  REQUIRE(out.size() == cv::Size(150, 150));
  CHECK(out.at<cv::Vec3b>(75, 75) == cv::Vec3b(0, 0, 255));
  CHECK(out.at<cv::Vec3b>(10, 10) == cv::Vec3b(255, 255, 255));
  CHECK(out.at<cv::Vec3b>(140, 75) == cv::Vec3b(255, 255, 255));
  int red = 0;
  for (int y = 0; y < 150; ++y)
    for (int x = 0; x < 150; ++x) red += out.at<cv::Vec3b>(y, x) == cv::Vec3b(0, 0, 255);
  CHECK(red == 100 * 100);
}

TEST_CASE("masked background turns white") {
  cv::Mat img(60, 60, CV_8UC3, cv::Scalar(10, 20, 30));
  cv::Mat mask = cv::Mat::zeros(60, 60, CV_8U);
  mask(cv::Rect(20, 20, 20, 20)).setTo(255);
  const cv::Mat out = preprocess(img, mask, 30, {30, 30});
  CHECK(out.at<cv::Vec3b>(15, 15) == cv::Vec3b(10, 20, 30));
  CHECK(out.at<cv::Vec3b>(1, 1) == cv::Vec3b(255, 255, 255));
  CHECK_THROWS_AS(preprocess(img, cv::Mat::zeros(60, 60, CV_8U), 30, {30, 30}), Error);
  CHECK_THROWS_AS(preprocess(img, cv::Mat::zeros(50, 60, CV_8U), 30, {30, 30}), Error);
}

TEST_CASE("without a mask a white image passes through") {
  cv::Mat white(64, 64, CV_8UC3, cv::Scalar::all(255));
  const cv::Mat out = preprocess(white, std::nullopt, 0, {128, 128});
  REQUIRE(out.size() == cv::Size(128, 128));
  CHECK(cv::countNonZero(out.reshape(1) != 255) == 0);

  cv::Mat wide(50, 100, CV_8UC3, cv::Scalar(0, 0, 0));
  const cv::Mat box = preprocess(wide, std::nullopt, 0, {100, 100});
  CHECK(box.at<cv::Vec3b>(5, 50) == cv::Vec3b(255, 255, 255));
  CHECK(box.at<cv::Vec3b>(50, 50) == cv::Vec3b(0, 0, 0));
}

TEST_CASE("alpha composites over white") {
  cv::Mat rgba(2, 1, CV_8UC4);
  rgba.at<cv::Vec4b>(0, 0) = {0, 0, 0, 0};
  rgba.at<cv::Vec4b>(1, 0) = {0, 0, 0, 255};
  const cv::Mat bgr = to_bgr_on_white(rgba);
  CHECK(bgr.at<cv::Vec3b>(0, 0) == cv::Vec3b(255, 255, 255));
  CHECK(bgr.at<cv::Vec3b>(1, 0) == cv::Vec3b(0, 0, 0));
}

TEST_CASE("exact estimates score perfectly") {
  const SceneManifest m = camera_manifest(kCams);
  const MetricsReport r = evaluate_scene(m, exact_graph(m));
  CHECK(r.pairs == 3);
  CHECK(r.n_views == 4);
  CHECK(r.rot_acc_15 == 1.0);
  CHECK(r.rot_acc_30 == 1.0);
  CHECK(r.pos_acc_20 == 1.0);
  for (const auto& e : r.per_view) {
    CHECK(e.rotation_error_deg < 1e-6);
    CHECK(e.position_error < 1e-12);
  }
}

TEST_CASE("one view off by 20 degrees") {
  const SceneManifest m = camera_manifest(kCams);
  PoseGraph g = exact_graph(m);
  g.poses[0].d_azimuth += 20.0 * pi / 180;  // rotation about the world z axis
  const MetricsReport r = evaluate_scene(m, g);
  CHECK(r.per_view[0].rotation_error_deg == doctest::Approx(20.0).epsilon(1e-9));
  CHECK(r.rot_acc_15 == doctest::Approx(2.0 / 3.0));
  CHECK(r.rot_acc_30 == 1.0);
}

TEST_CASE("right direction at 1.3x the radius") {
  const SceneManifest m = camera_manifest(kCams);
  PoseGraph g = exact_graph(m);
  g.poses[1].d_radius = 0.3;
  const MetricsReport r = evaluate_scene(m, g);
  CHECK(std::abs(r.per_view[1].position_error - 0.3) < 1e-12);
  CHECK(r.per_view[1].rotation_error_deg < 1e-6);
  CHECK(r.pos_acc_20 == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("evaluation preconditions") {
  SceneManifest m = camera_manifest(kCams);
  const PoseGraph g = exact_graph(m);
  SceneManifest no_gt = m;
  for (auto& v : no_gt.views) v.gt_camera.reset();
  try {
    evaluate_scene(no_gt, g);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kEvaluationUnavailable);
  }
  m.anchor_index = 1;
  CHECK_THROWS_AS(evaluate_scene(m, g), ValidationError);
}

TEST_CASE("reports pool per-view errors") {
  const SceneManifest m = camera_manifest(kCams);
  PoseGraph off = exact_graph(m);
  off.poses[0].d_azimuth += pi / 2;
  const MetricsReport merged =
      merge_reports({evaluate_scene(m, exact_graph(m)), evaluate_scene(m, off)});
  CHECK(merged.scenes == 2);
  CHECK(merged.pairs == 6);
  CHECK(merged.rot_acc_30 == doctest::Approx(5.0 / 6.0));
  const nlohmann::json j = report_json(merged);
  CHECK(j["per_view"].size() == 6u);
  CHECK(j["rot_acc_30"].get<double>() == merged.rot_acc_30);
}

TEST_CASE("generated sessions and a one-row sweep") {
  const fs::path dir = scratch_dir("session");
  SceneRecipe r;
  const SceneManifest m = make_synthetic_session(r, 3, 5, dir, "s5");
  CHECK(m.views.size() == 3u);
  CHECK(m.has_ground_truth());
  for (const auto& v : m.views) {
    CHECK(fs::exists(m.resolve(v.image_path)));
    CHECK(v.gt_camera->radius == 3.0);
  }
  const SceneManifest loaded = load_manifest(dir / "manifest.json");
  auto backend = synthetic_backend_for(loaded);
  // Stored latents equal fresh renders up to float rounding.
  const auto fresh = render(backend->scene(), *loaded.views[1].gt_camera);
  const auto stored = backend->latent_of(loaded.views[1].id).data();
  for (std::size_t i = 0; i < fresh.size(); ++i) {
    CHECK(std::abs(fresh[i] - stored[i]) <= 1e-6 * (1 + std::abs(fresh[i])));
  }

  EstimationConfig cfg;
  cfg.m_candidates = 4;
  cfg.probe_batch = 2;
  cfg.refine_iters_per_pose = 100;
  const auto rows = sweep_noise_step(
      {loaded}, {0.2}, cfg, [](const SceneManifest& s) -> std::unique_ptr<Backend> {
        return synthetic_backend_for(s);
      });
  REQUIRE(rows.size() == 1u);
  CHECK(rows[0].report.pairs == 2);
  const std::string csv = sweep_csv(rows);
  CHECK(csv.rfind("t_frac,scenes,pairs,rot_acc_15,rot_acc_30,pos_acc_20\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);

  cfg.probe_t_frac = 0.999;
  CHECK_THROWS_AS(sweep_noise_step({loaded}, {0.999}, cfg,
                                   [](const SceneManifest& s) -> std::unique_ptr<Backend> {
                                     return synthetic_backend_for(s);
                                   }),
                  ValidationError);
}

TEST_CASE("trace lines") {
  PoseGraph g;
  g.views = {"a", "b"};
  g.poses = {{0.1, 0.2, 0.0}};
  g.traces = {{{0, {0, 0, 0}, 1.5, Direction::kForward}, {1, {0, 0.1, 0}, 1.0, Direction::kReverse}}};
  std::ostringstream out;
  write_trace_jsonl(out, g);
  std::istringstream in(out.str());
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("iteration"));
    ++n;
  }
  CHECK(n == 2);
}
