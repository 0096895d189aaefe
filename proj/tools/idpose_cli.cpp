// Command-line front end: synthetic data generation, estimation, evaluation,
// the noise-step sweep and a protocol server for the synthetic oracle.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "idpose/diffusion.hpp"
#include "idpose/errors.hpp"
#include "idpose/harness.hpp"
#include "idpose/metrics.hpp"
#include "idpose/multiview.hpp"
#include "idpose/remote.hpp"
#include "idpose/scene_io.hpp"
#include "idpose/synthetic.hpp"

namespace fs = std::filesystem;
using namespace idpose;

namespace {

struct PredictorFlags {
  double prior_variance = 0.0;
  double model_noise = 0.0;

  void add_to(CLI::App* app) {
    app->add_option("--prior-variance", prior_variance,
                    "synthetic predictor: Gaussian prior variance on the clean latent");
    app->add_option("--model-noise", model_noise,
                    "synthetic predictor: std of pose-keyed noise on eps_hat");
  }
  SyntheticPredictorOptions options() const {
    SyntheticPredictorOptions o;
    o.prior_variance = prior_variance;
    o.model_noise = model_noise;
    return o;
  }
};

struct BackendFlags {
  std::vector<std::string> backend{"synthetic"};
  int retries = 3;
  int window = 4;
  PredictorFlags predictor;

  void add_to(CLI::App* app) {
    app->add_option("--backend", backend,
                    "'synthetic' or 'remote <tcp://host:port | exec:command>'")
        ->expected(1, 2);
    app->add_option("--retries", retries, "remote: attempts after a transport failure");
    app->add_option("--window", window, "remote: maximum open connections");
    predictor.add_to(app);
  }

  BackendFactory factory() const {
    if (backend.size() == 1 && backend[0] == "synthetic") {
      const auto options = predictor.options();
      return [options](const SceneManifest& m) -> std::unique_ptr<Backend> {
        return synthetic_backend_for(m, options);
      };
    }
    if (backend.size() == 2 && backend[0] == "remote") {
      const ChannelFactory channels = endpoint_factory(backend[1]);
      const RemoteOptions options{retries, window};
      return [channels, options](const SceneManifest& m) -> std::unique_ptr<Backend> {
        auto remote = std::make_unique<RemoteBackend>(channels, options);
        register_manifest_views(*remote, m);
        return remote;
      };
    }
    throw ValidationError({"backend"});
  }
};

struct ConfigFlags {
  std::optional<std::uint64_t> seed;
  std::string config_path;

  void add_to(CLI::App* app) {
    app->add_option("--seed", seed, "session seed (default: IDPOSE_SEED or 0)")
        ->envname("IDPOSE_SEED");
    app->add_option("--config", config_path, "EstimationConfig JSON");
  }

  EstimationConfig load() const {
    EstimationConfig cfg;
    if (!config_path.empty()) read_json_file(config_path).get_to(cfg);
    if (seed) cfg.seed = *seed;
    cfg.validate();
    return cfg;
  }
};

void write_text(const std::string& text, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << text;
    std::cout.flush();
    return;
  }
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error(ErrorCode::kIo, fmt::format("cannot write {}", path));
}

std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

int print_error(std::string_view code, const std::string& message,
                const std::vector<std::string>& fields, int exit_code) {
  nlohmann::json j{{"error", {{"code", code}, {"message", message}}}};
  if (!fields.empty()) j["error"]["fields"] = fields;
  std::cerr << j.dump() << std::endl;
  return exit_code;
}

// Canonical anchor for scenes without ground truth: the front view on the
// unit sphere.
constexpr AbsoluteCamera kCanonicalAnchor{std::numbers::pi / 2, 0.0, 1.0};

int run(int argc, char** argv) {
  CLI::App app{"Relative camera pose estimation by inverting a noise predictor"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "idpose 0.1.0");

  // make-synthetic
  auto* make = app.add_subcommand("make-synthetic", "render synthetic scenes with ground truth");
  SceneRecipe recipe;
  std::string lighting = "off";
  int n_views = 2, n_scenes = 1;
  std::string make_out;
  std::uint64_t make_seed = 0;
  make->add_option("--points", recipe.num_points, "points per scene (before replication)");
  make->add_option("--symmetry", recipe.symmetry_order, "azimuthal symmetry order");
  make->add_option("--lighting", lighting, "on | off");
  make->add_option("--views", n_views, "views per scene");
  make->add_option("--scenes", n_scenes, "number of scenes (subdirectories when > 1)");
  make->add_option("--out", make_out, "output directory")->required();
  make->add_option("--seed", make_seed, "seed")->envname("IDPOSE_SEED");

  // estimate
  auto* est = app.add_subcommand("estimate", "estimate relative poses of a scene");
  std::string est_manifest, est_out, est_trace, est_mode = "full";
  BackendFlags est_backend;
  ConfigFlags est_config;
  est->add_option("--manifest", est_manifest, "scene manifest")->required();
  est->add_option("--mode", est_mode, "naive | tr | full");
  est->add_option("--out", est_out, "pose graph JSON (default stdout)");
  est->add_option("--trace", est_trace, "refinement trace (JSON lines)");
  est_backend.add_to(est);
  est_config.add_to(est);

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "score estimates against ground truth");
  std::string eval_manifest, eval_estimates, eval_out;
  eval->add_option("--manifest", eval_manifest, "scene manifest")->required();
  eval->add_option("--estimates", eval_estimates, "pose graph JSON")->required();
  eval->add_option("--out", eval_out, "report JSON (default stdout)");

  // sweep-noise-step
  auto* sweep = app.add_subcommand("sweep-noise-step", "accuracy versus probe noise step");
  std::string sweep_dir, sweep_out;
  std::vector<double> t_list{0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5};
  BackendFlags sweep_backend;
  ConfigFlags sweep_config;
  sweep->add_option("--manifests", sweep_dir, "directory searched for manifest.json")->required();
  sweep->add_option("--t-list", t_list, "comma-separated step fractions")->delimiter(',');
  sweep->add_option("--out", sweep_out, "CSV (default stdout)");
  sweep_backend.add_to(sweep);
  sweep_config.add_to(sweep);

  // serve
  auto* serve = app.add_subcommand("serve", "serve a synthetic scene over the wire protocol");
  std::string serve_manifest;
  int serve_port = 0;
  bool serve_stdio = false, serve_no_gradient = false;
  PredictorFlags serve_predictor;
  serve->add_option("--manifest", serve_manifest, "synthetic scene manifest")->required();
  serve->add_option("--port", serve_port, "TCP port on 127.0.0.1 (0 = any)");
  serve->add_flag("--stdio", serve_stdio, "speak the protocol on stdin/stdout");
  serve->add_flag("--no-gradient", serve_no_gradient, "advertise no analytic gradients");
  serve_predictor.add_to(serve);

  // noise-vectors
  auto* vectors = app.add_subcommand("noise-vectors", "reference (seed, index, value) triples");
  int vector_count = 1000;
  std::string vector_out;
  vectors->add_option("--count", vector_count, "number of triples");
  vectors->add_option("--out", vector_out, "CSV (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return print_error("usage", e.what(), {}, 2);
  }

  if (*make) {
    if (lighting != "on" && lighting != "off") throw ValidationError({"lighting"});
    if (n_scenes < 1) throw ValidationError({"scenes"});
    recipe.lighting = lighting == "on";
    nlohmann::json written = nlohmann::json::array();
    for (int s = 0; s < n_scenes; ++s) {
      const fs::path dir = n_scenes == 1 ? fs::path(make_out)
                                         : fs::path(make_out) / fmt::format("scene_{:03}", s);
      const std::uint64_t seed = make_seed + static_cast<std::uint64_t>(s);
      make_synthetic_session(recipe, n_views, seed, dir, fmt::format("synthetic_{}", seed));
      written.push_back((dir / "manifest.json").string());
    }
    std::cout << nlohmann::json{{"manifests", written}}.dump() << std::endl;
    return 0;
  }

  if (*est) {
    const MultiviewMode mode = parse_mode(est_mode);
    const EstimationConfig cfg = est_config.load();
    const SceneManifest manifest = load_manifest(est_manifest);
    const auto backend = est_backend.factory()(manifest);
    const PoseGraph graph =
        estimate_multiview(manifest.ordered_view_ids(), cfg, *backend, mode);
    const auto& anchor = manifest.views.at(manifest.anchor_index);
    nlohmann::json out =
        pose_graph_json(graph, anchor.gt_camera.value_or(kCanonicalAnchor));
    out["scene_id"] = manifest.scene_id;
    out["anchor_camera_source"] = anchor.gt_camera ? "ground_truth" : "canonical";
    out["refine_steps"] = graph.refine_steps;
    out["config"] = cfg;
    write_text(dump(out), est_out);
    if (!est_trace.empty()) {
      std::ostringstream trace;
      write_trace_jsonl(trace, graph);
      write_text(trace.str(), est_trace);
    }
    return 0;
  }

  if (*eval) {
    const SceneManifest manifest = load_manifest(eval_manifest);
    const PoseGraph graph = pose_graph_from_json(read_json_file(eval_estimates));
    write_text(dump(report_json(evaluate_scene(manifest, graph))), eval_out);
    return 0;
  }

  if (*sweep) {
    const EstimationConfig cfg = sweep_config.load();
    std::vector<SceneManifest> scenes;
    for (const auto& p : find_manifests(sweep_dir)) scenes.push_back(load_manifest(p));
    const auto rows = sweep_noise_step(scenes, t_list, cfg, sweep_backend.factory());
    write_text(sweep_csv(rows), sweep_out);
    return 0;
  }

  if (*serve) {
    const SceneManifest manifest = load_manifest(serve_manifest);
    auto backend = synthetic_backend_for(manifest, serve_predictor.options());
    ServerOptions options;
    options.advertise_gradient = !serve_no_gradient;
    SyntheticBackend* oracle = backend.get();
    // Uploaded images are accepted for known views only; the oracle keeps
    // using its own latents.
    options.on_register = [oracle](const std::string& id, const std::string&) {
      oracle->camera_of(id);
    };
    ProtocolServer server(*backend, options);
    if (serve_stdio) {
      StreamChannel channel(std::cin, std::cout);
      server.serve(channel);
      return 0;
    }
    if (serve_port < 0 || serve_port > 65535) throw ValidationError({"port"});
    TcpServer tcp(server, static_cast<std::uint16_t>(serve_port));
    std::cout << nlohmann::json{{"listening", tcp.port()}}.dump() << std::endl;
    tcp.run();
    return 0;
  }

  if (*vectors) {
    if (vector_count < 1) throw ValidationError({"count"});
    std::string csv = "seed,index,value\n";
    for (int k = 0; k < vector_count; ++k) {
      // Spread seeds and indices over small and large magnitudes.
      const std::uint64_t seed = static_cast<std::uint64_t>(k / 10) * 0x9E3779B97F4A7C15ull;
      const std::uint64_t index = (k % 10) * (1ull << (3 * (k % 10)));
      csv += fmt::format("{},{},{:.17g}\n", seed, index, gaussian_at(seed, index));
    }
    write_text(csv, vector_out);
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ValidationError& e) {
    return print_error(error_code_name(e.code()), e.what(), e.fields(), 2);
  } catch (const Error& e) {
    return print_error(error_code_name(e.code()), e.what(), {}, 1);
  } catch (const std::exception& e) {
    return print_error("internal", e.what(), {}, 1);
  }
}
