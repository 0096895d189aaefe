#include "idpose/scene_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "idpose/errors.hpp"

namespace fs = std::filesystem;

namespace idpose {

namespace {

static_assert(std::endian::native == std::endian::little,
              "latent files are written in host byte order");

[[noreturn]] void io_error(const std::string& what) {
  throw Error(ErrorCode::kIo, what);
}

void check_schema(const nlohmann::json& j, const char* what) {
  if (!j.is_object()) throw ValidationError({what});
  if (j.contains("schema_version") &&
      j.at("schema_version") != nlohmann::json(kSchemaVersion)) {
    throw ValidationError({"schema_version"});
  }
}

std::optional<std::string> optional_string(const nlohmann::json& j,
                                           const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<std::string>();
}

}  // namespace

void SceneManifest::validate() const {
  std::vector<std::string> bad;
  if (views.size() < 2) bad.emplace_back("views");
  if (anchor_index >= views.size()) bad.emplace_back("anchor_index");
  std::set<std::string> ids;
  for (const auto& v : views) {
    if (v.id.empty() || !ids.insert(v.id).second) {
      bad.emplace_back("views.id");
      break;
    }
  }
  const auto with_gt = std::count_if(views.begin(), views.end(),
                                     [](const auto& v) { return v.gt_camera.has_value(); });
  if (with_gt != 0 && with_gt != static_cast<long>(views.size())) {
    bad.emplace_back("views.gt_camera");
  }
  for (const auto& v : views) {
    if (v.gt_camera && !is_valid(*v.gt_camera)) {
      bad.emplace_back("views.gt_camera");
      break;
    }
  }
  if (!bad.empty()) throw ValidationError(std::move(bad));
}

bool SceneManifest::has_ground_truth() const {
  return !views.empty() &&
         std::all_of(views.begin(), views.end(),
                     [](const auto& v) { return v.gt_camera.has_value(); });
}

fs::path SceneManifest::resolve(const std::string& relative) const {
  const fs::path p(relative);
  return p.is_absolute() ? p : base_dir / p;
}

std::vector<std::string> SceneManifest::ordered_view_ids() const {
  std::vector<std::string> ids{views.at(anchor_index).id};
  for (std::size_t i = 0; i < views.size(); ++i) {
    if (i != anchor_index) ids.push_back(views[i].id);
  }
  return ids;
}

const ManifestView& SceneManifest::view(const std::string& id) const {
  for (const auto& v : views) {
    if (v.id == id) return v;
  }
  throw Error(ErrorCode::kUnknownView, fmt::format("unknown view '{}'", id));
}

nlohmann::json camera_json(const AbsoluteCamera& camera) {
  return {{"polar", camera.polar},
          {"azimuth", camera.azimuth},
          {"radius", camera.radius}};
}

AbsoluteCamera camera_from_json(const nlohmann::json& j) {
  try {
    return {j.at("polar").get<double>(), j.at("azimuth").get<double>(),
            j.at("radius").get<double>()};
  } catch (const nlohmann::json::exception&) {
    throw ValidationError({"camera"});
  }
}

nlohmann::json manifest_json(const SceneManifest& manifest) {
  nlohmann::json views = nlohmann::json::array();
  for (const auto& v : manifest.views) {
    nlohmann::json jv{{"id", v.id}, {"image_path", v.image_path}};
    if (v.mask_path) jv["mask_path"] = *v.mask_path;
    if (v.latent_path) jv["latent_path"] = *v.latent_path;
    if (v.gt_camera) jv["gt_camera"] = camera_json(*v.gt_camera);
    views.push_back(std::move(jv));
  }
  nlohmann::json j{{"schema_version", kSchemaVersion},
                   {"scene_id", manifest.scene_id},
                   {"anchor_index", manifest.anchor_index},
                   {"views", std::move(views)}};
  if (manifest.synthetic_scene) j["synthetic_scene"] = *manifest.synthetic_scene;
  return j;
}

SceneManifest manifest_from_json(const nlohmann::json& j, fs::path base_dir) {
  check_schema(j, "manifest");
  SceneManifest m;
  m.base_dir = std::move(base_dir);
  try {
    m.scene_id = j.value("scene_id", std::string{});
    m.anchor_index = j.value("anchor_index", std::size_t{0});
    m.synthetic_scene = optional_string(j, "synthetic_scene");
    const auto& views = j.at("views");
    if (!views.is_array()) throw ValidationError({"views"});
    for (std::size_t i = 0; i < views.size(); ++i) {
      const auto& jv = views[i];
      ManifestView v;
      v.image_path = jv.at("image_path").get<std::string>();
      v.id = jv.contains("id") ? jv.at("id").get<std::string>()
                               : fmt::format("view_{}", i);
      v.mask_path = optional_string(jv, "mask_path");
      v.latent_path = optional_string(jv, "latent_path");
      if (jv.contains("gt_camera") && !jv.at("gt_camera").is_null()) {
        v.gt_camera = camera_from_json(jv.at("gt_camera"));
      }
      m.views.push_back(std::move(v));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError({"views"});
  }
  m.validate();
  return m;
}

SceneManifest load_manifest(const fs::path& path) {
  return manifest_from_json(read_json_file(path), path.parent_path());
}

void save_manifest(const SceneManifest& manifest, const fs::path& path) {
  write_json_file(manifest_json(manifest), path);
}

std::vector<fs::path> find_manifests(const fs::path& dir) {
  std::vector<fs::path> out;
  std::error_code ec;
  for (fs::recursive_directory_iterator it(dir, ec), end; it != end && !ec;
       it.increment(ec)) {
    if (it->is_regular_file() && it->path().filename() == "manifest.json") {
      out.push_back(it->path());
    }
  }
  if (ec) io_error(fmt::format("cannot scan {}: {}", dir.string(), ec.message()));
  std::sort(out.begin(), out.end());
  return out;
}

nlohmann::json scene_json(const SyntheticScene& scene) {
  nlohmann::json points = nlohmann::json::array();
  for (const auto& p : scene.points) {
    points.push_back({{"position", {p.position.x(), p.position.y(), p.position.z()}},
                      {"feature", p.feature}});
  }
  nlohmann::json j{
      {"schema_version", kSchemaVersion},
      {"symmetry_order", scene.symmetry_order},
      {"latent_shape",
       {scene.latent_shape.channels, scene.latent_shape.height,
        scene.latent_shape.width}},
      {"splat_sigma", scene.splat_sigma},
      {"fov_deg", scene.fov_deg},
      {"points", std::move(points)}};
  const auto& l = scene.lighting_direction;
  j["lighting_direction"] =
      l ? nlohmann::json{l->x(), l->y(), l->z()} : nlohmann::json(nullptr);
  return j;
}

SyntheticScene scene_from_json(const nlohmann::json& j) {
  check_schema(j, "scene");
  SyntheticScene s;
  try {
    s.symmetry_order = j.at("symmetry_order").get<int>();
    const auto& shape = j.at("latent_shape");
    s.latent_shape = {shape.at(0).get<int>(), shape.at(1).get<int>(),
                      shape.at(2).get<int>()};
    s.splat_sigma = j.value("splat_sigma", s.splat_sigma);
    s.fov_deg = j.value("fov_deg", s.fov_deg);
    for (const auto& jp : j.at("points")) {
      const auto& pos = jp.at("position");
      s.points.push_back({{pos.at(0).get<double>(), pos.at(1).get<double>(),
                           pos.at(2).get<double>()},
                          jp.at("feature").get<std::vector<double>>()});
    }
    if (j.contains("lighting_direction") && !j.at("lighting_direction").is_null()) {
      const auto& l = j.at("lighting_direction");
      s.lighting_direction = Eigen::Vector3d(l.at(0).get<double>(),
                                             l.at(1).get<double>(),
                                             l.at(2).get<double>());
    }
  } catch (const nlohmann::json::exception&) {
    throw ValidationError({"scene"});
  }
  s.validate();
  return s;
}

void write_latent(const LatentMap& latent, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  const auto data = latent.data();
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size_bytes()));
  if (!out) io_error(fmt::format("cannot write {}", path.string()));
  const LatentShape& s = latent.shape();
  write_json_file({{"schema_version", kSchemaVersion},
                   {"dtype", "float32"},
                   {"layout", "chw"},
                   {"shape", {s.channels, s.height, s.width}}},
                  fs::path(path.string() + ".json"));
}

LatentMap read_latent(const fs::path& path) {
  const nlohmann::json side = read_json_file(fs::path(path.string() + ".json"));
  check_schema(side, "latent");
  LatentShape shape;
  try {
    if (side.value("dtype", "float32") != "float32") throw ValidationError({"dtype"});
    const auto& s = side.at("shape");
    shape = {s.at(0).get<int>(), s.at(1).get<int>(), s.at(2).get<int>()};
  } catch (const nlohmann::json::exception&) {
    throw ValidationError({"shape"});
  }
  if (!shape.valid()) throw ValidationError({"shape"});
  std::vector<float> data(shape.size());
  std::ifstream in(path, std::ios::binary);
  if (!in) io_error(fmt::format("cannot open {}", path.string()));
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(data.size() * sizeof(float)) ||
      in.peek() != std::char_traits<char>::eof()) {
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("{} does not hold {} floats", path.string(), data.size()));
  }
  return LatentMap(shape, std::move(data));
}

PoseGraph pose_graph_from_json(const nlohmann::json& j) {
  check_schema(j, "estimates");
  PoseGraph g;
  try {
    g.mode = parse_mode(j.value("mode", "full"));
    g.views.push_back(j.at("anchor_view").get<std::string>());
    for (const auto& jp : j.at("poses")) {
      g.views.push_back(jp.at("view_id").get<std::string>());
      g.poses.push_back({jp.at("d_polar").get<double>(),
                         jp.at("d_azimuth").get<double>(),
                         jp.at("d_radius").get<double>()});
    }
  } catch (const nlohmann::json::exception&) {
    throw ValidationError({"estimates"});
  }
  g.traces.assign(g.poses.size(), {});
  g.validate();
  return g;
}

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) io_error(fmt::format("cannot open {}", path.string()));
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) io_error(fmt::format("{} is not valid JSON", path.string()));
  return j;
}

void write_json_file(const nlohmann::json& j, const fs::path& path) {
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) io_error(fmt::format("cannot write {}", path.string()));
}

}  // namespace idpose
