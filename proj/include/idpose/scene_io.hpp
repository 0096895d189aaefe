#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "idpose/diffusion.hpp"
#include "idpose/multiview.hpp"
#include "idpose/pose.hpp"
#include "idpose/synthetic.hpp"

namespace idpose {

inline constexpr int kSchemaVersion = 1;

struct ManifestView {
  std::string id;
  std::string image_path;
  std::optional<std::string> mask_path;
  std::optional<std::string> latent_path;
  std::optional<AbsoluteCamera> gt_camera;
};

// Paths inside a manifest are relative to the manifest's directory.
struct SceneManifest {
  std::string scene_id;
  std::vector<ManifestView> views;
  std::size_t anchor_index = 0;
  std::optional<std::string> synthetic_scene;  // scene JSON, synthetic only
  std::filesystem::path base_dir;

  // Throws ValidationError naming every violated field.
  void validate() const;
  bool has_ground_truth() const;
  std::filesystem::path resolve(const std::string& relative) const;
  // View ids with the anchor first, the others in manifest order.
  std::vector<std::string> ordered_view_ids() const;
  const ManifestView& view(const std::string& id) const;
};

nlohmann::json camera_json(const AbsoluteCamera& camera);
AbsoluteCamera camera_from_json(const nlohmann::json& j);

nlohmann::json manifest_json(const SceneManifest& manifest);
SceneManifest manifest_from_json(const nlohmann::json& j,
                                 std::filesystem::path base_dir);
SceneManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const SceneManifest& manifest,
                   const std::filesystem::path& path);

// Every manifest.json below `dir`, sorted by path.
std::vector<std::filesystem::path> find_manifests(const std::filesystem::path& dir);

nlohmann::json scene_json(const SyntheticScene& scene);
SyntheticScene scene_from_json(const nlohmann::json& j);

// Raw little-endian float32 payload at `path` plus `path`.json holding the
// shape.
void write_latent(const LatentMap& latent, const std::filesystem::path& path);
LatentMap read_latent(const std::filesystem::path& path);

PoseGraph pose_graph_from_json(const nlohmann::json& j);

nlohmann::json read_json_file(const std::filesystem::path& path);
// Writes j.dump(2) plus a trailing newline.
void write_json_file(const nlohmann::json& j, const std::filesystem::path& path);

}  // namespace idpose
