#pragma once

#include "gsacp/numgrid.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace gsacp {

enum class SizeBin { kTiny = 0, kSmall = 1, kMedium = 2, kLarge = 3 };

inline constexpr std::array<const char*, 4> kSizeBinNames{"tiny", "small", "medium", "large"};

/// Bin of a target by ground-truth area with upper-inclusive edges {10, 30, 80}.
inline SizeBin size_bin(int area, const std::array<int, 3>& edges = {10, 30, 80}) {
  if (area <= edges[0]) return SizeBin::kTiny;
  if (area <= edges[1]) return SizeBin::kSmall;
  if (area <= edges[2]) return SizeBin::kMedium;
  return SizeBin::kLarge;
}

struct SceneSpec {
  int height = 64;
  int width = 64;
  int channels = 1;
  int targets_min = 3;
  int targets_max = 3;
  std::array<double, 4> bin_mix{0.15, 0.25, 0.45, 0.15};
  /// Inclusive gt-area ranges drawn for each bin.
  std::array<std::array<int, 2>, 4> bin_area{{{3, 10}, {11, 30}, {31, 80}, {81, 160}}};
  double amplitude_min = 0.35;
  double amplitude_max = 0.7;
  double anisotropy_max = 1.5;
  int clutter_min = 2;
  int clutter_max = 4;
  double clutter_amplitude_min = 0.35;
  double clutter_amplitude_max = 0.7;
  double clutter_sigma_min = 3.0;
  double clutter_sigma_max = 6.0;
  double clutter_anisotropy_max = 3.0;
  double noise_sigma = 0.02;
  double background_level = 0.2;
  double background_gradient = 0.1;
  bool point_jitter = true;
  int max_placement_attempts = 500;

  void validate() const;
};

struct TargetInfo {
  int area = 0;
  SizeBin bin = SizeBin::kTiny;
  double centroid_row = 0.0;
  double centroid_col = 0.0;
  double amplitude = 0.0;
};

struct Scene {
  Image image;
  BinaryMask gt;
  PointSet points;  // one per target, same order as targets
  std::vector<TargetInfo> targets;
};

class PlacementError : public Error {
 public:
  using Error::Error;
};

/// Deterministic in (spec, seed). Intensities are quantized to 16 bits so that a scene
/// written to disk reads back identically.
Scene generate_scene(const SceneSpec& spec, std::uint64_t seed);

/// Per-index seed used by datasets: scene i of a dataset with master seed s.
std::uint64_t scene_seed(std::uint64_t master, std::uint64_t index);

enum class Split { kTrain, kVal };

/// Stable, index-based split: every fourth scene (i % 4 == 3) is validation.
inline Split split_of(std::size_t index) { return index % 4 == 3 ? Split::kVal : Split::kTrain; }

struct ManifestEntry {
  std::size_t index = 0;
  Split split = Split::kTrain;
  std::string image;
  std::string mask;
  std::string points;
  std::string image_sha256;
  std::string mask_sha256;
  std::string points_sha256;
  std::vector<TargetInfo> targets;
};

struct Dataset {
  std::filesystem::path root;
  std::string manifest_sha256;
  SceneSpec spec;
  std::uint64_t seed = 0;
  std::vector<ManifestEntry> entries;
  std::vector<Scene> scenes;

  std::vector<std::size_t> indices(Split split) const;
};

/// Writes n scenes plus manifest.jsonl under dir and returns the loaded dataset.
Dataset generate_dataset(const SceneSpec& spec, std::size_t n, std::uint64_t seed, const std::filesystem::path& dir);

/// Loads a dataset from its manifest, verifying per-file hashes.
Dataset load_dataset(const std::filesystem::path& manifest);

/// JSON round trip for scene specs; unknown or ill-typed fields are rejected by name.
std::string scene_spec_to_json(const SceneSpec& spec);
SceneSpec scene_spec_from_json(const std::string& text);

}  // namespace gsacp
