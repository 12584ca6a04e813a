#include "gsacp/synthgen.hpp"

#include "gsacp/hash.hpp"
#include "gsacp/io.hpp"
#include "json_util.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace gsacp {
namespace {

using nlohmann::json;

// Distribution helpers built on raw engine output so streams do not depend on the
// standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int integer(int lo, int hi) { return lo + static_cast<int>(engine_() % static_cast<std::uint64_t>(hi - lo + 1)); }
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u = 0.0;
    while (u <= 0.0) u = uniform();
    const double v = uniform();
    const double mag = std::sqrt(-2.0 * std::log(u));
    spare_ = mag * std::sin(2.0 * std::numbers::pi * v);
    has_spare_ = true;
    return mag * std::cos(2.0 * std::numbers::pi * v);
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

struct Blob {
  double row = 0.0;
  double col = 0.0;
  double sigma_major = 1.0;
  double sigma_minor = 1.0;
  double angle = 0.0;
  double amplitude = 0.0;

  // Squared Mahalanobis distance of a pixel to the blob center.
  double q(int r, int c) const {
    const double dr = r - row;
    const double dc = c - col;
    const double u = std::cos(angle) * dr + std::sin(angle) * dc;
    const double v = -std::sin(angle) * dr + std::cos(angle) * dc;
    return u * u / (sigma_major * sigma_major) + v * v / (sigma_minor * sigma_minor);
  }
  double value(int r, int c) const { return amplitude * std::exp(-0.5 * q(r, c)); }
  // gt support: at or above half amplitude.
  bool covers(int r, int c) const { return q(r, c) <= 2.0 * std::numbers::ln2; }
  double support_radius() const { return sigma_major * std::sqrt(2.0 * std::numbers::ln2); }
};

int discrete_area(const Blob& b, int height, int width) {
  int area = 0;
  const int reach = static_cast<int>(std::ceil(b.support_radius())) + 1;
  for (int r = std::max(0, static_cast<int>(b.row) - reach); r <= std::min(height - 1, static_cast<int>(b.row) + reach); ++r) {
    for (int c = std::max(0, static_cast<int>(b.col) - reach); c <= std::min(width - 1, static_cast<int>(b.col) + reach); ++c) {
      if (b.covers(r, c)) ++area;
    }
  }
  return area;
}

SizeBin draw_bin(Rng& rng, const std::array<double, 4>& mix) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (int k = 0; k < 4; ++k) {
    acc += mix[k];
    if (u < acc) return static_cast<SizeBin>(k);
  }
  return SizeBin::kLarge;
}

double center_distance(const Blob& a, const Blob& b) { return std::hypot(a.row - b.row, a.col - b.col); }

}  // namespace

void SceneSpec::validate() const {
  auto fail = [](const std::string& field, const std::string& why) { throw InvalidInput("scene spec field '" + field + "': " + why); };
  if (height < 8) fail("height", "must be >= 8");
  if (width < 8) fail("width", "must be >= 8");
  if (channels != 1 && channels != 3) fail("channels", "must be 1 or 3");
  if (targets_min < 1) fail("targets_min", "must be >= 1");
  if (targets_max < targets_min) fail("targets_max", "must be >= targets_min");
  double total = 0.0;
  for (double p : bin_mix) {
    if (p < 0.0) fail("bin_mix", "probabilities must be >= 0");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) fail("bin_mix", "probabilities must sum to 1");
  const std::array<int, 3> edges{10, 30, 80};
  for (int k = 0; k < 4; ++k) {
    const auto [lo, hi] = bin_area[k];
    if (lo < 1 || hi < lo) fail("bin_area", "each range needs 1 <= lo <= hi");
    if (size_bin(lo, edges) != static_cast<SizeBin>(k) || size_bin(hi, edges) != static_cast<SizeBin>(k)) {
      fail("bin_area", std::string("range for ") + kSizeBinNames[k] + " leaves its bin");
    }
  }
  auto unit = [&](const char* name, double v) {
    if (!(v >= 0.0 && v <= 1.0)) fail(name, "must lie in [0,1]");
  };
  unit("amplitude_min", amplitude_min);
  unit("amplitude_max", amplitude_max);
  unit("clutter_amplitude_min", clutter_amplitude_min);
  unit("clutter_amplitude_max", clutter_amplitude_max);
  unit("background_level", background_level);
  unit("background_gradient", background_gradient);
  if (amplitude_max < amplitude_min) fail("amplitude_max", "must be >= amplitude_min");
  if (clutter_amplitude_max < clutter_amplitude_min) fail("clutter_amplitude_max", "must be >= clutter_amplitude_min");
  if (anisotropy_max < 1.0) fail("anisotropy_max", "must be >= 1");
  if (clutter_anisotropy_max < 1.0) fail("clutter_anisotropy_max", "must be >= 1");
  if (clutter_min < 0 || clutter_max < clutter_min) fail("clutter_max", "need 0 <= clutter_min <= clutter_max");
  if (!(clutter_sigma_min > 0.0) || clutter_sigma_max < clutter_sigma_min) fail("clutter_sigma_max", "need 0 < min <= max");
  if (!(noise_sigma >= 0.0)) fail("noise_sigma", "must be >= 0");
  if (max_placement_attempts < 1) fail("max_placement_attempts", "must be >= 1");
}

std::uint64_t scene_seed(std::uint64_t master, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x5eedu};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

Scene generate_scene(const SceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  const int H = spec.height;
  const int W = spec.width;
  const int n_targets = rng.integer(spec.targets_min, spec.targets_max);

  std::vector<Blob> targets;
  int attempts = 0;
  while (static_cast<int>(targets.size()) < n_targets) {
    if (++attempts > spec.max_placement_attempts) throw PlacementError("could not place targets without overlap");
    const SizeBin bin = draw_bin(rng, spec.bin_mix);
    const auto [lo, hi] = spec.bin_area[static_cast<int>(bin)];
    const double want = rng.integer(lo, hi);
    const double aniso = rng.uniform(1.0, spec.anisotropy_max);
    Blob b;
    b.sigma_minor = std::sqrt(want / (2.0 * std::numbers::pi * std::numbers::ln2 * aniso));
    b.sigma_major = aniso * b.sigma_minor;
    b.angle = rng.uniform(0.0, std::numbers::pi);
    b.amplitude = rng.uniform(spec.amplitude_min, spec.amplitude_max);
    const double margin = b.support_radius() + 2.0;
    if (2.0 * margin >= std::min(H, W) - 1) continue;
    b.row = rng.uniform(margin, H - 1 - margin);
    b.col = rng.uniform(margin, W - 1 - margin);
    int area = discrete_area(b, H, W);
    for (int k = 0; k < 8 && (area < lo || area > hi); ++k) {
      const double scale = std::sqrt(want / std::max(area, 1));
      b.sigma_major *= scale;
      b.sigma_minor *= scale;
      area = discrete_area(b, H, W);
    }
    if (area < lo || area > hi) continue;
    if (b.support_radius() + 2.0 > std::min({b.row, b.col, H - 1 - b.row, W - 1 - b.col})) continue;
    bool clear = true;
    for (const auto& other : targets) {
      if (center_distance(b, other) <= b.support_radius() + other.support_radius() + 3.0) clear = false;
    }
    if (clear) targets.push_back(b);
  }

  std::vector<Blob> clutter;
  const int n_clutter = rng.integer(spec.clutter_min, spec.clutter_max);
  attempts = 0;
  while (static_cast<int>(clutter.size()) < n_clutter) {
    if (++attempts > spec.max_placement_attempts) throw PlacementError("could not place clutter away from targets");
    Blob c;
    c.sigma_major = rng.uniform(spec.clutter_sigma_min, spec.clutter_sigma_max);
    c.sigma_minor = c.sigma_major / rng.uniform(1.0, spec.clutter_anisotropy_max);
    c.angle = rng.uniform(0.0, std::numbers::pi);
    c.amplitude = rng.uniform(spec.clutter_amplitude_min, spec.clutter_amplitude_max);
    c.row = rng.uniform(0.0, H - 1);
    c.col = rng.uniform(0.0, W - 1);
    bool clear = true;
    for (const auto& t : targets) {
      if (center_distance(c, t) <= t.support_radius() + 2.5 * c.sigma_major + 2.0) clear = false;
    }
    if (clear) clutter.push_back(c);
  }

  const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
  ScalarField intensity(H, W);
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      double v = spec.background_level +
                 spec.background_gradient * ((r / double(H - 1) - 0.5) * std::cos(phi) + (c / double(W - 1) - 0.5) * std::sin(phi));
      for (const auto& t : targets) v += t.value(r, c);
      for (const auto& k : clutter) v += k.value(r, c);
      intensity(r, c) = v;
    }
  }
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) intensity(r, c) += spec.noise_sigma * rng.normal();
  }
  intensity = (intensity.max(0.0).min(1.0) * 65535.0).round() / 65535.0;

  Scene scene;
  scene.image.channels.assign(spec.channels, intensity);
  scene.gt = BinaryMask::Zero(H, W);
  for (const auto& t : targets) {
    TargetInfo info;
    info.amplitude = t.amplitude;
    Pixel brightest{-1, -1};
    std::vector<Pixel> members;
    for (int r = 0; r < H; ++r) {
      for (int c = 0; c < W; ++c) {
        if (!t.covers(r, c)) continue;
        scene.gt(r, c) = 1;
        members.push_back({r, c});
        info.centroid_row += r;
        info.centroid_col += c;
        if (brightest.row < 0 || intensity(r, c) > intensity(brightest.row, brightest.col)) brightest = {r, c};
      }
    }
    info.area = static_cast<int>(members.size());
    info.centroid_row /= info.area;
    info.centroid_col /= info.area;
    info.bin = size_bin(info.area);
    Pixel point = brightest;
    if (spec.point_jitter) {
      const Pixel moved{brightest.row + rng.integer(-1, 1), brightest.col + rng.integer(-1, 1)};
      if (std::find(members.begin(), members.end(), moved) != members.end()) point = moved;
    }
    scene.points.push_back(point);
    scene.targets.push_back(info);
  }
  return scene;
}

std::vector<std::size_t> Dataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < entries.size(); ++k) {
    if (entries[k].split == split) out.push_back(k);
  }
  return out;
}

namespace {

json spec_to_json(const SceneSpec& s) {
  json bins = json::array();
  for (const auto& b : s.bin_area) bins.push_back({b[0], b[1]});
  return json{{"height", s.height},
              {"width", s.width},
              {"channels", s.channels},
              {"targets_min", s.targets_min},
              {"targets_max", s.targets_max},
              {"bin_mix", s.bin_mix},
              {"bin_area", bins},
              {"amplitude_min", s.amplitude_min},
              {"amplitude_max", s.amplitude_max},
              {"anisotropy_max", s.anisotropy_max},
              {"clutter_min", s.clutter_min},
              {"clutter_max", s.clutter_max},
              {"clutter_amplitude_min", s.clutter_amplitude_min},
              {"clutter_amplitude_max", s.clutter_amplitude_max},
              {"clutter_sigma_min", s.clutter_sigma_min},
              {"clutter_sigma_max", s.clutter_sigma_max},
              {"clutter_anisotropy_max", s.clutter_anisotropy_max},
              {"noise_sigma", s.noise_sigma},
              {"background_level", s.background_level},
              {"background_gradient", s.background_gradient},
              {"point_jitter", s.point_jitter},
              {"max_placement_attempts", s.max_placement_attempts}};
}

SceneSpec spec_from_json(const json& j) {
  SceneSpec s;
  detail::ObjectReader rd(j, "");
  rd.read("height", s.height);
  rd.read("width", s.width);
  rd.read("channels", s.channels);
  rd.read("targets_min", s.targets_min);
  rd.read("targets_max", s.targets_max);
  rd.read("bin_mix", s.bin_mix);
  rd.read("bin_area", s.bin_area);
  rd.read("amplitude_min", s.amplitude_min);
  rd.read("amplitude_max", s.amplitude_max);
  rd.read("anisotropy_max", s.anisotropy_max);
  rd.read("clutter_min", s.clutter_min);
  rd.read("clutter_max", s.clutter_max);
  rd.read("clutter_amplitude_min", s.clutter_amplitude_min);
  rd.read("clutter_amplitude_max", s.clutter_amplitude_max);
  rd.read("clutter_sigma_min", s.clutter_sigma_min);
  rd.read("clutter_sigma_max", s.clutter_sigma_max);
  rd.read("clutter_anisotropy_max", s.clutter_anisotropy_max);
  rd.read("noise_sigma", s.noise_sigma);
  rd.read("background_level", s.background_level);
  rd.read("background_gradient", s.background_gradient);
  rd.read("point_jitter", s.point_jitter);
  rd.read("max_placement_attempts", s.max_placement_attempts);
  rd.finish();
  s.validate();
  return s;
}

json target_to_json(const TargetInfo& t) {
  return json{{"area", t.area},
              {"bin", kSizeBinNames[static_cast<int>(t.bin)]},
              {"centroid", {t.centroid_row, t.centroid_col}},
              {"amplitude", t.amplitude}};
}

TargetInfo target_from_json(const json& j) {
  TargetInfo t;
  t.area = j.at("area").get<int>();
  t.bin = size_bin(t.area);
  t.centroid_row = j.at("centroid").at(0).get<double>();
  t.centroid_col = j.at("centroid").at(1).get<double>();
  t.amplitude = j.at("amplitude").get<double>();
  return t;
}

}  // namespace

std::string scene_spec_to_json(const SceneSpec& spec) { return spec_to_json(spec).dump(2); }

SceneSpec scene_spec_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InvalidInput(std::string("scene spec is not valid JSON: ") + e.what());
  }
  return spec_from_json(j);
}

Dataset generate_dataset(const SceneSpec& spec, std::size_t n, std::uint64_t seed, const std::filesystem::path& dir) {
  if (n < 1) throw InvalidInput("dataset needs at least one scene");
  spec.validate();
  std::filesystem::create_directories(dir);
  std::string manifest = json{{"kind", "header"}, {"format", "gsacp-dataset"}, {"version", 1}, {"n", n}, {"seed", seed},
                              {"spec", spec_to_json(spec)}}
                             .dump() +
                         "\n";
  for (std::size_t i = 0; i < n; ++i) {
    const Scene scene = generate_scene(spec, scene_seed(seed, i));
    char stem[32];
    std::snprintf(stem, sizeof stem, "scene_%04zu", i);
    const std::string image = std::string(stem) + ".pgm";
    const std::string mask = std::string(stem) + "_mask.pgm";
    const std::string points = std::string(stem) + "_points.txt";
    io::write_pnm(dir / image, scene.image, 16);
    io::write_mask(dir / mask, scene.gt);
    io::write_points(dir / points, scene.points);
    json targets = json::array();
    for (const auto& t : scene.targets) targets.push_back(target_to_json(t));
    manifest += json{{"kind", "scene"},
                     {"index", i},
                     {"split", split_of(i) == Split::kVal ? "val" : "train"},
                     {"image", image},
                     {"image_sha256", sha256_file(dir / image)},
                     {"mask", mask},
                     {"mask_sha256", sha256_file(dir / mask)},
                     {"points", points},
                     {"points_sha256", sha256_file(dir / points)},
                     {"targets", targets}}
                    .dump() +
                "\n";
  }
  io::write_text(dir / "manifest.jsonl", manifest);
  return load_dataset(dir / "manifest.jsonl");
}

Dataset load_dataset(const std::filesystem::path& manifest) {
  Dataset ds;
  ds.root = manifest.parent_path();
  const std::string text = io::read_text(manifest);
  ds.manifest_sha256 = sha256_hex(text);
  std::istringstream in(text);
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    if (j.at("kind") == "header") {
      if (j.at("format") != "gsacp-dataset") throw InvalidInput("not a dataset manifest: " + manifest.string());
      ds.spec = spec_from_json(j.at("spec"));
      ds.seed = j.at("seed").get<std::uint64_t>();
      header = true;
      continue;
    }
    ManifestEntry e;
    e.index = j.at("index").get<std::size_t>();
    e.split = j.at("split") == "val" ? Split::kVal : Split::kTrain;
    e.image = j.at("image").get<std::string>();
    e.mask = j.at("mask").get<std::string>();
    e.points = j.at("points").get<std::string>();
    e.image_sha256 = j.at("image_sha256").get<std::string>();
    e.mask_sha256 = j.at("mask_sha256").get<std::string>();
    e.points_sha256 = j.at("points_sha256").get<std::string>();
    for (const auto& t : j.at("targets")) e.targets.push_back(target_from_json(t));
    for (const auto& [file, hash] : {std::pair{e.image, e.image_sha256}, std::pair{e.mask, e.mask_sha256},
                                     std::pair{e.points, e.points_sha256}}) {
      if (sha256_file(ds.root / file) != hash) throw InvalidInput("dataset file " + file + " does not match its manifest hash");
    }
    Scene scene;
    scene.image = io::read_pnm(ds.root / e.image);
    scene.gt = io::read_mask(ds.root / e.mask);
    scene.points = io::read_points(ds.root / e.points);
    scene.targets = e.targets;
    ds.entries.push_back(std::move(e));
    ds.scenes.push_back(std::move(scene));
  }
  if (!header) throw InvalidInput("dataset manifest has no header: " + manifest.string());
  return ds;
}

}  // namespace gsacp
