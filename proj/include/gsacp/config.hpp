#pragma once

#include "gsacp/affinity.hpp"
#include "gsacp/detector.hpp"
#include "gsacp/losses.hpp"
#include "gsacp/metrics.hpp"
#include "gsacp/stabilizers.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace gsacp {

struct AxesConfig {
  bool decay = false;  // cosine relaxation of lambda_prop
  bool ltd = false;    // decay plus EMA teacher mixing inside seed disks
  bool hbc = false;    // negative-only hard-background contrast
  bool asg = false;    // radius-gated support
};

struct FailureSwitches {
  bool full_detach = false;
  bool global_teacher = false;
  bool positive_prototype = false;
  bool free_radius = false;
  bool shallow_fusion = false;

  bool any() const { return full_detach || global_teacher || positive_prototype || free_radius || shallow_fusion; }
};

struct TrainSettings {
  int epochs = 60;
  int batch_size = 2;
  double lr = 0.05;
  double momentum = 0.9;
  /// Global L2 norm cap on the batch gradient; 0 disables.
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  /// Trailing fraction of epochs whose checkpoints form the late plateau.
  double plateau_fraction = 0.25;
  std::vector<int> widths{8, 16, 16, 16};
  double head_bias_init = -2.0;
  double ema_decay = 0.99;
};

struct DiagnosticsConfig {
  int margin_samples = 64;
  int hard_radius = 12;
  double support_level = 0.5;
};

/// Fully resolved run configuration. Every field has a default; files override a subset.
struct Config {
  AffinityParams affinity;
  LossWeights loss{2.0, 1.0, 2.0, 1.0, 1.0, 1.0, 1.0};
  double m_neg = 0.3;
  double positive_threshold = 0.5;
  OhemConfig ohem;
  double decay_start = 30.0;
  double decay_floor = 0.0;
  MixSchedule mix;
  GateConfig gate;
  double gate_sigma_s = 4.0;
  TrainSettings train;
  AxesConfig axes;
  FailureSwitches failure;
  EvalConfig eval;
  DiagnosticsConfig diagnostics;

  void validate() const;

  bool gate_active() const { return axes.asg || failure.free_radius; }
  bool decay_active() const { return axes.decay || axes.ltd; }
  PropDecaySchedule decay_schedule() const;
  /// Loss weights in force at a (fractional) epoch.
  LossWeights weights_at(double epoch) const;
};

/// Canonical JSON text (sorted keys, two-space indent).
std::string config_to_json(const Config& cfg);
/// Overlays a JSON document onto the defaults; unknown keys and ill-typed values are rejected.
Config config_from_json(const std::string& text);

/// Leaf path -> canonical JSON value text, after default expansion.
std::map<std::string, std::string> flatten_config(const Config& cfg);

struct ConfigChange {
  std::string path;
  std::string old_value;
  std::string new_value;
};

std::vector<ConfigChange> diff_configs(const Config& parent, const Config& child);

std::string config_hash(const Config& cfg);

}  // namespace gsacp
