#pragma once

#include "gsacp/composite.hpp"
#include "gsacp/config.hpp"
#include "gsacp/detector.hpp"
#include "gsacp/stabilizers.hpp"
#include "gsacp/synthgen.hpp"

#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace gsacp {

/// Mean cosine of foreground pixels to their spatially nearest seed minus the mean cosine of
/// n_bg background pixels sampled within hard_radius of a seed. Positive means separated.
double margin_diagnostic(const FeatureMap& f, const PointSet& seeds, const BinaryMask& gt, int n_bg, std::mt19937_64& rng,
                         int hard_radius = 12);

/// Largest distance from each seed to a pixel of its connected A >= level region.
std::vector<double> support_radii(const ScalarField& A, const PointSet& seeds, double level = 0.5);

struct GateDecision {
  int epoch = 0;
  std::size_t scene = 0;
  int seed_index = 0;
  int radius = 0;
  std::vector<SupportScore> scores;
};

/// Per-image result of one forward/affinity/loss/backward pass.
struct ImagePass {
  LossBreakdown breakdown;
  Eigen::VectorXd gradient;
  std::vector<std::pair<int, int>> gate;  // (seed index, radius)
  std::vector<std::vector<SupportScore>> gate_scores;
};

/// Affinity bundle for one image under a configuration, including the support gate.
struct TargetBuild {
  AffinityBundle bundle;
  FeatureMap affinity_features;
  std::vector<int> radii;
  std::vector<std::vector<SupportScore>> scores;
};

TargetBuild build_target(const ForwardResult& fwd, const Scene& scene, const Config& cfg);

ImagePass image_pass(const ToyDetector& student, const ToyDetector* teacher, const Scene& scene, const Config& cfg,
                     double epoch);

struct OptimizerState {
  Eigen::VectorXd velocity;
};

struct StepRecord {
  long step = 0;
  double epoch = 0.0;
  LossBreakdown breakdown;
};

/// One optimization step over a batch: per-image passes, mean gradient, momentum SGD update,
/// EMA teacher update. Returns the batch-mean breakdown.
LossBreakdown train_step(ToyDetector& detector, OptimizerState& opt, TeacherState& teacher,
                         const std::vector<const Scene*>& batch, const Config& cfg, double epoch,
                         std::vector<std::pair<int, int>>* gate_out = nullptr,
                         std::vector<std::vector<SupportScore>>* scores_out = nullptr);

struct EpochStats {
  int epoch = 0;  // 0 is the untrained initialization
  LossComponents loss;
  double total = 0.0;
  double grad_desired_norm = 0.0;
  double grad_drift_norm = 0.0;
  double grad_aux_norm = 0.0;
  double lambda_prop = 0.0;
  double alpha = 0.0;
  double miou = 0.0;
  double niou = 0.0;
  double pd = 0.0;
  double fa = 0.0;
  double area_ratio = 0.0;  // NaN when nothing matched
  double margin = 0.0;
  double support_radius = 0.0;
  double val_prop = 0.0;
  double gate_max_fraction = 0.0;  // share of this epoch's gate decisions at the largest radius
};

struct Snapshot {
  int epoch = 0;
  Eigen::VectorXd parameters;
};

struct TrainStats {
  std::vector<EpochStats> epochs;
  std::vector<StepRecord> steps;
  std::vector<GateDecision> gate_log;
  std::vector<Snapshot> checkpoints;
  Eigen::VectorXd final_parameters;
};

/// Validation metrics and diagnostics for a parameter vector.
EpochStats evaluate_parameters(const ToyDetector& detector, const Dataset& data, const Config& cfg, int epoch);

/// Predicted probabilities on a split, in manifest order.
std::vector<ScalarField> predict(const ToyDetector& detector, const Dataset& data, Split split);

ToyDetector make_detector(const Config& cfg, int input_channels);

/// Full run: epoch 0 evaluation, then epochs of shuffled mini-batches with per-epoch validation
/// and late-plateau checkpoints.
TrainStats run_experiment(const Config& cfg, const Dataset& data);

/// Snapshot epochs of the late plateau: the trailing plateau_fraction of epochs.
std::vector<int> plateau_epochs(const Config& cfg);

std::string epochs_csv(const TrainStats& stats);
std::string steps_csv(const TrainStats& stats);
std::string gate_csv(const TrainStats& stats);

}  // namespace gsacp
