#pragma once

#include "gsacp/numgrid.hpp"

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace gsacp {

enum class FaMode {
  kUnmatchedComponents,  // pixels of predicted components matched to no target
  kAllFalsePixels,       // every predicted pixel outside the ground truth
};

struct EvalConfig {
  double threshold = 0.55;
  double match_distance = 3.0;
  int connectivity = 8;
  FaMode fa_mode = FaMode::kUnmatchedComponents;
  std::array<int, 3> bin_edges{10, 30, 80};

  void validate() const;
};

struct Match {
  int gt = 0;
  int pred = 0;
  double distance = 0.0;
};

/// Components of one prediction/ground-truth pair and their greedy nearest-first
/// centroid matching within match_distance.
struct ImageMatching {
  std::vector<Component> gt;
  std::vector<Component> pred;
  std::vector<Match> matches;
};

ImageMatching match_components(const BinaryMask& pred, const BinaryMask& gt, double match_distance, int connectivity = 8);

/// Global intersection over global union across the set.
double miou(const std::vector<BinaryMask>& preds, const std::vector<BinaryMask>& gts);
/// Mean of per-image IoU.
double niou(const std::vector<BinaryMask>& preds, const std::vector<BinaryMask>& gts);
/// Fraction of ground-truth components with a matched predicted centroid.
double pd(const std::vector<BinaryMask>& preds, const std::vector<BinaryMask>& gts, double match_distance,
          int connectivity = 8);
/// False-alarm pixels over all pixels, scaled by 1e6.
double fa(const std::vector<BinaryMask>& preds, const std::vector<BinaryMask>& gts, double match_distance,
          int connectivity = 8, FaMode mode = FaMode::kUnmatchedComponents);
/// Mean predicted/gt area over matched pairs; empty when nothing matched.
std::optional<double> area_ratio(const std::vector<BinaryMask>& preds, const std::vector<BinaryMask>& gts,
                                 double match_distance, int connectivity = 8);

struct TargetEval {
  int area = 0;
  bool detected = false;
  double iou = 0.0;
  std::optional<double> area_ratio;
};

/// One record per ground-truth component across the set.
std::vector<TargetEval> evaluate_targets(const std::vector<BinaryMask>& preds, const std::vector<BinaryMask>& gts,
                                         double match_distance, int connectivity = 8);

struct BinRow {
  std::string name;
  int count = 0;
  double iou = 0.0;
  std::optional<double> area_ratio;
  double pd = 0.0;
};

std::array<BinRow, 4> stratify(const std::vector<TargetEval>& targets, const std::array<int, 3>& bin_edges = {10, 30, 80});

struct SweepResult {
  double threshold = 0.0;
  double miou = 0.0;
};

/// Best global mIoU over thresholds; ties go to the lower threshold.
SweepResult threshold_sweep(const std::vector<ScalarField>& probs, const std::vector<BinaryMask>& gts,
                            const std::vector<double>& thresholds);

std::vector<double> default_sweep_grid();

struct EvalReport {
  double miou = 0.0;
  double niou = 0.0;
  double pd = 0.0;
  double fa = 0.0;
  std::optional<double> area_ratio;
  std::array<BinRow, 4> bins;
  double best_threshold = 0.0;
  double best_miou = 0.0;
};

EvalReport evaluate(const std::vector<ScalarField>& probs, const std::vector<BinaryMask>& gts, const EvalConfig& cfg);

std::string report_csv(const EvalReport& r);
std::string report_table(const EvalReport& r);

}  // namespace gsacp
