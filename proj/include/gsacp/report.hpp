#pragma once

#include "gsacp/ledger.hpp"

#include <string>
#include <vector>

namespace gsacp {

/// Short name of a run: "baseline", the changed path and value, or the soup rule.
std::string variant_label(const RunRecord& r);

/// Names of failure switches enabled in a record's config, empty for stabilizer runs.
std::vector<std::string> failure_switches(const RunRecord& r);

std::string main_table(const std::vector<RunRecord>& records);
/// Empty when no record enables a failure switch.
std::string failure_table(const std::vector<RunRecord>& records);

struct ParetoPoint {
  std::string run_id;
  std::string label;
  double miou = 0.0;
  double fa = 0.0;
  bool frontier = false;
};

/// One point per record with finite mIoU and Fa; frontier points are not dominated on (high mIoU, low Fa).
std::vector<ParetoPoint> pareto_points(const std::vector<RunRecord>& records);
std::string pareto_csv(const std::vector<ParetoPoint>& points);
std::string pareto_svg(const std::vector<ParetoPoint>& points);

}  // namespace gsacp
