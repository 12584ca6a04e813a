#pragma once

#include "gsacp/checkpoint.hpp"

#include <functional>
#include <vector>

namespace gsacp {

/// Scores a candidate checkpoint, typically mIoU on a frozen validation split. Higher is better.
using SoupEval = std::function<double(const Checkpoint&)>;

/// Throws ShapeMismatch naming every segment whose name or shape disagrees with the first input.
void require_compatible(const std::vector<Checkpoint>& cks);

/// Elementwise mean. Inputs are put in a canonical order first, so the result does not depend
/// on how they were listed, and k copies of one checkpoint return it unchanged.
Checkpoint equal_average(const std::vector<Checkpoint>& cks);

/// (1 - alpha) a + alpha b; alpha 0 and 1 return a and b exactly.
Checkpoint interpolate(const Checkpoint& a, const Checkpoint& b, double alpha);

struct SoupResult {
  Checkpoint checkpoint;
  double score = 0.0;
  std::vector<std::size_t> chosen;  // input indices that were averaged
  double alpha = 0.0;               // sweep only
  std::vector<double> scores;       // every evaluated candidate, in evaluation order
};

/// Best equal average over all pairs. Candidates are visited in order of (epoch, input index),
/// and only a strictly better score replaces the incumbent.
SoupResult greedy_pair_average(const std::vector<Checkpoint>& cks, const SoupEval& eval);

/// Evaluates the interpolation at each alpha and keeps the first best.
SoupResult sweep_interpolate(const Checkpoint& a, const Checkpoint& b, const std::vector<double>& alphas,
                             const SoupEval& eval);

std::vector<double> default_alpha_grid(int points = 11);

}  // namespace gsacp
