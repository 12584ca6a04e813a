#include "gsacp/soup.hpp"

#include <algorithm>
#include <numeric>

namespace gsacp {
namespace {

std::vector<std::size_t> epoch_order(const std::vector<Checkpoint>& cks) {
  std::vector<std::size_t> order(cks.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return cks[a].epoch < cks[b].epoch; });
  return order;
}

}  // namespace

void require_compatible(const std::vector<Checkpoint>& cks) {
  if (cks.empty()) throw InvalidInput("soup: no checkpoints");
  const auto& ref = cks.front();
  std::string bad;
  for (std::size_t k = 1; k < cks.size(); ++k) {
    const auto& segs = cks[k].segments;
    const std::size_t n = std::max(segs.size(), ref.segments.size());
    for (std::size_t s = 0; s < n; ++s) {
      const bool ok = s < segs.size() && s < ref.segments.size() && segs[s].name == ref.segments[s].name &&
                      segs[s].shape == ref.segments[s].shape;
      if (ok) continue;
      const std::string name = s < segs.size() ? segs[s].name : ref.segments[s].name;
      bad += (bad.empty() ? "" : ", ") + name + " (input " + std::to_string(k) + ")";
    }
    if (bad.empty() && cks[k].parameters.size() != ref.parameters.size()) {
      bad += "parameter count (input " + std::to_string(k) + ")";
    }
  }
  if (!bad.empty()) throw ShapeMismatch("soup: incompatible segments: " + bad);
}

Checkpoint equal_average(const std::vector<Checkpoint>& cks) {
  require_compatible(cks);
  std::vector<std::string> hashes;
  for (const auto& c : cks) hashes.push_back(c.content_hash());
  std::vector<std::size_t> order(cks.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return hashes[a] < hashes[b]; });

  const Eigen::VectorXd& base = cks[order.front()].parameters;
  Eigen::VectorXd offset = Eigen::VectorXd::Zero(base.size());
  for (std::size_t k = 1; k < order.size(); ++k) offset += cks[order[k]].parameters - base;
  Checkpoint out = cks.front();
  out.parameters = base + offset / static_cast<double>(cks.size());
  out.epoch = 0;
  for (const auto& c : cks) out.epoch = std::max(out.epoch, c.epoch);
  return out;
}

Checkpoint interpolate(const Checkpoint& a, const Checkpoint& b, double alpha) {
  require_compatible({a, b});
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidParameter("interpolate: alpha must lie in [0,1]");
  if (alpha == 0.0) return a;
  if (alpha == 1.0) return b;
  Checkpoint out = a;
  out.parameters = (1.0 - alpha) * a.parameters + alpha * b.parameters;
  out.epoch = std::max(a.epoch, b.epoch);
  return out;
}

SoupResult greedy_pair_average(const std::vector<Checkpoint>& cks, const SoupEval& eval) {
  if (cks.size() < 2) throw InvalidInput("greedy_pair_average: needs at least two checkpoints");
  require_compatible(cks);
  const auto order = epoch_order(cks);
  SoupResult best;
  bool have = false;
  for (std::size_t i = 0; i < order.size(); ++i) {
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      Checkpoint avg = equal_average({cks[order[i]], cks[order[j]]});
      const double score = eval(avg);
      best.scores.push_back(score);
      if (!have || score > best.score) {
        have = true;
        best.checkpoint = std::move(avg);
        best.score = score;
        best.chosen = {order[i], order[j]};
      }
    }
  }
  return best;
}

SoupResult sweep_interpolate(const Checkpoint& a, const Checkpoint& b, const std::vector<double>& alphas,
                             const SoupEval& eval) {
  const bool has0 = std::find(alphas.begin(), alphas.end(), 0.0) != alphas.end();
  const bool has1 = std::find(alphas.begin(), alphas.end(), 1.0) != alphas.end();
  if (!has0 || !has1) throw InvalidParameter("sweep_interpolate: alpha grid must include 0 and 1");
  SoupResult best;
  bool have = false;
  for (double alpha : alphas) {
    Checkpoint c = interpolate(a, b, alpha);
    const double score = eval(c);
    best.scores.push_back(score);
    if (!have || score > best.score) {
      have = true;
      best.checkpoint = std::move(c);
      best.score = score;
      best.alpha = alpha;
    }
  }
  best.chosen = {0, 1};
  return best;
}

std::vector<double> default_alpha_grid(int points) {
  if (points < 2) throw InvalidParameter("alpha grid needs at least two points");
  std::vector<double> grid;
  for (int k = 0; k < points; ++k) grid.push_back(static_cast<double>(k) / (points - 1));
  grid.back() = 1.0;
  return grid;
}

}  // namespace gsacp
