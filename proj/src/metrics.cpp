#include "gsacp/metrics.hpp"

#include "gsacp/synthgen.hpp"

#include <cstdio>
#include <sstream>

namespace gsacp {
namespace {

void require_aligned(const std::vector<BinaryMask>& preds, const std::vector<BinaryMask>& gts) {
  if (preds.size() != gts.size()) throw ShapeMismatch("prediction and ground-truth lists differ in length");
  for (std::size_t k = 0; k < preds.size(); ++k) require_same_shape(preds[k], gts[k], "prediction vs ground truth");
}

std::pair<long, long> intersection_union(const BinaryMask& pred, const BinaryMask& gt) {
  const long inter = ((pred != 0) && (gt != 0)).count();
  const long uni = ((pred != 0) || (gt != 0)).count();
  return {inter, uni};
}

long overlap(const Component& a, const Component& b) {
  long n = 0;
  std::size_t i = 0, j = 0;
  while (i < a.pixels.size() && j < b.pixels.size()) {
    if (a.pixels[i] == b.pixels[j]) {
      ++n;
      ++i;
      ++j;
    } else if (a.pixels[i] < b.pixels[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  return n;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

void EvalConfig::validate() const {
  if (!(threshold > 0.0 && threshold < 1.0)) throw InvalidParameter("eval threshold must lie in (0,1)");
  if (!(match_distance >= 0.0)) throw InvalidParameter("match distance must be >= 0");
  if (connectivity != 4 && connectivity != 8) throw InvalidParameter("connectivity must be 4 or 8");
  if (!(bin_edges[0] < bin_edges[1] && bin_edges[1] < bin_edges[2])) throw InvalidParameter("bin edges must ascend");
}

ImageMatching match_components(const BinaryMask& pred, const BinaryMask& gt, double match_distance, int connectivity) {
  require_same_shape(pred, gt, "match_components");
  ImageMatching m;
  m.gt = connected_components(gt, connectivity);
  m.pred = connected_components(pred, connectivity);
  std::vector<Match> candidates;
  for (std::size_t g = 0; g < m.gt.size(); ++g) {
    for (std::size_t p = 0; p < m.pred.size(); ++p) {
      const double d = std::hypot(m.gt[g].centroid_row - m.pred[p].centroid_row, m.gt[g].centroid_col - m.pred[p].centroid_col);
      if (d <= match_distance) candidates.push_back({static_cast<int>(g), static_cast<int>(p), d});
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(), [](const Match& a, const Match& b) { return a.distance < b.distance; });
  std::vector<bool> gt_used(m.gt.size()), pred_used(m.pred.size());
  for (const auto& c : candidates) {
    if (gt_used[c.gt] || pred_used[c.pred]) continue;
    gt_used[c.gt] = pred_used[c.pred] = true;
    m.matches.push_back(c);
  }
  return m;
}

double miou(const std::vector<BinaryMask>& preds, const std::vector<BinaryMask>& gts) {
  require_aligned(preds, gts);
  long inter = 0, uni = 0;
  for (std::size_t k = 0; k < preds.size(); ++k) {
    const auto [i, u] = intersection_union(preds[k], gts[k]);
    inter += i;
    uni += u;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double niou(const std::vector<BinaryMask>& preds, const std::vector<BinaryMask>& gts) {
  require_aligned(preds, gts);
  if (preds.empty()) return 1.0;
  double sum = 0.0;
  for (std::size_t k = 0; k < preds.size(); ++k) {
    const auto [i, u] = intersection_union(preds[k], gts[k]);
    sum += u == 0 ? 1.0 : static_cast<double>(i) / static_cast<double>(u);
  }
  return sum / static_cast<double>(preds.size());
}

double pd(const std::vector<BinaryMask>& preds, const std::vector<BinaryMask>& gts, double match_distance, int connectivity) {
  require_aligned(preds, gts);
  long detected = 0, total = 0;
  for (std::size_t k = 0; k < preds.size(); ++k) {
    const auto m = match_components(preds[k], gts[k], match_distance, connectivity);
    detected += static_cast<long>(m.matches.size());
    total += static_cast<long>(m.gt.size());
  }
  if (total == 0) throw InvalidInput("pd: ground truth contains no targets");
  return static_cast<double>(detected) / static_cast<double>(total);
}

double fa(const std::vector<BinaryMask>& preds, const std::vector<BinaryMask>& gts, double match_distance, int connectivity,
          FaMode mode) {
  require_aligned(preds, gts);
  long false_pixels = 0, pixels = 0;
  for (std::size_t k = 0; k < preds.size(); ++k) {
    pixels += preds[k].size();
    if (mode == FaMode::kAllFalsePixels) {
      false_pixels += ((preds[k] != 0) && (gts[k] == 0)).count();
      continue;
    }
    const auto m = match_components(preds[k], gts[k], match_distance, connectivity);
    std::vector<bool> matched(m.pred.size());
    for (const auto& mt : m.matches) matched[mt.pred] = true;
    for (std::size_t p = 0; p < m.pred.size(); ++p) {
      if (!matched[p]) false_pixels += m.pred[p].area;
    }
  }
  return pixels == 0 ? 0.0 : 1e6 * static_cast<double>(false_pixels) / static_cast<double>(pixels);
}

std::vector<TargetEval> evaluate_targets(const std::vector<BinaryMask>& preds, const std::vector<BinaryMask>& gts,
                                         double match_distance, int connectivity) {
  require_aligned(preds, gts);
  std::vector<TargetEval> out;
  for (std::size_t k = 0; k < preds.size(); ++k) {
    const auto m = match_components(preds[k], gts[k], match_distance, connectivity);
    std::vector<TargetEval> local(m.gt.size());
    for (std::size_t g = 0; g < m.gt.size(); ++g) local[g].area = m.gt[g].area;
    for (const auto& mt : m.matches) {
      const Component& g = m.gt[mt.gt];
      const Component& p = m.pred[mt.pred];
      const long inter = overlap(g, p);
      TargetEval& t = local[mt.gt];
      t.detected = true;
      t.iou = static_cast<double>(inter) / static_cast<double>(g.area + p.area - inter);
      t.area_ratio = static_cast<double>(p.area) / static_cast<double>(g.area);
    }
    out.insert(out.end(), local.begin(), local.end());
  }
  return out;
}

std::optional<double> area_ratio(const std::vector<BinaryMask>& preds, const std::vector<BinaryMask>& gts,
                                 double match_distance, int connectivity) {
  double sum = 0.0;
  long n = 0;
  for (const auto& t : evaluate_targets(preds, gts, match_distance, connectivity)) {
    if (!t.area_ratio) continue;
    sum += *t.area_ratio;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

std::array<BinRow, 4> stratify(const std::vector<TargetEval>& targets, const std::array<int, 3>& bin_edges) {
  std::array<BinRow, 4> rows;
  std::array<double, 4> ratio_sum{};
  std::array<int, 4> ratio_n{}, detected{};
  for (int k = 0; k < 4; ++k) rows[k].name = kSizeBinNames[k];
  for (const auto& t : targets) {
    const int b = static_cast<int>(size_bin(t.area, bin_edges));
    ++rows[b].count;
    rows[b].iou += t.iou;
    if (t.detected) ++detected[b];
    if (t.area_ratio) {
      ratio_sum[b] += *t.area_ratio;
      ++ratio_n[b];
    }
  }
  for (int k = 0; k < 4; ++k) {
    if (rows[k].count == 0) continue;
    rows[k].iou /= rows[k].count;
    rows[k].pd = static_cast<double>(detected[k]) / rows[k].count;
    if (ratio_n[k]) rows[k].area_ratio = ratio_sum[k] / ratio_n[k];
  }
  return rows;
}

SweepResult threshold_sweep(const std::vector<ScalarField>& probs, const std::vector<BinaryMask>& gts,
                            const std::vector<double>& thresholds) {
  if (thresholds.empty()) throw InvalidInput("threshold_sweep: empty threshold grid");
  std::vector<double> sorted = thresholds;
  std::sort(sorted.begin(), sorted.end());
  SweepResult best{sorted.front(), -1.0};
  for (double t : sorted) {
    if (!(t > 0.0 && t < 1.0)) throw InvalidParameter("threshold_sweep: thresholds must lie in (0,1)");
    std::vector<BinaryMask> preds;
    preds.reserve(probs.size());
    for (const auto& p : probs) preds.push_back(threshold_mask(p, t));
    const double m = miou(preds, gts);
    if (m > best.miou) best = {t, m};
  }
  return best;
}

std::vector<double> default_sweep_grid() {
  std::vector<double> grid;
  for (int k = 1; k <= 19; ++k) grid.push_back(0.05 * k);
  return grid;
}

EvalReport evaluate(const std::vector<ScalarField>& probs, const std::vector<BinaryMask>& gts, const EvalConfig& cfg) {
  cfg.validate();
  std::vector<BinaryMask> preds;
  preds.reserve(probs.size());
  for (const auto& p : probs) preds.push_back(threshold_mask(p, cfg.threshold));
  EvalReport r;
  r.miou = miou(preds, gts);
  r.niou = niou(preds, gts);
  r.pd = pd(preds, gts, cfg.match_distance, cfg.connectivity);
  r.fa = fa(preds, gts, cfg.match_distance, cfg.connectivity, cfg.fa_mode);
  const auto targets = evaluate_targets(preds, gts, cfg.match_distance, cfg.connectivity);
  double sum = 0.0;
  long n = 0;
  for (const auto& t : targets) {
    if (t.area_ratio) {
      sum += *t.area_ratio;
      ++n;
    }
  }
  if (n) r.area_ratio = sum / static_cast<double>(n);
  r.bins = stratify(targets, cfg.bin_edges);
  const auto sweep = threshold_sweep(probs, gts, default_sweep_grid());
  r.best_threshold = sweep.threshold;
  r.best_miou = sweep.miou;
  return r;
}

std::string report_csv(const EvalReport& r) {
  std::ostringstream out;
  out << "metric,value\n";
  out << "miou," << fmt(r.miou) << "\nniou," << fmt(r.niou) << "\npd," << fmt(r.pd) << "\nfa," << fmt(r.fa) << "\n";
  out << "area_ratio," << (r.area_ratio ? fmt(*r.area_ratio) : "") << "\n";
  out << "best_threshold," << fmt(r.best_threshold) << "\nbest_miou," << fmt(r.best_miou) << "\n";
  out << "\nbin,count,iou,area_ratio,pd\n";
  for (const auto& b : r.bins) {
    out << b.name << "," << b.count << "," << fmt(b.iou) << "," << (b.area_ratio ? fmt(*b.area_ratio) : "") << ","
        << fmt(b.pd) << "\n";
  }
  return out.str();
}

std::string report_table(const EvalReport& r) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "mIoU %.4f  nIoU %.4f  Pd %.4f  Fa(1e-6) %.2f  area ratio %s\n", r.miou, r.niou, r.pd,
                r.fa, r.area_ratio ? fmt(*r.area_ratio).c_str() : "n/a");
  out << line;
  std::snprintf(line, sizeof line, "best mIoU %.4f at threshold %.2f\n\n", r.best_miou, r.best_threshold);
  out << line;
  out << "GT size bin   Count     IoU  Area ratio      Pd\n";
  for (const auto& b : r.bins) {
    std::snprintf(line, sizeof line, "%-12s %6d  %.4f  %10s  %.4f\n", b.name.c_str(), b.count, b.iou,
                  b.area_ratio ? fmt(*b.area_ratio).substr(0, 6).c_str() : "n/a", b.pd);
    out << line;
  }
  return out.str();
}

}  // namespace gsacp
