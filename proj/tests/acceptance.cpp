// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers as arguments to
// run a subset; the first argument may be a scratch directory (default: ./acceptance_ws).

#include "gsacp/checkpoint.hpp"
#include "gsacp/composite.hpp"
#include "gsacp/grad_check.hpp"
#include "gsacp/io.hpp"
#include "gsacp/soup.hpp"
#include "gsacp/workspace.hpp"

#include "oracles.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdarg>
#include <cstring>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>

using namespace gsacp;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string printf_str(const char* fmt, ...) __attribute__((format(printf, 1, 2)));
std::string printf_str(const char* fmt, ...) {
  char buf[512];
  va_list args;
  va_start(args, fmt);
  std::vsnprintf(buf, sizeof buf, fmt, args);
  va_end(args);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path g_scratch = "acceptance_ws";

// ---------------------------------------------------------------------------
// Random instances

ScalarField random_field(int h, int w, double lo, double hi) {
  ScalarField f(h, w);
  for (int i = 0; i < f.size(); ++i) f.data()[i] = oracle::uniform(lo, hi);
  return f;
}

PointSet random_seeds(int h, int w, int n) {
  std::set<std::pair<int, int>> used;
  PointSet out;
  while (static_cast<int>(out.size()) < n) {
    const int r = static_cast<int>(oracle::uniform(0, h));
    const int c = static_cast<int>(oracle::uniform(0, w));
    if (used.insert({r, c}).second) out.push_back({r, c});
  }
  return out;
}

FeatureMap random_features(int channels, int h, int w) {
  Eigen::MatrixXd v(channels, h * w);
  for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = oracle::uniform(-1, 1);
  return FeatureMap(v, h, w);
}

Image random_image(int h, int w) {
  Image img;
  img.channels.push_back(random_field(h, w, 0, 1));
  return img;
}

// ---------------------------------------------------------------------------
// 1. Equation fidelity

Outcome criterion_equations() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  int gate_mismatch = 0;
  std::string worst_name = "none";
  auto note = [&](const char* name, double err) {
    if (err > worst) {
      worst = err;
      worst_name = name;
    }
  };
  for (int inst = 0; inst < 20; ++inst) {
    const int H = 8, W = 8;
    const ScalarField s = random_field(H, W, -1, 1);
    const double m = oracle::uniform(0.0, 0.95);
    note("hard_margin_sharpen", oracle::max_rel_err(hard_margin_sharpen(s, m), oracle::hard_margin(s, m)));

    const Image img = random_image(H, W);
    const PointSet seeds = random_seeds(H, W, 1 + inst % 3);
    IndexField winner(H, W);
    std::vector<std::vector<int>> winner_v(H, std::vector<int>(W));
    for (int r = 0; r < H; ++r) {
      for (int c = 0; c < W; ++c) winner(r, c) = winner_v[r][c] = static_cast<int>(oracle::uniform(0, seeds.size()));
    }
    AffinityParams params;
    params.sigma_s = oracle::uniform(0.5, 6.0);
    params.sigma_c = oracle::uniform(0.05, 0.5);
    const ScalarField w = local_prior(img, seeds, winner, params);
    note("local_prior", oracle::max_rel_err(w, oracle::local_prior(img.channels[0], seeds, winner_v, params.sigma_s, params.sigma_c)));

    const ScalarField a = random_field(H, W, 0, 1);
    note("propagation_target", oracle::max_rel_err(propagation_target(a, w), oracle::product(a, w)));
    note("propagation_loss", oracle::rel_err(propagation_loss(a, w).value, oracle::propagation_loss(a, w)));

    const int C = 4;
    const int n_neg = inst % 7;
    Eigen::VectorXd zp = Eigen::VectorXd::NullaryExpr(C, [] { return oracle::uniform(-1, 1); }).normalized();
    Eigen::MatrixXd neg(C, n_neg);
    std::vector<std::vector<double>> neg_v;
    for (int k = 0; k < n_neg; ++k) {
      neg.col(k) = Eigen::VectorXd::NullaryExpr(C, [] { return oracle::uniform(-1, 1); }).normalized();
      if (k == 0) neg.col(k) = (zp + 0.1 * neg.col(k)).normalized();
      neg_v.emplace_back(neg.col(k).data(), neg.col(k).data() + C);
    }
    const double m_neg = oracle::uniform(0.0, 0.6);
    note("contrastive_hard_bg_loss",
         oracle::rel_err(contrastive_hard_bg_loss<double>(zp, neg, m_neg),
                         oracle::contrastive(std::vector<double>(zp.data(), zp.data() + C), neg_v, m_neg)));

    const ScalarField A = random_field(H, W, 0, 1);
    const ScalarField T = random_field(H, W, 0, 1);
    const double alpha = oracle::uniform(0, 1);
    const int radius = inst % 5;
    note("predmix_target", oracle::max_rel_err(predmix_target(stop_gradient(A), T, seeds, alpha, radius).values,
                                               oracle::predmix(A, T, seeds, alpha, radius)));

    PropDecaySchedule sched;
    sched.lambda0 = oracle::uniform(0.1, 2.0);
    sched.total_epochs = 60;
    sched.decay_start = oracle::uniform(0, 59);
    sched.floor = oracle::uniform(0, sched.lambda0);
    for (int k = 0; k < 8; ++k) {
      const double e = oracle::uniform(0, 70);
      note("lambda_prop_at", oracle::rel_err(lambda_prop_at(sched, e),
                                             oracle::lambda_prop(sched.lambda0, sched.decay_start, 60, sched.floor, e)));
    }

    GateConfig gate;
    std::vector<SupportScore> scores;
    std::vector<double> Q, Cr;
    for (std::size_t k = 0; k < gate.radii.size(); ++k) {
      // Quantized so that ties occur.
      const double q = std::round(oracle::uniform(-1, 1) * 4) / 4;
      const double c = std::round(oracle::uniform(0.3, 1.0) * 10) / 10;
      scores.push_back({q, c});
      Q.push_back(q);
      Cr.push_back(c);
    }
    if (adaptive_support_gate(scores, gate) != oracle::gate(Q, Cr, gate.radii, gate.tau)) ++gate_mismatch;
  }
  const double elapsed = seconds_since(t0);
  return {worst <= 1e-10 && gate_mismatch == 0 && elapsed < 5.0,
          printf_str("max rel err %.2e (%s), gate mismatches %d, %.2fs", worst, worst_name.c_str(), gate_mismatch, elapsed)};
}

// ---------------------------------------------------------------------------
// 2. Gradient audit

Eigen::VectorXd flat(const ScalarField& f) { return Eigen::Map<const Eigen::VectorXd>(f.data(), f.size()); }
ScalarField field(const Eigen::VectorXd& v, int h, int w) {
  ScalarField f(h, w);
  Eigen::Map<Eigen::VectorXd>(f.data(), f.size()) = v;
  return f;
}

struct AuditTally {
  double worst = 0.0;
  std::string worst_name;
  int failures = 0;
  void add(const char* name, const AuditResult& r) {
    if (r.max_relative_error > worst) {
      worst = r.max_relative_error;
      worst_name = name;
    }
    if (r.max_relative_error >= 1e-3) ++failures;
  }
};

Outcome criterion_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  AuditTally tally;
  const int H = 8, W = 8;
  try {
    for (int probe = 0; probe < 20; ++probe) {
      AuditOptions opt;
      opt.seed = static_cast<std::uint64_t>(probe);
      const PointSet seeds = random_seeds(H, W, 1 + probe % 3);

      const ScalarField prob0 = random_field(H, W, 0.05, 0.95);
      tally.add("seed_loss", finite_difference_audit(
                                 [&](const Eigen::VectorXd& x) {
                                   const auto l = seed_loss(field(x, H, W), seeds);
                                   return std::make_pair(l.value, flat(l.grad));
                                 },
                                 flat(prob0), {}, opt));
      const ScalarField logits0 = random_field(H, W, -4, 4);
      tally.add("seed_loss_logits", finite_difference_audit(
                                        [&](const Eigen::VectorXd& x) {
                                          const auto l = seed_loss_logits(field(x, H, W), seeds);
                                          return std::make_pair(l.value, flat(l.grad));
                                        },
                                        flat(logits0), {}, opt));
      OhemConfig ohem;
      ohem.k_frac = 0.2;
      ohem.exclusion_radius = 1;
      tally.add("background_ohem_loss", finite_difference_audit(
                                            [&](const Eigen::VectorXd& x) {
                                              const auto l = background_ohem_loss(field(x, H, W), seeds, ohem);
                                              return std::make_pair(l.value, flat(l.grad));
                                            },
                                            flat(prob0), {}, opt));
      tally.add("background_ohem_loss_logits", finite_difference_audit(
                                                   [&](const Eigen::VectorXd& x) {
                                                     const auto l = background_ohem_loss_logits(field(x, H, W), seeds, ohem);
                                                     return std::make_pair(l.value, flat(l.grad));
                                                   },
                                                   flat(logits0), {}, opt));
      const ScalarField w0 = random_field(H, W, 0, 1);
      tally.add("propagation_loss", finite_difference_audit(
                                        [&](const Eigen::VectorXd& x) {
                                          const auto l = propagation_loss(field(x, H, W), w0);
                                          return std::make_pair(l.value, flat(l.grad));
                                        },
                                        flat(random_field(H, W, 0, 1)), {}, opt));
      tally.add("sparsity_loss", finite_difference_audit(
                                     [&](const Eigen::VectorXd& x) {
                                       const auto l = sparsity_loss(field(x, H, W));
                                       return std::make_pair(l.value, flat(l.grad));
                                     },
                                     flat(w0), {}, opt));
      const TargetField target = stop_gradient(random_field(H, W, 0, 1));
      tally.add("consistency_loss", finite_difference_audit(
                                        [&](const Eigen::VectorXd& x) {
                                          const auto l = consistency_loss(field(x, H, W), target);
                                          return std::make_pair(l.value, flat(l.grad));
                                        },
                                        flat(prob0), {}, opt));

      // Pair losses through channel normalization, with respect to raw feature columns.
      const int C = 4, n = 5;
      auto pair_audit = [&](const char* name, bool contrast) {
        Eigen::MatrixXd raw(C, 2 * n);
        for (Eigen::Index i = 0; i < raw.size(); ++i) raw.data()[i] = oracle::uniform(-1, 1);
        raw.rightCols(n) = raw.leftCols(n) + 0.4 * raw.rightCols(n);  // keep pairs correlated
        auto eval = [&](const Eigen::VectorXd& x) {
          const Eigen::Map<const Eigen::MatrixXd> m(x.data(), C, 2 * n);
          const FeatureMap f(m, 1, 2 * n);
          const FeatureMap z = l2_normalize_channels(f);
          const Eigen::MatrixXd anchors = z.values.leftCols(n), others = z.values.rightCols(n);
          const auto l = contrast ? contrastive_hard_bg_loss<double>(anchors, others, 0.2) : positive_prototype_loss<double>(anchors, others);
          FeatureMap dz(C, 1, 2 * n);
          dz.values.leftCols(n) = l.grad_anchor;
          dz.values.rightCols(n) = l.grad_other;
          const FeatureMap df = normalize_backward(f, dz);
          return std::make_pair(l.value, Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(df.values.data(), df.values.size())));
        };
        tally.add(name, finite_difference_audit(eval, Eigen::Map<const Eigen::VectorXd>(raw.data(), raw.size()), {}, opt));
      };
      pair_audit("contrastive_hard_bg_loss", true);
      pair_audit("positive_prototype_loss", false);

      // L_prop and L_sparse through the affinity construction, with respect to raw features.
      const Image img = random_image(H, W);
      const FeatureMap f0 = random_features(3, H, W);
      AffinityParams aff;
      aff.m_hard = 0.3;
      auto affinity_eval = [&](const Eigen::VectorXd& x) {
        const FeatureMap f(Eigen::Map<const Eigen::MatrixXd>(x.data(), 3, H * W), H, W);
        const auto b = build_affinity(f, img, seeds, aff);
        const auto prop = propagation_loss(b.a, b.w);
        const auto sp = sparsity_loss(b.A);
        const ScalarField ds = (prop.grad + sp.grad * b.w) * hard_margin_derivative(b.s, aff.m_hard);
        const FeatureMap df = seed_similarity_backward(f, seeds, b.winner, ds);
        return std::make_pair(prop.value + sp.value, Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(df.values.data(), df.values.size())));
      };
      tally.add("affinity(prop+sparse)", finite_difference_audit(
                                             affinity_eval, Eigen::Map<const Eigen::VectorXd>(f0.values.data(), f0.values.size()), {}, opt));

      // Composite objective through the toy detector, consistency target held fixed.
      const int S = 12;
      const Image dimg = random_image(S, S);
      const PointSet dseeds = random_seeds(S, S, 2);
      Architecture arch;
      ToyDetector det(arch, 100 + probe);
      CompositeOptions copt;
      copt.ohem.exclusion_radius = 2;
      copt.ohem.k_frac = 0.05;
      copt.m_hard = aff.m_hard;
      copt.hard_bg_contrast = probe % 2 == 0;
      copt.positive_prototype = probe % 4 == 1;
      copt.weights.w_ctr = 1.0;
      copt.weights.w_pos = 0.5;
      copt.positive_threshold = 0.2;
      const TargetField ctarget = stop_gradient(random_field(S, S, 0, 0.5));
      auto composite_eval = [&](const Eigen::VectorXd& p) {
        ToyDetector d = det;
        d.set_parameters(p);
        const ForwardResult fwd = d.forward(dimg);
        const auto bundle = build_affinity(fwd.features, dimg, dseeds, aff);
        const auto res = composite_loss<double>(fwd.features, fwd.logits, d.head_weights(), bundle, dseeds, ctarget, copt);
        const FeatureMap dF(res.dfeat_drift.values + res.dfeat_aux.values, S, S);
        return std::make_pair(res.breakdown.total, d.backward(fwd, dF, res.dlogits));
      };
      std::vector<Eigen::Index> coords;
      for (const auto& seg : det.segments()) {
        for (int k = 0; k < 4; ++k) coords.push_back(seg.offset + static_cast<Eigen::Index>(oracle::uniform(0, seg.size)));
      }
      tally.add("composite(detector)", finite_difference_audit(composite_eval, det.parameters(), coords, opt));
    }
  } catch (const std::exception& e) {
    return {false, std::string("audit threw: ") + e.what()};
  }
  const double elapsed = seconds_since(t0);
  return {tally.failures == 0 && elapsed < 60.0,
          printf_str("worst rel err %.2e (%s), %d audits over 1e-3, %.1fs", tally.worst, tally.worst_name.c_str(),
                     tally.failures, elapsed)};
}

// ---------------------------------------------------------------------------
// Shared experiment data

const Dataset& small_dataset() {
  static const Dataset data = [] {
    SceneSpec spec;
    spec.height = spec.width = 48;
    return generate_dataset(spec, 16, 7, g_scratch / "small");
  }();
  return data;
}

const Dataset& drift_dataset() {
  static const Dataset data = generate_dataset(SceneSpec{}, 64, 2024, g_scratch / "drift");
  return data;
}

// ---------------------------------------------------------------------------
// 3. Stop-gradient contract

Outcome criterion_stop_gradient() {
  Config cfg;
  cfg.loss.lambda_prop = 0.0;
  cfg.train.epochs = 5;
  cfg.axes.ltd = true;  // exercise the mixed target as well
  cfg.mix.ramp_start = 1.0;
  cfg.mix.ramp_end = 3.0;
  cfg.decay_start = 0.0;
  const TrainStats stats = run_experiment(cfg, small_dataset());
  long nonzero = 0, tape_violations = 0;
  for (const auto& s : stats.steps) {
    if (s.breakdown.grad_drift_norm != 0.0) ++nonzero;
    for (const auto& e : s.breakdown.tape) {
      if (e.loss == "cons" && e.path != GradPath::kPrediction) ++tape_violations;
      if (e.loss == "prop" && e.norm != 0.0) ++nonzero;
    }
  }
  // Consistency alone: the feature routes must carry exactly nothing.
  const Scene& scene = small_dataset().scenes.front();
  ToyDetector det = make_detector(cfg, 1);
  const ForwardResult fwd = det.forward(scene.image);
  const auto bundle = build_affinity(fwd.features, scene.image, scene.points, cfg.affinity);
  CompositeOptions opt;
  opt.weights = {0, 0, 0, 0, 1, 0, 0};
  const auto res = composite_loss<double>(fwd.features, fwd.logits, det.head_weights(), bundle, scene.points,
                                          stop_gradient(bundle.A), opt);
  const bool feature_routes_zero = (res.dfeat_drift.values.array() == 0.0).all() && (res.dfeat_aux.values.array() == 0.0).all();
  bool unmarked_rejected = false;
  try {
    consistency_loss(ScalarField(bundle.A), TargetField{bundle.A, false});
  } catch (const ContractViolation&) {
    unmarked_rejected = true;
  }
  bool forged_tape_rejected = false;
  try {
    LossBreakdown forged;
    forged.tape.push_back({"cons", GradPath::kAffinity, 1.0, false});
    check_stop_gradient(forged);
  } catch (const ContractViolation&) {
    forged_tape_rejected = true;
  }
  const bool pass = nonzero == 0 && tape_violations == 0 && feature_routes_zero && unmarked_rejected &&
                    forged_tape_rejected && !stats.steps.empty();
  return {pass, printf_str("%zu steps, nonzero drift %ld, tape violations %ld, cons-only feature grads zero %s", stats.steps.size(),
                           nonzero, tape_violations, feature_routes_zero ? "yes" : "no")};
}

// ---------------------------------------------------------------------------
// 4. Drift reproduction

Config base_config(std::uint64_t seed) {
  Config cfg;
  cfg.train.seed = seed;
  return cfg;
}

Outcome criterion_drift() {
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset& data = drift_dataset();
  const TrainStats base = run_experiment(base_config(0), data);
  const double base_ratio = base.epochs.back().area_ratio;
  int wins = 0;
  double drift_ratio = NAN;
  std::string margins;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Config loose = base_config(seed);
    loose.affinity.m_hard = 0.3;
    Config ltd = loose;
    ltd.axes.ltd = true;
    const TrainStats a = run_experiment(loose, data);
    const TrainStats b = run_experiment(ltd, data);
    if (seed == 0) drift_ratio = a.epochs.back().area_ratio;
    const double ma = a.epochs.back().margin, mb = b.epochs.back().margin;
    if (ma < mb) ++wins;
    margins += printf_str("%s%.3f/%.3f", seed ? " " : "", ma, mb);
  }
  const bool part_a = drift_ratio > 3.0 && base_ratio < 1.8;
  const bool part_b = wins >= 4;
  return {part_a && part_b, printf_str("(a) area ratio m=0.3 %.2f, m=0.7 %.2f; (b) margin none<ltd in %d/5 [%s]; %.0fs",
                                       drift_ratio, base_ratio, wins, margins.c_str(), seconds_since(t0))};
}

// ---------------------------------------------------------------------------
// 5. Failure-map smoke tests

Outcome criterion_failure_map() {
  const Dataset& data = drift_dataset();
  Config detach = base_config(0);
  detach.failure.full_detach = true;
  const TrainStats d = run_experiment(detach, data);
  const int E = detach.train.epochs;
  double prop_lo = INFINITY, prop_hi = -INFINITY, support_hi = 0.0;
  for (const auto& e : d.epochs) {
    if (e.epoch <= E / 2) continue;
    prop_lo = std::min(prop_lo, e.loss.prop);
    prop_hi = std::max(prop_hi, e.loss.prop);
    support_hi = std::max(support_hi, e.support_radius);
  }
  const bool detach_ok = prop_lo >= 0.4 && prop_hi <= 0.6 && support_hi <= 2.0;

  Config free = base_config(0);
  free.failure.free_radius = true;
  const TrainStats f = run_experiment(free, data);
  const int late = plateau_epochs(free).front();
  long total = 0, at_max = 0;
  for (const auto& g : f.gate_log) {
    if (g.epoch < late) continue;
    ++total;
    if (g.radius == free.gate.radii.back()) ++at_max;
  }
  const double share = total ? static_cast<double>(at_max) / total : 0.0;
  return {detach_ok && share > 0.8,
          printf_str("full_detach L_prop in [%.3f, %.3f], support <= %.2f px; free_radius max-radius share %.3f", prop_lo,
                     prop_hi, support_hi, share)};
}

// ---------------------------------------------------------------------------
// 6. Metrics oracle

BinaryMask parse_mask(const std::vector<std::string>& rows) {
  BinaryMask m = BinaryMask::Zero(16, 16);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(r, c) = rows[r][c] == '#' ? 1 : 0;
  }
  return m;
}

struct Fixture {
  std::vector<std::string> gt, pred;
};

// Hand-drawn 16x16 pairs: exact hits, halos, misses, splits, merges, clutter, empty images.
std::vector<Fixture> metric_fixtures() {
  return {
      {{"", "", "   ##", "   ##"}, {"", "", "   ##", "   ##"}},
      {{"", "", "   ##", "   ##"}, {"", "  ####", "  ####", "  ####", "  ####"}},
      {{"", "#", "", "", "", "", "", "", "          ###", "          ###", "          ###"},
       {"", "", "", "", "", "", "", "", "          ###", "          ##", "", "", "", "  #", "  ##"}},
      {{"", "", "", "", "      #####", "      #####", "      #####", "      #####", "      #####"},
       {"", "", "", "", "      ##", "      ##", "", "         ##", "         ##"}},
      {{"", "", "  ##      ##", "  ##      ##"}, {"", "", "  ##########", "  ##########"}},
      {{}, {"", "", "", "", "", "", "", "", "", "", "", "", "", "            ###", "            ###"}},
      {{"", "", "", "", "", "        #"}, {}},
      {{"##", "##", "", "", "", "", "", "", "", "", "", "", "", "", "              ##", "              ##"},
       {"###", "###", "###", "", "", "", "", "", "", "", "", "", "", "", "              ##", "               #"}},
      {{"", "", "   #", "    #", "     #", "", "", "", "", "         #######", "         #######", "         #######",
        "         #######", "         #######", "         #######", "         #######"},
       {"", "", "   #", "   ##", "     #", "", "", "", "", "", "          #####", "          #####", "          #####",
        "          #####", "          #####", "", ""}},
      {{"", "", "", "", "", "", "", "       ##", "       ##"}, {"", "", "", "", "", "", "", "", "", "", "", "", "#"}},
  };
}

Outcome criterion_metrics() {
  const auto fixtures = metric_fixtures();
  std::vector<BinaryMask> preds, gts;
  for (const auto& f : fixtures) {
    gts.push_back(parse_mask(f.gt));
    preds.push_back(parse_mask(f.pred));
  }
  const double d = 3.0;
  long inter = 0, uni = 0, matched = 0, targets = 0, false_px = 0, pixels = 0;
  double niou_sum = 0.0, ratio_sum = 0.0;
  long ratio_n = 0;
  std::vector<TargetEval> expected_targets;
  for (std::size_t k = 0; k < preds.size(); ++k) {
    long i = 0, u = 0;
    for (int r = 0; r < 16; ++r) {
      for (int c = 0; c < 16; ++c) {
        i += preds[k](r, c) && gts[k](r, c);
        u += preds[k](r, c) || gts[k](r, c);
      }
    }
    inter += i;
    uni += u;
    niou_sum += u == 0 ? 1.0 : static_cast<double>(i) / static_cast<double>(u);
    const auto g = oracle::blobs(gts[k]), p = oracle::blobs(preds[k]);
    const auto m = oracle::match(g, p, d);
    targets += g.size();
    matched += m.size();
    pixels += 256;
    std::vector<bool> pm(p.size());
    std::vector<TargetEval> local(g.size());
    for (std::size_t j = 0; j < g.size(); ++j) local[j].area = static_cast<int>(g[j].pixels.size());
    for (const auto& [gi, pi] : m) {
      pm[pi] = true;
      const double ratio = static_cast<double>(p[pi].pixels.size()) / static_cast<double>(g[gi].pixels.size());
      ratio_sum += ratio;
      ++ratio_n;
      long ov = 0;
      for (const auto& a : g[gi].pixels) {
        for (const auto& b : p[pi].pixels) ov += a == b;
      }
      local[gi].detected = true;
      local[gi].iou = static_cast<double>(ov) / static_cast<double>(g[gi].pixels.size() + p[pi].pixels.size() - ov);
      local[gi].area_ratio = ratio;
    }
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (!pm[j]) false_px += p[j].pixels.size();
    }
    expected_targets.insert(expected_targets.end(), local.begin(), local.end());
  }
  std::vector<std::string> bad;
  if (miou(preds, gts) != static_cast<double>(inter) / static_cast<double>(uni)) bad.push_back("miou");
  if (niou(preds, gts) != niou_sum / static_cast<double>(preds.size())) bad.push_back("niou");
  if (pd(preds, gts, d) != static_cast<double>(matched) / static_cast<double>(targets)) bad.push_back("pd");
  if (fa(preds, gts, d) != 1e6 * static_cast<double>(false_px) / static_cast<double>(pixels)) bad.push_back("fa");
  const auto ar = area_ratio(preds, gts, d);
  if (!ar || *ar != ratio_sum / static_cast<double>(ratio_n)) bad.push_back("area_ratio");
  const auto rows = stratify(evaluate_targets(preds, gts, d), {10, 30, 80});
  std::array<int, 4> count{}, det{};
  std::array<double, 4> iou{};
  for (const auto& t : expected_targets) {
    const int b = t.area <= 10 ? 0 : t.area <= 30 ? 1 : t.area <= 80 ? 2 : 3;
    ++count[b];
    iou[b] += t.iou;
    det[b] += t.detected;
  }
  for (int b = 0; b < 4; ++b) {
    if (rows[b].count != count[b]) bad.push_back("stratify.count");
    if (count[b] && (rows[b].iou != iou[b] / count[b] || rows[b].pd != static_cast<double>(det[b]) / count[b])) {
      bad.push_back("stratify.bin");
    }
  }
  // The divergence case: image 1 overlaps 2 of 4 union pixels, image 2 overlaps 1 of 3.
  const BinaryMask g1 = parse_mask({"###"}), p1 = parse_mask({" ###"});
  const BinaryMask g2 = parse_mask({"##"}), p2 = parse_mask({" ##"});
  const double dm = miou({p1, p2}, {g1, g2}), dn = niou({p1, p2}, {g1, g2});
  if (dm != 3.0 / 7.0) bad.push_back("divergence.miou");
  if (dn != (0.5 + 1.0 / 3.0) / 2.0 || std::abs(dn - 5.0 / 12.0) > 1e-15) bad.push_back("divergence.niou");
  std::string names;
  for (const auto& b : bad) names += " " + b;
  return {bad.empty(), printf_str("%zu fixtures, %ld targets, mismatches:%s; divergence %.6f vs %.6f", fixtures.size(), targets,
                                  bad.empty() ? " none" : names.c_str(), dm, dn)};
}

// ---------------------------------------------------------------------------
// 7. Soup algebra

Checkpoint random_checkpoint(int epoch) {
  Architecture arch;
  arch.widths = {3, 4};
  ToyDetector det(arch, static_cast<std::uint64_t>(1000 + epoch));
  Eigen::VectorXd p = det.parameters();
  for (Eigen::Index k = 0; k < p.size(); ++k) p[k] += oracle::uniform(-0.5, 0.5);
  det.set_parameters(p);
  return make_checkpoint(det, "fixture", epoch, "");
}

Outcome criterion_soup() {
  std::vector<std::string> bad;
  std::vector<Checkpoint> cks;
  for (int e = 0; e < 5; ++e) cks.push_back(random_checkpoint(50 + e));

  const Checkpoint one = cks[2];
  if (equal_average({one, one, one}).parameters != one.parameters) bad.push_back("idempotence");
  if (equal_average({one}).parameters != one.parameters) bad.push_back("single");
  const Checkpoint ref = equal_average(cks);
  std::vector<Checkpoint> perm = cks;
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(perm.begin(), perm.end(), oracle::rng());
    if (equal_average(perm).parameters != ref.parameters) {
      bad.push_back("permutation");
      break;
    }
  }
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(ref.parameters.size());
  for (const auto& c : cks) mean += c.parameters;
  mean /= 5.0;
  if ((ref.parameters - mean).cwiseAbs().maxCoeff() > 1e-12) bad.push_back("mean");

  const auto grid = default_alpha_grid();
  const SoupEval quad = [&](const Checkpoint& c) { return -(c.parameters - 0.3 * cks[0].parameters - 0.7 * cks[1].parameters).squaredNorm(); };
  const auto sweep = sweep_interpolate(cks[0], cks[1], grid, quad);
  if (interpolate(cks[0], cks[1], 0.0).parameters != cks[0].parameters) bad.push_back("alpha0");
  if (interpolate(cks[0], cks[1], 1.0).parameters != cks[1].parameters) bad.push_back("alpha1");
  if (sweep.alpha != grid[7]) bad.push_back("sweep.argmax");
  const auto endpoints = sweep_interpolate(cks[0], cks[1], {0.0, 1.0}, quad);
  if (endpoints.checkpoint.parameters != cks[1].parameters) bad.push_back("sweep.endpoints");

  // Exhaustive search oracle for the greedy pair rule.
  const Eigen::VectorXd goal = Eigen::VectorXd::NullaryExpr(ref.parameters.size(), [] { return oracle::uniform(-1, 1); });
  const SoupEval score = [&](const Checkpoint& c) { return -(c.parameters - goal).norm(); };
  const auto greedy = greedy_pair_average(cks, score);
  double best = -INFINITY;
  std::pair<int, int> best_pair{-1, -1};
  for (int i = 0; i < 5; ++i) {
    for (int j = i + 1; j < 5; ++j) {
      const double s = score(equal_average({cks[i], cks[j]}));
      if (s > best) {
        best = s;
        best_pair = {i, j};
      }
    }
  }
  if (greedy.chosen != std::vector<std::size_t>{static_cast<std::size_t>(best_pair.first), static_cast<std::size_t>(best_pair.second)} ||
      greedy.score != best) {
    bad.push_back("greedy");
  }
  std::string names;
  for (const auto& b : bad) names += " " + b;
  return {bad.empty(), printf_str("sweep alpha %.1f, greedy pair (%d,%d), failures:%s", sweep.alpha, best_pair.first,
                                  best_pair.second, bad.empty() ? " none" : names.c_str())};
}

// ---------------------------------------------------------------------------
// 8. EMA / PredMix

Outcome criterion_ema_predmix() {
  long violations = 0, steps = 0;
  for (int run = 0; run < 20; ++run) {
    TeacherState t;
    t.decay = oracle::uniform(0.5, 0.999);
    t.parameters = Eigen::VectorXd::Constant(1, oracle::uniform(-5, 5));
    const double target = oracle::uniform(-5, 5);
    for (int step = 0; step < 100; ++step) {
      const Eigen::VectorXd student = Eigen::VectorXd::Constant(1, target);
      const TeacherState next = ema_update(t, student);
      const double before = std::abs(t.parameters[0] - target);
      const double after = std::abs(next.parameters[0] - target);
      // Contraction toward a fixed student, and the update stays between teacher and student.
      const double lo = std::min(t.parameters[0], target), hi = std::max(t.parameters[0], target);
      if (!(after <= before) || next.parameters[0] < lo || next.parameters[0] > hi) ++violations;
      ++steps;
      t = next;
    }
  }
  long outside_changed = 0, inside_checked = 0;
  for (int inst = 0; inst < 50; ++inst) {
    const int H = 16, W = 16;
    const ScalarField A = random_field(H, W, 0, 1);
    const ScalarField T = random_field(H, W, 0, 1);
    const PointSet seeds = random_seeds(H, W, 1 + inst % 3);
    const int radius = inst % 6;
    const auto mixed = predmix_target(stop_gradient(A), T, seeds, oracle::uniform(0.01, 1), radius);
    for (int r = 0; r < H; ++r) {
      for (int c = 0; c < W; ++c) {
        bool in = false;
        for (const auto& s : seeds) in = in || oracle::within(s, r, c, radius);
        if (!in && std::memcmp(&mixed.values(r, c), &A(r, c), sizeof(double)) != 0) ++outside_changed;
        if (in) ++inside_checked;
      }
    }
  }
  return {violations == 0 && outside_changed == 0 && inside_checked > 0,
          printf_str("%ld EMA steps, %ld bound violations; %ld pixels changed outside disks", steps, violations, outside_changed)};
}

// ---------------------------------------------------------------------------
// 9. Determinism and ledger

bool same_stats(const TrainStats& a, const TrainStats& b) {
  if (epochs_csv(a) != epochs_csv(b) || steps_csv(a) != steps_csv(b) || gate_csv(a) != gate_csv(b)) return false;
  if (a.final_parameters.size() != b.final_parameters.size()) return false;
  if (std::memcmp(a.final_parameters.data(), b.final_parameters.data(), sizeof(double) * a.final_parameters.size()) != 0) return false;
  if (a.checkpoints.size() != b.checkpoints.size()) return false;
  for (std::size_t k = 0; k < a.checkpoints.size(); ++k) {
    if (a.checkpoints[k].epoch != b.checkpoints[k].epoch || a.checkpoints[k].parameters != b.checkpoints[k].parameters) return false;
  }
  return true;
}

Outcome criterion_determinism_ledger() {
  const fs::path root = g_scratch / "ledger_ws";
  fs::remove_all(root);
  fs::create_directories(root);
  const Workspace ws{root};
  SceneSpec spec;
  spec.height = spec.width = 40;
  io::write_text(root / "spec.json", scene_spec_to_json(spec));
  const std::string manifest = ws.relative(cmd_generate(ws, "spec.json", 8, 3, "data"));
  Config cfg;
  cfg.train.epochs = 3;
  cfg.train.batch_size = 4;
  cfg.axes.asg = true;
  io::write_text(root / "base.json", config_to_json(cfg));
  Config child = cfg;
  child.train.seed = 1;
  io::write_text(root / "child.json", config_to_json(child));

  TrainOptions opt;
  opt.config = "base.json";
  opt.manifest = manifest;
  opt.root_run = true;
  opt.out_dir = "runs/a";
  opt.run_id = "a";
  const TrainOutcome first = cmd_train(ws, opt);
  opt.out_dir = "runs/b";
  opt.run_id = "b";
  const TrainOutcome second = cmd_train(ws, opt);
  const bool identical = same_stats(first.stats, second.stats) &&
                         load_checkpoint(root / "runs/a/final.ckpt").content_hash() == load_checkpoint(root / "runs/b/final.ckpt").content_hash();

  TrainOptions copt;
  copt.config = "child.json";
  copt.manifest = manifest;
  copt.parent = "a";
  copt.out_dir = "runs/c";
  copt.run_id = "c";
  cmd_train(ws, copt);
  const VerifyReport good = cmd_ledger_verify(ws);

  // Fixture: a record whose config differs from its parent in two fields.
  RunRecord forged = read_ledger(ws.ledger()).back();
  Config two = child;
  two.affinity.m_hard = 0.5;
  forged.run_id = "forged";
  forged.config = config_to_json(two);
  forged.config_hash = config_hash(two);
  forged.artifacts.clear();
  const fs::path fixture = root / "fixture_ledger.jsonl";
  io::write_text(fixture, io::read_text(ws.ledger()) + record_to_json(forged) + "\n");
  const VerifyReport bad = cmd_ledger_verify(ws, fixture);
  bool names_both = false;
  for (const auto& p : bad.problems) {
    names_both = names_both || (p.find("affinity.m_hard") != std::string::npos && p.find("train.seed") != std::string::npos);
  }
  bool rejected_on_train = false;
  try {
    io::write_text(root / "two.json", config_to_json(two));
    TrainOptions topt = copt;
    topt.config = "two.json";
    topt.run_id = "d";
    topt.out_dir = "runs/d";
    cmd_train(ws, topt);
  } catch (const LedgerRejection&) {
    rejected_on_train = true;
  }
  return {identical && good.ok && !bad.ok && names_both && rejected_on_train,
          printf_str("repeat run identical %s; ledger-verify %zu records %s; two-field fixture %s%s; cmd_train rejects %s",
                     identical ? "yes" : "no", good.records, good.ok ? "accepted" : "rejected", bad.ok ? "accepted" : "rejected",
                     names_both ? " naming both paths" : "", rejected_on_train ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int k = 1; k < argc; ++k) {
    const std::string arg = argv[k];
    if (!arg.empty() && std::all_of(arg.begin(), arg.end(), ::isdigit)) {
      only.insert(std::stoi(arg));
    } else {
      g_scratch = arg;
    }
  }
  fs::create_directories(g_scratch);
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"equation fidelity", criterion_equations},
      {"gradient audit", criterion_gradients},
      {"stop-gradient contract", criterion_stop_gradient},
      {"drift reproduction", criterion_drift},
      {"failure-map smoke tests", criterion_failure_map},
      {"metrics oracle", criterion_metrics},
      {"soup algebra", criterion_soup},
      {"EMA/PredMix", criterion_ema_predmix},
      {"determinism and ledger", criterion_determinism_ledger},
  };
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k + 1);
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::printf("%s  %d. %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", id, criteria[k].first, o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
