#include "gsacp/train.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

namespace gsacp {
namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::size_t nearest_seed(const PointSet& seeds, const Pixel& p) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < seeds.size(); ++k) {
    if (squared_distance(seeds[k], p) < squared_distance(seeds[best], p)) best = k;
  }
  return best;
}

void accumulate(LossBreakdown& acc, const LossBreakdown& b, double scale) {
  acc.components.seed += scale * b.components.seed;
  acc.components.prop += scale * b.components.prop;
  acc.components.bg += scale * b.components.bg;
  acc.components.sparse += scale * b.components.sparse;
  acc.components.cons += scale * b.components.cons;
  acc.components.ctr += scale * b.components.ctr;
  acc.components.pos += scale * b.components.pos;
  acc.total += scale * b.total;
  acc.grad_desired_norm += scale * b.grad_desired_norm;
  acc.grad_drift_norm += scale * b.grad_drift_norm;
  acc.grad_aux_norm += scale * b.grad_aux_norm;
  for (const auto& e : b.tape) {
    auto it = std::find_if(acc.tape.begin(), acc.tape.end(),
                           [&](const TapeEntry& x) { return x.loss == e.loss && x.path == e.path; });
    if (it == acc.tape.end()) {
      acc.tape.push_back({e.loss, e.path, scale * e.norm, e.severed});
    } else {
      it->norm += scale * e.norm;
      it->severed = it->severed && e.severed;
    }
  }
}

// Fisher-Yates on raw engine output, independent of library distribution details.
template <typename T>
void shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t k = v.size(); k > 1; --k) std::swap(v[k - 1], v[rng() % k]);
}

}  // namespace

double margin_diagnostic(const FeatureMap& f, const PointSet& seeds, const BinaryMask& gt, int n_bg, std::mt19937_64& rng,
                         int hard_radius) {
  validate_points(seeds, f.height, f.width);
  if (gt.rows() != f.height || gt.cols() != f.width) throw ShapeMismatch("margin_diagnostic: mask and features differ");
  if (n_bg < 1) throw InvalidParameter("margin_diagnostic: n_bg must be >= 1");
  const FeatureMap z = l2_normalize_channels(f);
  double fg_sum = 0.0;
  long fg_n = 0;
  std::vector<Pixel> candidates;
  for (int r = 0; r < gt.rows(); ++r) {
    for (int c = 0; c < gt.cols(); ++c) {
      const Pixel p{r, c};
      const std::size_t k = nearest_seed(seeds, p);
      if (gt(r, c)) {
        fg_sum += z.pixel(seeds[k]).dot(z.pixel(p));
        ++fg_n;
      } else if (in_disk(seeds[k], hard_radius, p)) {
        candidates.push_back(p);
      }
    }
  }
  if (fg_n == 0) throw InvalidInput("margin_diagnostic: ground truth has no foreground");
  if (candidates.empty()) throw InvalidInput("margin_diagnostic: no background pixels near the seeds");
  const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(n_bg), candidates.size());
  for (std::size_t k = 0; k < take; ++k) {
    std::swap(candidates[k], candidates[k + rng() % (candidates.size() - k)]);
  }
  double bg_sum = 0.0;
  for (std::size_t k = 0; k < take; ++k) {
    const Pixel& p = candidates[k];
    bg_sum += z.pixel(seeds[nearest_seed(seeds, p)]).dot(z.pixel(p));
  }
  return fg_sum / static_cast<double>(fg_n) - bg_sum / static_cast<double>(take);
}

std::vector<double> support_radii(const ScalarField& A, const PointSet& seeds, double level) {
  const BinaryMask m = (A >= level).cast<std::uint8_t>();
  const auto comps = connected_components(m, 8);
  std::vector<double> out;
  for (const auto& s : seeds) {
    double radius = 0.0;
    for (const auto& comp : comps) {
      if (!std::binary_search(comp.pixels.begin(), comp.pixels.end(), s)) continue;
      for (const auto& p : comp.pixels) radius = std::max(radius, std::sqrt(squared_distance(s, p)));
    }
    out.push_back(radius);
  }
  return out;
}

TargetBuild build_target(const ForwardResult& fwd, const Scene& scene, const Config& cfg) {
  TargetBuild tb;
  if (cfg.failure.shallow_fusion) {
    const FeatureMap shallow = fwd.shallow();
    Eigen::MatrixXd stacked(fwd.features.channels() + shallow.channels(), fwd.features.values.cols());
    stacked << fwd.features.values, shallow.values;
    tb.affinity_features = FeatureMap(std::move(stacked), fwd.features.height, fwd.features.width);
  } else {
    tb.affinity_features = fwd.features;
  }
  AffinityParams params = cfg.affinity;
  if (cfg.gate_active()) params.sigma_s = cfg.gate_sigma_s;
  tb.bundle = build_affinity(tb.affinity_features, scene.image, scene.points, params);
  if (cfg.gate_active()) {
    GateConfig gate = cfg.gate;
    if (cfg.failure.free_radius) gate.tau.assign(gate.radii.size(), -std::numeric_limits<double>::infinity());
    for (const auto& seed : scene.points) {
      std::vector<SupportScore> scores;
      for (int r : gate.radii) scores.push_back(support_scores(tb.bundle.A, seed, r, gate.leak_threshold));
      tb.radii.push_back(adaptive_support_gate(scores, gate));
      tb.scores.push_back(std::move(scores));
    }
    tb.bundle.w = apply_gate_to_prior(tb.bundle.w, scene.points, tb.bundle.winner, tb.radii);
    tb.bundle.A = propagation_target(tb.bundle.a, tb.bundle.w);
  }
  return tb;
}

ImagePass image_pass(const ToyDetector& student, const ToyDetector* teacher, const Scene& scene, const Config& cfg,
                     double epoch) {
  const ForwardResult fwd = student.forward(scene.image);
  TargetBuild tb = build_target(fwd, scene, cfg);
  TargetField target = stop_gradient(tb.bundle.A);
  if (teacher && (cfg.axes.ltd || cfg.failure.global_teacher)) {
    const ScalarField teacher_prob = sigmoid(teacher->forward(scene.image).logits);
    if (cfg.failure.global_teacher) {
      target = predmix_target(target, teacher_prob, scene.points, cfg.mix.alpha_max, -1);
    } else {
      target = predmix_target(target, teacher_prob, scene.points, cfg.mix.alpha_at(epoch), cfg.mix.disk_radius);
    }
  }
  CompositeOptions opt;
  opt.weights = cfg.weights_at(epoch);
  opt.ohem = cfg.ohem;
  opt.m_neg = cfg.m_neg;
  opt.m_hard = cfg.affinity.m_hard;
  opt.detach_affinity = cfg.failure.full_detach;
  opt.hard_bg_contrast = cfg.axes.hbc;
  opt.positive_prototype = cfg.failure.positive_prototype;
  opt.positive_threshold = cfg.positive_threshold;
  const Eigen::VectorXd head = student.head_weights();
  auto res = composite_loss<double>(tb.affinity_features, fwd.logits, head, tb.bundle, scene.points, target, opt);
  check_stop_gradient(res.breakdown);

  const Eigen::Index C = fwd.features.channels();
  const Eigen::MatrixXd dall = res.dfeat_drift.values + res.dfeat_aux.values;
  const FeatureMap dF(dall.topRows(C), fwd.features.height, fwd.features.width);
  ImagePass out;
  if (cfg.failure.shallow_fusion) {
    const FeatureMap dshallow(dall.bottomRows(dall.rows() - C), fwd.features.height, fwd.features.width);
    out.gradient = student.backward(fwd, dF, res.dlogits, &dshallow);
  } else {
    out.gradient = student.backward(fwd, dF, res.dlogits);
  }
  out.breakdown = std::move(res.breakdown);
  for (std::size_t k = 0; k < tb.radii.size(); ++k) out.gate.emplace_back(static_cast<int>(k), tb.radii[k]);
  out.gate_scores = std::move(tb.scores);
  return out;
}

ToyDetector make_detector(const Config& cfg, int input_channels) {
  Architecture arch;
  arch.input_channels = input_channels;
  arch.widths = cfg.train.widths;
  arch.head_bias_init = cfg.train.head_bias_init;
  return ToyDetector(arch, cfg.train.seed);
}

LossBreakdown train_step(ToyDetector& detector, OptimizerState& opt, TeacherState& teacher,
                         const std::vector<const Scene*>& batch, const Config& cfg, double epoch,
                         std::vector<std::pair<int, int>>* gate_out, std::vector<std::vector<SupportScore>>* scores_out) {
  if (batch.empty()) throw InvalidInput("train_step: empty batch");
  std::optional<ToyDetector> teacher_net;
  if (cfg.axes.ltd || cfg.failure.global_teacher) {
    teacher_net = detector;
    teacher_net->set_parameters(teacher.parameters);
  }
  const double scale = 1.0 / static_cast<double>(batch.size());
  LossBreakdown mean;
  mean.weights = cfg.weights_at(epoch);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(detector.parameter_count());
  for (const Scene* scene : batch) {
    ImagePass pass = image_pass(detector, teacher_net ? &*teacher_net : nullptr, *scene, cfg, epoch);
    grad += scale * pass.gradient;
    accumulate(mean, pass.breakdown, scale);
    if (gate_out) gate_out->insert(gate_out->end(), pass.gate.begin(), pass.gate.end());
    if (scores_out) scores_out->insert(scores_out->end(), pass.gate_scores.begin(), pass.gate_scores.end());
  }
  if (!all_finite(grad)) throw NumericalFailure("train_step: non-finite gradient");
  const double norm = grad.norm();
  if (cfg.train.grad_clip > 0.0 && norm > cfg.train.grad_clip) grad *= cfg.train.grad_clip / norm;
  if (opt.velocity.size() != grad.size()) opt.velocity = Eigen::VectorXd::Zero(grad.size());
  opt.velocity = cfg.train.momentum * opt.velocity + grad;
  if (cfg.train.lr > 0.0) detector.set_parameters(detector.parameters() - cfg.train.lr * opt.velocity);
  teacher = ema_update(teacher, detector.parameters());
  return mean;
}

std::vector<ScalarField> predict(const ToyDetector& detector, const Dataset& data, Split split) {
  std::vector<ScalarField> out;
  for (std::size_t k : data.indices(split)) out.push_back(sigmoid(detector.forward(data.scenes[k].image).logits));
  return out;
}

EpochStats evaluate_parameters(const ToyDetector& detector, const Dataset& data, const Config& cfg, int epoch) {
  std::vector<std::size_t> idx = data.indices(Split::kVal);
  if (idx.empty()) idx = data.indices(Split::kTrain);
  EpochStats es;
  es.epoch = epoch;
  std::vector<ScalarField> probs;
  std::vector<BinaryMask> gts;
  std::mt19937_64 rng(cfg.train.seed * 1000003ULL + static_cast<std::uint64_t>(epoch));
  double margin = 0.0, radius = 0.0, prop = 0.0;
  long n_seeds = 0;
  for (std::size_t k : idx) {
    const Scene& s = data.scenes[k];
    const ForwardResult fwd = detector.forward(s.image);
    probs.push_back(sigmoid(fwd.logits));
    gts.push_back(s.gt);
    margin += margin_diagnostic(fwd.features, s.points, s.gt, cfg.diagnostics.margin_samples, rng,
                                cfg.diagnostics.hard_radius);
    const TargetBuild tb = build_target(fwd, s, cfg);
    for (double r : support_radii(tb.bundle.A, s.points, cfg.diagnostics.support_level)) {
      radius += r;
      ++n_seeds;
    }
    prop += propagation_loss(tb.bundle.a, tb.bundle.w).value;
  }
  const EvalReport rep = evaluate(probs, gts, cfg.eval);
  es.miou = rep.miou;
  es.niou = rep.niou;
  es.pd = rep.pd;
  es.fa = rep.fa;
  es.area_ratio = rep.area_ratio.value_or(std::numeric_limits<double>::quiet_NaN());
  es.margin = margin / static_cast<double>(idx.size());
  es.support_radius = n_seeds ? radius / static_cast<double>(n_seeds) : 0.0;
  es.val_prop = prop / static_cast<double>(idx.size());
  return es;
}

std::vector<int> plateau_epochs(const Config& cfg) {
  std::vector<int> out;
  const int E = cfg.train.epochs;
  const int count = std::max(1, static_cast<int>(std::ceil(cfg.train.plateau_fraction * E - 1e-9)));
  for (int e = std::max(1, E - count + 1); e <= E; ++e) out.push_back(e);
  return out;
}

TrainStats run_experiment(const Config& cfg, const Dataset& data) {
  cfg.validate();
  if (data.scenes.empty()) throw InvalidInput("run_experiment: empty dataset");
  const std::vector<std::size_t> train_idx = data.indices(Split::kTrain);
  if (train_idx.empty()) throw InvalidInput("run_experiment: no training scenes");

  ToyDetector detector = make_detector(cfg, static_cast<int>(data.scenes.front().image.channels.size()));
  TeacherState teacher{detector.parameters(), cfg.train.ema_decay, 0};
  OptimizerState opt;
  TrainStats stats;
  stats.epochs.push_back(evaluate_parameters(detector, data, cfg, 0));
  const std::vector<int> plateau = plateau_epochs(cfg);

  std::mt19937_64 rng(cfg.train.seed ^ 0x9e3779b97f4a7c15ULL);
  long step = 0;
  const std::size_t B = static_cast<std::size_t>(cfg.train.batch_size);
  const std::size_t steps_per_epoch = (train_idx.size() + B - 1) / B;
  const int max_radius = cfg.gate.radii.back();
  for (int epoch = 1; epoch <= cfg.train.epochs; ++epoch) {
    std::vector<std::size_t> order = train_idx;
    shuffle(order, rng);
    LossBreakdown epoch_mean;
    long gate_total = 0, gate_max = 0;
    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      std::vector<const Scene*> batch;
      for (std::size_t k = b * B; k < std::min(order.size(), (b + 1) * B); ++k) batch.push_back(&data.scenes[order[k]]);
      const double epoch_f = (epoch - 1) + static_cast<double>(b) / static_cast<double>(steps_per_epoch);
      std::vector<std::pair<int, int>> gates;
      std::vector<std::vector<SupportScore>> scores;
      const LossBreakdown br = train_step(detector, opt, teacher, batch, cfg, epoch_f, &gates, &scores);
      stats.steps.push_back({step++, epoch_f, br});
      accumulate(epoch_mean, br, 1.0 / static_cast<double>(steps_per_epoch));
      std::size_t g = 0;
      for (const Scene* s : batch) {
        const std::size_t scene_index = static_cast<std::size_t>(s - data.scenes.data());
        for (std::size_t k = 0; k < s->points.size() && g < gates.size(); ++k, ++g) {
          stats.gate_log.push_back({epoch, scene_index, gates[g].first, gates[g].second, scores[g]});
          ++gate_total;
          if (gates[g].second == max_radius) ++gate_max;
        }
      }
    }
    EpochStats es = evaluate_parameters(detector, data, cfg, epoch);
    es.loss = epoch_mean.components;
    es.total = epoch_mean.total;
    es.grad_desired_norm = epoch_mean.grad_desired_norm;
    es.grad_drift_norm = epoch_mean.grad_drift_norm;
    es.grad_aux_norm = epoch_mean.grad_aux_norm;
    es.lambda_prop = cfg.weights_at(epoch - 1).lambda_prop;
    es.alpha = cfg.axes.ltd ? cfg.mix.alpha_at(epoch - 1) : (cfg.failure.global_teacher ? cfg.mix.alpha_max : 0.0);
    es.gate_max_fraction = gate_total ? static_cast<double>(gate_max) / static_cast<double>(gate_total) : 0.0;
    stats.epochs.push_back(es);
    if (std::find(plateau.begin(), plateau.end(), epoch) != plateau.end()) {
      stats.checkpoints.push_back({epoch, detector.parameters()});
    }
  }
  stats.final_parameters = detector.parameters();
  return stats;
}

std::string epochs_csv(const TrainStats& stats) {
  std::ostringstream out;
  out << "epoch,seed,prop,bg,sparse,cons,ctr,pos,total,grad_desired_norm,grad_drift_norm,grad_aux_norm,lambda_prop,"
         "alpha,miou,niou,pd,fa,area_ratio,margin,support_radius,val_prop,gate_max_fraction\n";
  for (const auto& e : stats.epochs) {
    out << e.epoch << ',' << num(e.loss.seed) << ',' << num(e.loss.prop) << ',' << num(e.loss.bg) << ','
        << num(e.loss.sparse) << ',' << num(e.loss.cons) << ',' << num(e.loss.ctr) << ',' << num(e.loss.pos) << ','
        << num(e.total) << ',' << num(e.grad_desired_norm) << ',' << num(e.grad_drift_norm) << ','
        << num(e.grad_aux_norm) << ',' << num(e.lambda_prop) << ',' << num(e.alpha) << ',' << num(e.miou) << ','
        << num(e.niou) << ',' << num(e.pd) << ',' << num(e.fa) << ',' << num(e.area_ratio) << ',' << num(e.margin)
        << ',' << num(e.support_radius) << ',' << num(e.val_prop) << ',' << num(e.gate_max_fraction) << '\n';
  }
  return out.str();
}

std::string steps_csv(const TrainStats& stats) {
  std::ostringstream out;
  out << "step,epoch,seed,prop,bg,sparse,cons,ctr,pos,total,grad_desired_norm,grad_drift_norm,grad_aux_norm,lambda_prop\n";
  for (const auto& s : stats.steps) {
    const auto& b = s.breakdown;
    out << s.step << ',' << num(s.epoch) << ',' << num(b.components.seed) << ',' << num(b.components.prop) << ','
        << num(b.components.bg) << ',' << num(b.components.sparse) << ',' << num(b.components.cons) << ','
        << num(b.components.ctr) << ',' << num(b.components.pos) << ',' << num(b.total) << ','
        << num(b.grad_desired_norm) << ',' << num(b.grad_drift_norm) << ',' << num(b.grad_aux_norm) << ','
        << num(b.weights.lambda_prop) << '\n';
  }
  return out.str();
}

std::string gate_csv(const TrainStats& stats) {
  std::ostringstream out;
  out << "epoch,scene,seed_index,radius,scores\n";
  for (const auto& g : stats.gate_log) {
    out << g.epoch << ',' << g.scene << ',' << g.seed_index << ',' << g.radius << ',';
    for (std::size_t k = 0; k < g.scores.size(); ++k) {
      if (k) out << ';';
      out << num(g.scores[k].quality) << ':' << num(g.scores[k].reliability);
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace gsacp
