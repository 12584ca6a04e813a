#pragma once

#include "gsacp/affinity.hpp"
#include "gsacp/losses.hpp"

#include <string>
#include <vector>

namespace gsacp {

/// Which route a gradient contribution takes into the feature map.
enum class GradPath {
  kPrediction,  // through the logit head (the desired update)
  kAffinity,    // through the construction of A from the features
  kFeature,     // directly on normalized features (contrastive terms)
};

/// One recorded gradient contribution: which loss, which route, and the Frobenius norm of
/// its weighted feature gradient. Severed routes are recorded with norm 0.
struct TapeEntry {
  std::string loss;
  GradPath path = GradPath::kPrediction;
  double norm = 0.0;
  bool severed = false;
};

struct LossBreakdown {
  LossComponents components;
  LossWeights weights;
  double total = 0.0;
  double grad_desired_norm = 0.0;  // prediction route
  double grad_drift_norm = 0.0;    // lambda_prop * L_prop through A
  double grad_aux_norm = 0.0;      // sparsity through A plus contrastive terms
  std::vector<TapeEntry> tape;
};

inline const char* to_string(GradPath path) {
  switch (path) {
    case GradPath::kPrediction:
      return "prediction";
    case GradPath::kAffinity:
      return "affinity";
    case GradPath::kFeature:
      return "feature";
  }
  return "?";
}

/// Throws unless the consistency loss reached the features only through the prediction route.
inline void check_stop_gradient(const LossBreakdown& b) {
  for (const auto& e : b.tape) {
    if (e.loss == "cons" && e.path != GradPath::kPrediction) {
      throw ContractViolation(std::string("consistency loss recorded a gradient on the ") + to_string(e.path) +
                              " route");
    }
  }
}

struct CompositeOptions {
  LossWeights weights;
  OhemConfig ohem;
  double m_neg = 0.3;
  double m_hard = 0.7;
  bool detach_affinity = false;
  bool hard_bg_contrast = false;
  bool positive_prototype = false;
  double positive_threshold = 0.5;
};

template <typename Scalar>
struct CompositeResult {
  LossBreakdown breakdown;
  Field<Scalar> dlogits;
  FeatureMapT<Scalar> dfeat_drift;
  FeatureMapT<Scalar> dfeat_aux;
  std::vector<Pixel> mined;
};

/// Composite objective for one image given precomputed affinity. The bundle's A must equal
/// a * w for the (possibly gated) prior it carries. cons_target is the stop-gradient target the
/// prediction is pulled toward (A itself, or a teacher mix).
template <typename Scalar>
CompositeResult<Scalar> composite_loss(const FeatureMapT<Scalar>& affinity_features, const Field<Scalar>& logits,
                                       const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& head_weights,
                                       const AffinityBundleT<Scalar>& bundle, const PointSet& points,
                                       const TargetFieldT<Scalar>& cons_target, const CompositeOptions& opt) {
  opt.weights.validate();
  if (!all_finite(logits)) throw NumericalFailure("composite_loss: non-finite logits");
  const Field<Scalar> prob = sigmoid(logits);
  const LossWeights& w = opt.weights;
  CompositeResult<Scalar> out;
  LossBreakdown& b = out.breakdown;
  b.weights = w;

  const auto seed = seed_loss_logits(logits, points);
  const auto prop = propagation_loss(bundle.a, bundle.w);
  const auto bg = background_ohem_loss_logits(logits, points, opt.ohem);
  const auto sparse = sparsity_loss(bundle.A);
  const auto cons = consistency_loss(prob, cons_target);
  out.mined = bg.mined;

  // Prediction route.
  const Field<Scalar> dprob_scale = prob * (Scalar(1) - prob);
  auto head_norm = [&](const Field<Scalar>& dlogit) {
    return static_cast<double>(std::abs(head_weights.norm()) * dlogit.matrix().norm());
  };
  const Field<Scalar> dl_seed = Scalar(w.w_seed) * seed.grad;
  const Field<Scalar> dl_bg = Scalar(w.w_bg) * bg.grad;
  const Field<Scalar> dl_cons = Scalar(w.w_cons) * cons.grad * dprob_scale;
  out.dlogits = dl_seed + dl_bg + dl_cons;
  b.tape.push_back({"seed", GradPath::kPrediction, head_norm(dl_seed), false});
  b.tape.push_back({"bg", GradPath::kPrediction, head_norm(dl_bg), false});
  b.tape.push_back({"cons", GradPath::kPrediction, head_norm(dl_cons), false});
  b.grad_desired_norm = head_norm(out.dlogits);

  // Affinity route: dA/da = w, da/ds from the hard margin.
  const Field<Scalar> dads = hard_margin_derivative(bundle.s, opt.m_hard);
  out.dfeat_drift = FeatureMapT<Scalar>(affinity_features.channels(), affinity_features.height, affinity_features.width);
  out.dfeat_aux = out.dfeat_drift;
  if (opt.detach_affinity) {
    b.tape.push_back({"prop", GradPath::kAffinity, 0.0, true});
    b.tape.push_back({"sparse", GradPath::kAffinity, 0.0, true});
  } else {
    if (w.lambda_prop > 0.0) {
      const Field<Scalar> ds = Scalar(w.lambda_prop) * prop.grad * dads;
      out.dfeat_drift = seed_similarity_backward(affinity_features, points, bundle.winner, ds);
    }
    b.tape.push_back({"prop", GradPath::kAffinity, static_cast<double>(out.dfeat_drift.values.norm()), false});
    if (w.w_sparse > 0.0) {
      const Field<Scalar> ds = Scalar(w.w_sparse) * sparse.grad * bundle.w * dads;
      out.dfeat_aux = seed_similarity_backward(affinity_features, points, bundle.winner, ds);
    }
    b.tape.push_back({"sparse", GradPath::kAffinity, static_cast<double>(out.dfeat_aux.values.norm()), false});
  }
  b.grad_drift_norm = static_cast<double>(out.dfeat_drift.values.norm());

  // Direct feature route.
  LossComponents& c = b.components;
  if (opt.hard_bg_contrast || opt.positive_prototype) {
    const FeatureMapT<Scalar> z = l2_normalize_channels(affinity_features);
    FeatureMapT<Scalar> dz(z.channels(), z.height, z.width);
    auto pair_columns = [&](const std::vector<Pixel>& pixels, Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& anchors,
                            Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& others) {
      anchors.resize(z.channels(), static_cast<Eigen::Index>(pixels.size()));
      others.resize(z.channels(), static_cast<Eigen::Index>(pixels.size()));
      for (std::size_t k = 0; k < pixels.size(); ++k) {
        anchors.col(k) = z.pixel(points[bundle.winner(pixels[k].row, pixels[k].col)]);
        others.col(k) = z.pixel(pixels[k]);
      }
    };
    auto scatter = [&](const std::vector<Pixel>& pixels, const PairLoss<Scalar>& pl, Scalar weight) {
      for (std::size_t k = 0; k < pixels.size(); ++k) {
        dz.pixel(points[bundle.winner(pixels[k].row, pixels[k].col)]) += weight * pl.grad_anchor.col(k);
        dz.pixel(pixels[k]) += weight * pl.grad_other.col(k);
      }
    };
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> anchors, others;
    if (opt.hard_bg_contrast) {
      pair_columns(out.mined, anchors, others);
      const auto ctr = contrastive_hard_bg_loss<Scalar>(anchors, others, opt.m_neg);
      c.ctr = static_cast<double>(ctr.value);
      const FeatureMapT<Scalar> before = dz;
      scatter(out.mined, ctr, Scalar(w.w_ctr));
      b.tape.push_back({"ctr", GradPath::kFeature, static_cast<double>((dz.values - before.values).norm()), false});
    }
    if (opt.positive_prototype) {
      std::vector<Pixel> positives;
      for (int r = 0; r < bundle.A.rows(); ++r) {
        for (int col = 0; col < bundle.A.cols(); ++col) {
          const Pixel p{r, col};
          if (bundle.A(r, col) > opt.positive_threshold && std::find(points.begin(), points.end(), p) == points.end()) {
            positives.push_back(p);
          }
        }
      }
      pair_columns(positives, anchors, others);
      const auto pos = positive_prototype_loss<Scalar>(anchors, others);
      c.pos = static_cast<double>(pos.value);
      const FeatureMapT<Scalar> before = dz;
      scatter(positives, pos, Scalar(w.w_pos));
      b.tape.push_back({"pos", GradPath::kFeature, static_cast<double>((dz.values - before.values).norm()), false});
    }
    out.dfeat_aux.values += normalize_backward(affinity_features, dz).values;
  }
  b.grad_aux_norm = static_cast<double>(out.dfeat_aux.values.norm());

  c.seed = static_cast<double>(seed.value);
  c.prop = static_cast<double>(prop.value);
  c.bg = static_cast<double>(bg.value);
  c.sparse = static_cast<double>(sparse.value);
  c.cons = static_cast<double>(cons.value);
  b.total = weighted_total(c, w);
  return out;
}

}  // namespace gsacp
