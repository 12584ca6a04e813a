#pragma once

#include "gsacp/numgrid.hpp"

#include <numeric>
#include <optional>
#include <string>

namespace gsacp {

inline constexpr double kProbEps = 1e-7;
inline constexpr double kPropEps = 1e-6;

/// A loss value with its gradient with respect to the field it was evaluated on.
template <typename Scalar>
struct FieldLoss {
  Scalar value = Scalar(0);
  Field<Scalar> grad;
};

/// A field carrying the stop-gradient marker. Only stop_gradient() sets the flag.
template <typename Scalar>
struct TargetFieldT {
  Field<Scalar> values;
  bool stop_gradient = false;
};

using TargetField = TargetFieldT<double>;

template <typename Scalar>
TargetFieldT<Scalar> stop_gradient(Field<Scalar> values) {
  return {std::move(values), true};
}

struct OhemConfig {
  double k_frac = 0.01;
  int exclusion_radius = 6;

  void validate() const {
    if (!(k_frac > 0.0 && k_frac <= 1.0)) throw InvalidParameter("ohem k_frac must lie in (0,1]");
    if (exclusion_radius < 0) throw InvalidParameter("ohem exclusion_radius must be >= 0");
  }
};

/// Mean over seeds of -log(prob at seed); prob clamped to [eps, 1-eps].
template <typename Scalar>
FieldLoss<Scalar> seed_loss(const Field<Scalar>& prob, const PointSet& points, Scalar eps = Scalar(kProbEps)) {
  if (points.empty()) throw InvalidInput("seed_loss: empty point set");
  validate_points(points, prob.rows(), prob.cols());
  FieldLoss<Scalar> out{Scalar(0), Field<Scalar>::Zero(prob.rows(), prob.cols())};
  const Scalar n = static_cast<Scalar>(points.size());
  for (const auto& p : points) {
    const Scalar raw = prob(p.row, p.col);
    const Scalar v = std::clamp(raw, eps, Scalar(1) - eps);
    out.value -= std::log(v) / n;
    if (raw > eps && raw < Scalar(1) - eps) out.grad(p.row, p.col) -= Scalar(1) / (v * n);
  }
  return out;
}

/// sum_i w_i (1 - a_i)^2 / (sum_i w_i + eps); gradient with respect to a.
template <typename Scalar>
FieldLoss<Scalar> propagation_loss(const Field<Scalar>& a, const Field<Scalar>& w, Scalar eps = Scalar(kPropEps)) {
  require_same_shape(a, w, "propagation_loss");
  const Scalar denom = w.sum() + eps;
  if (!(denom > Scalar(0))) throw InvalidInput("propagation_loss: prior mass plus eps must be positive");
  FieldLoss<Scalar> out;
  out.value = (w * (Scalar(1) - a).square()).sum() / denom;
  out.grad = Scalar(-2) * w * (Scalar(1) - a) / denom;
  return out;
}

template <typename Scalar>
struct OhemLoss {
  Scalar value = Scalar(0);
  Field<Scalar> grad;
  std::vector<Pixel> mined;  // N_hard, hardest first
};

inline BinaryMask exclusion_mask(Eigen::Index height, Eigen::Index width, const PointSet& seeds, int radius) {
  BinaryMask out = BinaryMask::Zero(height, width);
  for (const auto& s : seeds) {
    for (int r = std::max(0, s.row - radius); r <= std::min<int>(height - 1, s.row + radius); ++r) {
      for (int c = std::max(0, s.col - radius); c <= std::min<int>(width - 1, s.col + radius); ++c) {
        if (in_disk(s, radius, {r, c})) out(r, c) = 1;
      }
    }
  }
  return out;
}

/// Mean -log(1 - prob) over the top-K background pixels outside every seed exclusion disk,
/// K = ceil(k_frac * background count). Ties in prob resolve to the lower raster index.
template <typename Scalar>
OhemLoss<Scalar> background_ohem_loss(const Field<Scalar>& prob, const PointSet& seeds, const OhemConfig& cfg,
                                      Scalar eps = Scalar(kProbEps)) {
  cfg.validate();
  const BinaryMask excluded = exclusion_mask(prob.rows(), prob.cols(), seeds, cfg.exclusion_radius);
  std::vector<Eigen::Index> background;
  for (Eigen::Index i = 0; i < prob.size(); ++i) {
    if (!excluded.data()[i]) background.push_back(i);
  }
  if (background.empty()) throw InvalidInput("background_ohem_loss: exclusion disks cover the whole image");
  const auto k = static_cast<std::size_t>(std::ceil(cfg.k_frac * static_cast<double>(background.size()) - 1e-9));
  const std::size_t take = std::clamp<std::size_t>(k, 1, background.size());
  std::partial_sort(background.begin(), background.begin() + static_cast<std::ptrdiff_t>(take), background.end(),
                    [&](Eigen::Index x, Eigen::Index y) {
                      const Scalar px = prob.data()[x];
                      const Scalar py = prob.data()[y];
                      return px > py || (px == py && x < y);
                    });
  OhemLoss<Scalar> out{Scalar(0), Field<Scalar>::Zero(prob.rows(), prob.cols()), {}};
  const Scalar n = static_cast<Scalar>(take);
  for (std::size_t j = 0; j < take; ++j) {
    const Eigen::Index i = background[j];
    const Scalar raw = prob.data()[i];
    const Scalar v = std::clamp(Scalar(1) - raw, eps, Scalar(1) - eps);
    out.value -= std::log(v) / n;
    if (raw > eps && raw < Scalar(1) - eps) out.grad.data()[i] = Scalar(1) / (v * n);
    out.mined.push_back({static_cast<int>(i / prob.cols()), static_cast<int>(i % prob.cols())});
  }
  return out;
}

/// -log(sigmoid(z)) without overflow.
template <typename Scalar>
Scalar neg_log_sigmoid(Scalar z) {
  return z > Scalar(0) ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
}

/// seed_loss evaluated on logits. Same value as the probability form away from saturation,
/// and the gradient (p - 1) / n never vanishes.
template <typename Scalar>
FieldLoss<Scalar> seed_loss_logits(const Field<Scalar>& logits, const PointSet& points) {
  if (points.empty()) throw InvalidInput("seed_loss: empty point set");
  validate_points(points, logits.rows(), logits.cols());
  FieldLoss<Scalar> out{Scalar(0), Field<Scalar>::Zero(logits.rows(), logits.cols())};
  const Scalar n = static_cast<Scalar>(points.size());
  for (const auto& p : points) {
    const Scalar z = logits(p.row, p.col);
    out.value += neg_log_sigmoid(z) / n;
    out.grad(p.row, p.col) += (Scalar(1) / (Scalar(1) + std::exp(-z)) - Scalar(1)) / n;
  }
  return out;
}

/// background_ohem_loss evaluated on logits; mining order is the same since sigmoid is monotone.
template <typename Scalar>
OhemLoss<Scalar> background_ohem_loss_logits(const Field<Scalar>& logits, const PointSet& seeds, const OhemConfig& cfg) {
  cfg.validate();
  const BinaryMask excluded = exclusion_mask(logits.rows(), logits.cols(), seeds, cfg.exclusion_radius);
  std::vector<Eigen::Index> background;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    if (!excluded.data()[i]) background.push_back(i);
  }
  if (background.empty()) throw InvalidInput("background_ohem_loss: exclusion disks cover the whole image");
  const auto k = static_cast<std::size_t>(std::ceil(cfg.k_frac * static_cast<double>(background.size()) - 1e-9));
  const std::size_t take = std::clamp<std::size_t>(k, 1, background.size());
  std::partial_sort(background.begin(), background.begin() + static_cast<std::ptrdiff_t>(take), background.end(),
                    [&](Eigen::Index x, Eigen::Index y) {
                      const Scalar zx = logits.data()[x];
                      const Scalar zy = logits.data()[y];
                      return zx > zy || (zx == zy && x < y);
                    });
  OhemLoss<Scalar> out{Scalar(0), Field<Scalar>::Zero(logits.rows(), logits.cols()), {}};
  const Scalar n = static_cast<Scalar>(take);
  for (std::size_t j = 0; j < take; ++j) {
    const Eigen::Index i = background[j];
    const Scalar z = logits.data()[i];
    out.value += neg_log_sigmoid(-z) / n;
    out.grad.data()[i] = Scalar(1) / (Scalar(1) + std::exp(-z)) / n;
    out.mined.push_back({static_cast<int>(i / logits.cols()), static_cast<int>(i % logits.cols())});
  }
  return out;
}

/// Mean affinity mass.
template <typename Scalar>
FieldLoss<Scalar> sparsity_loss(const Field<Scalar>& A) {
  const Scalar n = static_cast<Scalar>(A.size());
  return {A.sum() / n, Field<Scalar>::Constant(A.rows(), A.cols(), Scalar(1) / n)};
}

/// MSE between prob and a stop-gradient target. Gradient flows into prob only.
template <typename Scalar>
FieldLoss<Scalar> consistency_loss(const Field<Scalar>& prob, const TargetFieldT<Scalar>& target) {
  if (!target.stop_gradient) throw ContractViolation("consistency_loss: target must carry the stop-gradient marker");
  require_same_shape(prob, target.values, "consistency_loss");
  const Scalar n = static_cast<Scalar>(prob.size());
  const Field<Scalar> diff = prob - target.values;
  return {diff.square().sum() / n, Scalar(2) * diff / n};
}

template <typename Scalar>
struct PairLoss {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Scalar value = Scalar(0);
  Matrix grad_anchor;  // per column, d/dz_p
  Matrix grad_other;   // per column, d/dz_i
  bool empty = false;
};

namespace detail {

template <typename Derived>
void require_unit_or_zero_columns(const Eigen::MatrixBase<Derived>& m, const char* what) {
  for (Eigen::Index k = 0; k < m.cols(); ++k) {
    const double n = static_cast<double>(m.col(k).norm());
    if (std::abs(n - 1.0) > 1e-6 && n > 1e-12) throw InvalidInput(std::string(what) + ": feature column not normalized");
  }
}

}  // namespace detail

/// Negative-only contrast: mean over columns of [max(0, <z_p, z_i> - m_neg)]^2, where
/// column k of anchors is the seed prototype that negative k is pushed away from.
/// Empty negative sets give 0 with empty = true.
template <typename Scalar>
PairLoss<Scalar> contrastive_hard_bg_loss(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& anchors,
                                          const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& negatives,
                                          double m_neg) {
  if (!(m_neg >= 0.0 && m_neg < 1.0)) throw InvalidParameter("contrastive_hard_bg_loss: m_neg must lie in [0,1)");
  require_same_shape(anchors, negatives, "contrastive_hard_bg_loss");
  PairLoss<Scalar> out;
  out.grad_anchor = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>::Zero(anchors.rows(), anchors.cols());
  out.grad_other = out.grad_anchor;
  if (negatives.cols() == 0) {
    out.empty = true;
    return out;
  }
  detail::require_unit_or_zero_columns(anchors, "contrastive anchor");
  detail::require_unit_or_zero_columns(negatives, "contrastive negative");
  const Scalar n = static_cast<Scalar>(negatives.cols());
  for (Eigen::Index k = 0; k < negatives.cols(); ++k) {
    const Scalar excess = anchors.col(k).dot(negatives.col(k)) - static_cast<Scalar>(m_neg);
    if (excess <= Scalar(0)) continue;
    out.value += excess * excess / n;
    out.grad_anchor.col(k) = Scalar(2) * excess / n * negatives.col(k);
    out.grad_other.col(k) = Scalar(2) * excess / n * anchors.col(k);
  }
  return out;
}

/// Single-prototype form: every negative is compared against z_p.
template <typename Scalar>
Scalar contrastive_hard_bg_loss(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& z_p,
                                const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& negatives, double m_neg) {
  if (std::abs(static_cast<double>(z_p.norm()) - 1.0) > 1e-6) throw InvalidInput("contrastive: z_p must be unit norm");
  const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> anchors = z_p.replicate(1, negatives.cols());
  return contrastive_hard_bg_loss<Scalar>(anchors, negatives, m_neg).value;
}

/// Symmetric pull used only by the positive-prototype failure configuration:
/// mean over columns of (1 - <z_p, z_i>)^2.
template <typename Scalar>
PairLoss<Scalar> positive_prototype_loss(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& anchors,
                                         const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& positives) {
  require_same_shape(anchors, positives, "positive_prototype_loss");
  PairLoss<Scalar> out;
  out.grad_anchor = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>::Zero(anchors.rows(), anchors.cols());
  out.grad_other = out.grad_anchor;
  if (positives.cols() == 0) {
    out.empty = true;
    return out;
  }
  const Scalar n = static_cast<Scalar>(positives.cols());
  for (Eigen::Index k = 0; k < positives.cols(); ++k) {
    const Scalar gap = Scalar(1) - anchors.col(k).dot(positives.col(k));
    out.value += gap * gap / n;
    out.grad_anchor.col(k) = Scalar(-2) * gap / n * positives.col(k);
    out.grad_other.col(k) = Scalar(-2) * gap / n * anchors.col(k);
  }
  return out;
}

struct LossWeights {
  double w_seed = 2.0;
  double lambda_prop = 1.0;
  double w_bg = 2.0;
  double w_sparse = 1.0;
  double w_cons = 1.0;
  double w_ctr = 0.0;
  double w_pos = 0.0;

  void validate() const {
    for (double v : {w_seed, lambda_prop, w_bg, w_sparse, w_cons, w_ctr, w_pos}) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidParameter("loss weights must be finite and >= 0");
    }
  }
};

struct LossComponents {
  double seed = 0.0;
  double prop = 0.0;
  double bg = 0.0;
  double sparse = 0.0;
  double cons = 0.0;
  double ctr = 0.0;
  double pos = 0.0;
};

inline double weighted_total(const LossComponents& c, const LossWeights& w) {
  return w.w_seed * c.seed + w.lambda_prop * c.prop + w.w_bg * c.bg + w.w_sparse * c.sparse + w.w_cons * c.cons +
         w.w_ctr * c.ctr + w.w_pos * c.pos;
}

}  // namespace gsacp
