#pragma once

#include "gsacp/numgrid.hpp"

#include <limits>

namespace gsacp {

using IndexField = Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class PriorMode {
  kWinnerSeed,  // w measured against the seed that won the cosine max
  kMaxProduct,  // A = max over seeds of a_p * w_p
};

struct AffinityParams {
  double m_hard = 0.7;
  double sigma_s = 4.0;
  double sigma_c = 0.15;
  PriorMode prior_mode = PriorMode::kWinnerSeed;

  void validate() const {
    if (!(m_hard >= 0.0 && m_hard < 1.0)) throw InvalidParameter("m_hard must lie in [0,1)");
    if (!(sigma_s > 0.0)) throw InvalidParameter("sigma_s must be positive");
    if (!(sigma_c > 0.0)) throw InvalidParameter("sigma_c must be positive");
  }
};

template <typename Scalar>
struct SeedSimilarity {
  Field<Scalar> s;
  IndexField winner;
};

template <typename Scalar>
struct AffinityBundleT {
  Field<Scalar> s;  // max seed cosine
  Field<Scalar> a;  // margin-sharpened
  Field<Scalar> w;  // local image prior
  Field<Scalar> A;  // propagation target
  IndexField winner;
};

using AffinityBundle = AffinityBundleT<double>;

namespace detail {

template <typename Scalar>
FeatureMapT<Scalar> normalized_with_seed_check(const FeatureMapT<Scalar>& f, const PointSet& points, Scalar eps) {
  validate_points(points, f.height, f.width);
  for (std::size_t k = 0; k < points.size(); ++k) {
    if (f.pixel(points[k]).norm() < eps) {
      throw DegenerateSeed(k, "seed " + std::to_string(k) + " at (" + std::to_string(points[k].row) + "," +
                                  std::to_string(points[k].col) + ") has a zero-norm feature vector");
    }
  }
  return l2_normalize_channels(f, eps);
}

// Pixel-to-seed cosine matrix, seeds x pixels, clamped to [-1,1] with exact self-similarity.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> seed_cosines(const FeatureMapT<Scalar>& z,
                                                                     const PointSet& points) {
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> seeds(z.channels(), static_cast<Eigen::Index>(points.size()));
  for (std::size_t k = 0; k < points.size(); ++k) seeds.col(k) = z.pixel(points[k]);
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> cos = seeds.transpose() * z.values;
  cos = cos.cwiseMax(Scalar(-1)).cwiseMin(Scalar(1));
  for (std::size_t k = 0; k < points.size(); ++k) cos(k, z.index(points[k])) = Scalar(1);
  return cos;
}

}  // namespace detail

/// s_i = max over seeds of cos(F_i, F_p); winner holds the arg max (lowest index on ties).
/// Every seed pixel is its own winner.
template <typename Scalar>
SeedSimilarity<Scalar> seed_similarity(const FeatureMapT<Scalar>& f, const PointSet& points,
                                       Scalar eps = Scalar(kNormEps)) {
  const auto z = detail::normalized_with_seed_check(f, points, eps);
  const auto cos = detail::seed_cosines(z, points);
  SeedSimilarity<Scalar> out{Field<Scalar>(f.height, f.width), IndexField(f.height, f.width)};
  for (Eigen::Index i = 0; i < cos.cols(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < cos.rows(); ++k) {
      if (cos(k, i) > cos(best, i)) best = k;
    }
    out.s.data()[i] = cos(best, i);
    out.winner.data()[i] = static_cast<int>(best);
  }
  for (std::size_t k = 0; k < points.size(); ++k) {
    out.s(points[k].row, points[k].col) = Scalar(1);
    out.winner(points[k].row, points[k].col) = static_cast<int>(k);
  }
  return out;
}

template <typename Scalar>
Field<Scalar> hard_margin_sharpen(const Field<Scalar>& s, double m_hard) {
  if (!(m_hard >= 0.0 && m_hard < 1.0)) throw InvalidParameter("hard_margin_sharpen: m_hard must lie in [0,1)");
  const Scalar m = static_cast<Scalar>(m_hard);
  return ((s - m).max(Scalar(0)) / (Scalar(1) - m)).square();
}

/// da/ds of the hard margin, zero at and below the margin.
template <typename Scalar>
Field<Scalar> hard_margin_derivative(const Field<Scalar>& s, double m_hard) {
  const Scalar m = static_cast<Scalar>(m_hard);
  return Scalar(2) * (s - m).max(Scalar(0)) / ((Scalar(1) - m) * (Scalar(1) - m));
}

template <typename Scalar>
Scalar prior_weight(const Pixel& pixel, const Pixel& seed, Scalar intensity_gap, const AffinityParams& params) {
  const Scalar d2 = static_cast<Scalar>(squared_distance(pixel, seed));
  return std::exp(-d2 / Scalar(2 * params.sigma_s * params.sigma_s)) *
         std::exp(-intensity_gap * intensity_gap / Scalar(2 * params.sigma_c * params.sigma_c));
}

/// Spatial x intensity Gaussian prior of each pixel against its winner seed.
template <typename Scalar>
Field<Scalar> local_prior(const ImageT<Scalar>& img, const PointSet& points, const IndexField& winner,
                          const AffinityParams& params) {
  params.validate();
  validate_points(points, img.height(), img.width());
  require_same_shape(winner, img.channels.front(), "local_prior winner field");
  const Field<Scalar> intensity = img.intensity();
  Field<Scalar> w(img.height(), img.width());
  for (int r = 0; r < w.rows(); ++r) {
    for (int c = 0; c < w.cols(); ++c) {
      const int k = winner(r, c);
      if (k < 0 || k >= static_cast<int>(points.size())) throw InvalidInput("local_prior: winner index out of range");
      const Pixel& p = points[k];
      w(r, c) = prior_weight<Scalar>({r, c}, p, intensity(r, c) - intensity(p.row, p.col), params);
    }
  }
  return w;
}

template <typename Scalar>
Field<Scalar> propagation_target(const Field<Scalar>& a, const Field<Scalar>& w) {
  require_same_shape(a, w, "propagation_target");
  return a * w;
}

/// Full target construction. In max-product mode the winner is re-chosen per pixel as the
/// seed maximizing a_p * w_p and s holds that seed's cosine.
template <typename Scalar>
AffinityBundleT<Scalar> build_affinity(const FeatureMapT<Scalar>& f, const ImageT<Scalar>& img,
                                       const PointSet& points, const AffinityParams& params) {
  params.validate();
  if (f.height != img.height() || f.width != img.width()) throw ShapeMismatch("features and image differ in size");
  AffinityBundleT<Scalar> out;
  if (params.prior_mode == PriorMode::kWinnerSeed) {
    auto sim = seed_similarity(f, points);
    out.s = std::move(sim.s);
    out.winner = std::move(sim.winner);
    out.a = hard_margin_sharpen(out.s, params.m_hard);
    out.w = local_prior(img, points, out.winner, params);
    out.A = propagation_target(out.a, out.w);
    return out;
  }

  const auto z = detail::normalized_with_seed_check(f, points, Scalar(kNormEps));
  const auto cos = detail::seed_cosines(z, points);
  const Field<Scalar> intensity = img.intensity();
  out.s.resize(f.height, f.width);
  out.a.resize(f.height, f.width);
  out.w.resize(f.height, f.width);
  out.A.resize(f.height, f.width);
  out.winner.resize(f.height, f.width);
  const Scalar m = static_cast<Scalar>(params.m_hard);
  for (int r = 0; r < f.height; ++r) {
    for (int c = 0; c < f.width; ++c) {
      const Eigen::Index i = static_cast<Eigen::Index>(r) * f.width + c;
      Scalar best = -std::numeric_limits<Scalar>::infinity();
      for (std::size_t k = 0; k < points.size(); ++k) {
        const Scalar s = cos(k, i);
        const Scalar a = std::pow(std::max(Scalar(0), s - m) / (Scalar(1) - m), 2);
        const Pixel& p = points[k];
        const Scalar w = prior_weight<Scalar>({r, c}, p, intensity(r, c) - intensity(p.row, p.col), params);
        if (a * w > best) {
          best = a * w;
          out.s(r, c) = s;
          out.a(r, c) = a;
          out.w(r, c) = w;
          out.winner(r, c) = static_cast<int>(k);
        }
      }
      out.A(r, c) = best;
    }
  }
  for (std::size_t k = 0; k < points.size(); ++k) {
    const Pixel& p = points[k];
    out.s(p.row, p.col) = out.a(p.row, p.col) = out.w(p.row, p.col) = out.A(p.row, p.col) = Scalar(1);
    out.winner(p.row, p.col) = static_cast<int>(k);
  }
  return out;
}

/// Backpropagates dL/ds through s_i = cos(F_i, F_winner(i)) into the raw feature map.
/// Seed pixels carry exact self-similarity and receive no gradient from their own entry.
template <typename Scalar>
FeatureMapT<Scalar> seed_similarity_backward(const FeatureMapT<Scalar>& f, const PointSet& points,
                                             const IndexField& winner, const Field<Scalar>& ds,
                                             Scalar eps = Scalar(kNormEps)) {
  const FeatureMapT<Scalar> z = l2_normalize_channels(f, eps);
  FeatureMapT<Scalar> dz(f.channels(), f.height, f.width);
  std::vector<Eigen::Index> seed_index(points.size());
  for (std::size_t k = 0; k < points.size(); ++k) seed_index[k] = f.index(points[k]);
  for (Eigen::Index i = 0; i < dz.values.cols(); ++i) {
    const Scalar g = ds.data()[i];
    if (g == Scalar(0)) continue;
    const Eigen::Index p = seed_index[winner.data()[i]];
    if (p == i) continue;
    dz.values.col(i) += g * z.values.col(p);
    dz.values.col(p) += g * z.values.col(i);
  }
  FeatureMapT<Scalar> df(f.channels(), f.height, f.width);
  for (Eigen::Index i = 0; i < df.values.cols(); ++i) {
    const Scalar n = f.values.col(i).norm();
    if (n < eps) continue;
    const auto zi = z.values.col(i);
    df.values.col(i) = (dz.values.col(i) - zi.dot(dz.values.col(i)) * zi) / n;
  }
  return df;
}

}  // namespace gsacp
