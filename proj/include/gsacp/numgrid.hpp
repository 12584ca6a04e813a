#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <deque>
#include <stdexcept>
#include <string>
#include <vector>

namespace gsacp {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

class InvalidParameter : public Error {
 public:
  using Error::Error;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class DegenerateSeed : public Error {
 public:
  DegenerateSeed(std::size_t seed_index, const std::string& what)
      : Error(what), seed_index_(seed_index) {}
  std::size_t seed_index() const { return seed_index_; }

 private:
  std::size_t seed_index_;
};

class NumericalFailure : public Error {
 public:
  using Error::Error;
};

class ContractViolation : public Error {
 public:
  using Error::Error;
};

inline constexpr double kNormEps = 1e-8;

/// Row-major dense field over the pixel grid. Index (row, col).
template <typename Scalar>
using Field = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using ScalarField = Field<double>;
using BinaryMask = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Pixel {
  int row = 0;
  int col = 0;
  auto operator<=>(const Pixel&) const = default;
};

using PointSet = std::vector<Pixel>;

inline bool inside(const Pixel& p, Eigen::Index height, Eigen::Index width) {
  return p.row >= 0 && p.col >= 0 && p.row < height && p.col < width;
}

inline double squared_distance(const Pixel& a, const Pixel& b) {
  const double dr = a.row - b.row;
  const double dc = a.col - b.col;
  return dr * dr + dc * dc;
}

inline bool in_disk(const Pixel& center, double radius, const Pixel& p) {
  return squared_distance(center, p) <= radius * radius;
}

/// Annotation point sets must be non-empty, in-grid and duplicate-free.
inline void validate_points(const PointSet& points, Eigen::Index height, Eigen::Index width) {
  if (points.empty()) throw InvalidInput("point set is empty");
  for (std::size_t k = 0; k < points.size(); ++k) {
    if (!inside(points[k], height, width)) {
      throw InvalidInput("point " + std::to_string(k) + " (" + std::to_string(points[k].row) + "," +
                         std::to_string(points[k].col) + ") lies outside the grid");
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (points[j] == points[k]) throw InvalidInput("duplicate point at index " + std::to_string(k));
    }
  }
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
  return x.derived().array().isFinite().all();
}

template <typename A, typename B>
void require_same_shape(const Eigen::DenseBase<A>& a, const Eigen::DenseBase<B>& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeMismatch(std::string(what) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                        std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                        std::to_string(b.cols()) + ")");
  }
}

/// Intensity image, one field per channel, values in [0,1].
template <typename Scalar>
struct ImageT {
  std::vector<Field<Scalar>> channels;

  Eigen::Index height() const { return channels.empty() ? 0 : channels.front().rows(); }
  Eigen::Index width() const { return channels.empty() ? 0 : channels.front().cols(); }

  /// Channel-mean intensity; the single field the local prior compares against.
  Field<Scalar> intensity() const {
    Field<Scalar> out = channels.front();
    for (std::size_t c = 1; c < channels.size(); ++c) out += channels[c];
    if (channels.size() > 1) out /= static_cast<Scalar>(channels.size());
    return out;
  }

  void validate() const {
    if (channels.size() != 1 && channels.size() != 3) {
      throw InvalidInput("image must have 1 or 3 channels, got " + std::to_string(channels.size()));
    }
    if (height() < 8 || width() < 8) throw InvalidInput("image must be at least 8x8");
    for (const auto& ch : channels) {
      require_same_shape(ch, channels.front(), "image channels");
      if (!all_finite(ch)) throw InvalidInput("image has non-finite values");
      if ((ch < Scalar(0)).any() || (ch > Scalar(1)).any()) throw InvalidInput("image values outside [0,1]");
    }
  }
};

using Image = ImageT<double>;

/// C feature channels over an H x W grid, stored channel-major: column k is the
/// feature vector of pixel k = row * width + col.
template <typename Scalar>
struct FeatureMapT {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  Matrix values;
  Eigen::Index height = 0;
  Eigen::Index width = 0;

  FeatureMapT() = default;
  FeatureMapT(Eigen::Index channels, Eigen::Index h, Eigen::Index w)
      : values(Matrix::Zero(channels, h * w)), height(h), width(w) {}
  FeatureMapT(Matrix v, Eigen::Index h, Eigen::Index w) : values(std::move(v)), height(h), width(w) {
    if (values.cols() != h * w) throw ShapeMismatch("feature map columns do not match grid size");
  }

  Eigen::Index channels() const { return values.rows(); }
  Eigen::Index index(const Pixel& p) const { return static_cast<Eigen::Index>(p.row) * width + p.col; }
  auto pixel(const Pixel& p) { return values.col(index(p)); }
  auto pixel(const Pixel& p) const { return values.col(index(p)); }
};

using FeatureMap = FeatureMapT<double>;

/// Unit-normalizes each pixel's channel vector; vectors with norm < eps become zero.
template <typename Scalar>
FeatureMapT<Scalar> l2_normalize_channels(const FeatureMapT<Scalar>& f, Scalar eps = Scalar(kNormEps)) {
  if (!(eps > Scalar(0))) throw InvalidParameter("l2_normalize_channels: eps must be positive");
  if (!all_finite(f.values)) throw InvalidInput("l2_normalize_channels: non-finite feature values");
  FeatureMapT<Scalar> out = f;
  for (Eigen::Index k = 0; k < out.values.cols(); ++k) {
    const Scalar n = out.values.col(k).norm();
    if (n < eps) {
      out.values.col(k).setZero();
    } else {
      out.values.col(k) /= n;
    }
  }
  return out;
}

/// Cosine similarity of every pixel's feature vector to the anchor's, in [-1,1].
/// Gradient of z = x / |x| mapped back to x; zero for columns below eps.
template <typename Scalar>
FeatureMapT<Scalar> normalize_backward(const FeatureMapT<Scalar>& f, const FeatureMapT<Scalar>& dz,
                                       Scalar eps = Scalar(kNormEps)) {
  FeatureMapT<Scalar> out(f.channels(), f.height, f.width);
  for (Eigen::Index i = 0; i < f.values.cols(); ++i) {
    const Scalar n = f.values.col(i).norm();
    if (n < eps) continue;
    const auto z = f.values.col(i) / n;
    out.values.col(i) = (dz.values.col(i) - z.dot(dz.values.col(i)) * z) / n;
  }
  return out;
}

template <typename Scalar>
Field<Scalar> cosine_field(const FeatureMapT<Scalar>& f, const Pixel& anchor, Scalar eps = Scalar(kNormEps)) {
  if (!inside(anchor, f.height, f.width)) throw InvalidInput("cosine_field: anchor outside grid");
  if (f.pixel(anchor).norm() < eps) throw DegenerateSeed(0, "cosine_field: anchor feature has zero norm");
  const FeatureMapT<Scalar> z = l2_normalize_channels(f, eps);
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> dots = z.pixel(anchor).transpose() * z.values;
  Field<Scalar> out = Eigen::Map<Field<Scalar>>(dots.data(), f.height, f.width);
  out = out.max(Scalar(-1)).min(Scalar(1));
  out(anchor.row, anchor.col) = Scalar(1);
  return out;
}

struct Component {
  std::vector<Pixel> pixels;
  int area = 0;
  double centroid_row = 0.0;
  double centroid_col = 0.0;
};

/// Connected 1-regions in raster order of their first pixel. connectivity is 4 or 8.
inline std::vector<Component> connected_components(const BinaryMask& m, int connectivity = 8) {
  if (connectivity != 4 && connectivity != 8) throw InvalidParameter("connectivity must be 4 or 8");
  if (((m != 0) && (m != 1)).any()) throw InvalidInput("mask values must be 0 or 1");
  const Eigen::Index h = m.rows();
  const Eigen::Index w = m.cols();
  Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> label =
      Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Constant(h, w, -1);
  static constexpr int kDr[8] = {-1, 1, 0, 0, -1, -1, 1, 1};
  static constexpr int kDc[8] = {0, 0, -1, 1, -1, 1, -1, 1};

  std::vector<Component> out;
  std::deque<Pixel> queue;
  for (Eigen::Index r = 0; r < h; ++r) {
    for (Eigen::Index c = 0; c < w; ++c) {
      if (m(r, c) == 0 || label(r, c) >= 0) continue;
      const int id = static_cast<int>(out.size());
      Component comp;
      label(r, c) = id;
      queue.push_back({static_cast<int>(r), static_cast<int>(c)});
      while (!queue.empty()) {
        const Pixel p = queue.front();
        queue.pop_front();
        comp.pixels.push_back(p);
        for (int k = 0; k < connectivity; ++k) {
          const Pixel q{p.row + kDr[k], p.col + kDc[k]};
          if (!inside(q, h, w) || m(q.row, q.col) == 0 || label(q.row, q.col) >= 0) continue;
          label(q.row, q.col) = id;
          queue.push_back(q);
        }
      }
      std::sort(comp.pixels.begin(), comp.pixels.end());
      comp.area = static_cast<int>(comp.pixels.size());
      for (const auto& p : comp.pixels) {
        comp.centroid_row += p.row;
        comp.centroid_col += p.col;
      }
      comp.centroid_row /= comp.area;
      comp.centroid_col /= comp.area;
      out.push_back(std::move(comp));
    }
  }
  return out;
}

inline BinaryMask threshold_mask(const ScalarField& prob, double threshold) {
  return (prob > threshold).cast<std::uint8_t>();
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

template <typename Scalar>
Field<Scalar> sigmoid(const Field<Scalar>& logits) {
  return logits.unaryExpr([](Scalar x) { return static_cast<Scalar>(sigmoid(static_cast<double>(x))); });
}

}  // namespace gsacp
