#include "gsacp/detector.hpp"

#include <cmath>
#include <random>

namespace gsacp {
namespace {

// Softplus shifted to pass through the origin, so activations start centred.
double softplus(double x) { return (x > 30.0 ? x : std::log1p(std::exp(x))) - std::log(2.0); }

constexpr double kInputStdFloor = 1e-2;

}  // namespace

Eigen::MatrixXd im2col3x3(const Eigen::MatrixXd& x, Eigen::Index height, Eigen::Index width) {
  const Eigen::Index channels = x.rows();
  Eigen::MatrixXd cols = Eigen::MatrixXd::Zero(channels * 9, height * width);
  for (Eigen::Index c = 0; c < channels; ++c) {
    for (int k = 0; k < 9; ++k) {
      const int dr = k / 3 - 1;
      const int dc = k % 3 - 1;
      const Eigen::Index row = c * 9 + k;
      for (Eigen::Index r = 0; r < height; ++r) {
        const Eigen::Index sr = r + dr;
        if (sr < 0 || sr >= height) continue;
        for (Eigen::Index col = 0; col < width; ++col) {
          const Eigen::Index sc = col + dc;
          if (sc < 0 || sc >= width) continue;
          cols(row, r * width + col) = x(c, sr * width + sc);
        }
      }
    }
  }
  return cols;
}

Eigen::MatrixXd col2im3x3(const Eigen::MatrixXd& cols, Eigen::Index channels, Eigen::Index height, Eigen::Index width) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(channels, height * width);
  for (Eigen::Index c = 0; c < channels; ++c) {
    for (int k = 0; k < 9; ++k) {
      const int dr = k / 3 - 1;
      const int dc = k % 3 - 1;
      const Eigen::Index row = c * 9 + k;
      for (Eigen::Index r = 0; r < height; ++r) {
        const Eigen::Index sr = r + dr;
        if (sr < 0 || sr >= height) continue;
        for (Eigen::Index col = 0; col < width; ++col) {
          const Eigen::Index sc = col + dc;
          if (sc < 0 || sc >= width) continue;
          x(c, sr * width + sc) += cols(row, r * width + col);
        }
      }
    }
  }
  return x;
}

FeatureMap ForwardResult::shallow() const {
  return FeatureMap(cache.activations.front(), features.height, features.width);
}

ToyDetector::ToyDetector(const Architecture& arch, std::uint64_t seed) : arch_(arch) {
  if (arch_.widths.size() < 2) throw InvalidParameter("detector needs at least two 3x3 layers");
  if (arch_.input_channels != 1 && arch_.input_channels != 3) throw InvalidParameter("detector input must be 1 or 3 channels");
  layout();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  params_.setZero();
  int in = arch_.input_channels;
  for (std::size_t l = 0; l < arch_.widths.size(); ++l) {
    const Segment& w = segments_[2 * l];
    const bool linear = l + 1 == arch_.widths.size();
    const double stddev = std::sqrt((linear ? 1.0 : 2.0) / (9.0 * in));
    for (Eigen::Index k = 0; k < w.size; ++k) params_[w.offset + k] = stddev * normal(rng);
    in = arch_.widths[l];
  }
  const Segment& head = segments_[2 * arch_.widths.size()];
  for (Eigen::Index k = 0; k < head.size; ++k) params_[head.offset + k] = normal(rng) / std::sqrt(double(in));
  params_[segments_.back().offset] = arch_.head_bias_init;
}

void ToyDetector::layout() {
  segments_.clear();
  Eigen::Index offset = 0;
  auto add = [&](std::string name, std::vector<Eigen::Index> shape) {
    Eigen::Index size = 1;
    for (auto d : shape) size *= d;
    segments_.push_back({std::move(name), std::move(shape), offset, size});
    offset += size;
  };
  int in = arch_.input_channels;
  for (std::size_t l = 0; l < arch_.widths.size(); ++l) {
    const std::string prefix = "conv" + std::to_string(l + 1);
    add(prefix + ".weight", {arch_.widths[l], in, 3, 3});
    add(prefix + ".bias", {arch_.widths[l]});
    in = arch_.widths[l];
  }
  add("head.weight", {1, in});
  add("head.bias", {1});
  params_ = Eigen::VectorXd::Zero(offset);
}

void ToyDetector::set_parameters(const Eigen::VectorXd& params) {
  if (params.size() != params_.size()) {
    throw ShapeMismatch("detector expects " + std::to_string(params_.size()) + " parameters, got " +
                        std::to_string(params.size()));
  }
  params_ = params;
}

// Weight segments store [out][in][3][3] row-major, which is the (out x in*9) matrix in
// row-major order; a column-major map of the transpose shape reads it without copying.
Eigen::Map<const Eigen::MatrixXd> ToyDetector::weight(std::size_t layer) const {
  const Segment& s = segments_[2 * layer];
  return {params_.data() + s.offset, s.size / s.shape[0], s.shape[0]};
}

Eigen::Map<const Eigen::VectorXd> ToyDetector::bias(std::size_t layer) const {
  const Segment& s = segments_[2 * layer + 1];
  return {params_.data() + s.offset, s.size};
}

Eigen::VectorXd ToyDetector::head_weights() const {
  const Segment& s = segments_[2 * arch_.widths.size()];
  return params_.segment(s.offset, s.size);
}

ForwardResult ToyDetector::forward(const Image& img) const {
  img.validate();
  if (static_cast<int>(img.channels.size()) != arch_.input_channels) {
    throw InvalidInput("detector expects " + std::to_string(arch_.input_channels) + " input channels");
  }
  const Eigen::Index H = img.height();
  const Eigen::Index W = img.width();
  Eigen::MatrixXd x(img.channels.size(), H * W);
  for (std::size_t c = 0; c < img.channels.size(); ++c) {
    x.row(c) = Eigen::Map<const Eigen::RowVectorXd>(img.channels[c].data(), H * W);
    // Fixed per-image standardization; not a learned layer.
    const double mean = x.row(c).mean();
    const double sd = std::sqrt((x.row(c).array() - mean).square().mean());
    x.row(c) = (x.row(c).array() - mean) / std::max(sd, kInputStdFloor);
  }
  ForwardResult out;
  for (std::size_t l = 0; l < arch_.widths.size(); ++l) {
    out.cache.columns.push_back(im2col3x3(x, H, W));
    Eigen::MatrixXd pre = weight(l).transpose() * out.cache.columns.back();
    pre.colwise() += bias(l);
    const bool linear = l + 1 == arch_.widths.size();
    x = linear ? pre : Eigen::MatrixXd(pre.unaryExpr([](double v) { return softplus(v); }));
    if (!all_finite(x)) throw NumericalFailure("non-finite activations in conv" + std::to_string(l + 1));
    out.cache.preactivations.push_back(std::move(pre));
    out.cache.activations.push_back(x);
  }
  out.features = FeatureMap(x, H, W);
  const Eigen::RowVectorXd logits = head_weights().transpose() * l2_normalize_channels(out.features).values;
  out.logits = Eigen::Map<const ScalarField>(logits.data(), H, W) + params_[segments_.back().offset];
  if (!all_finite(out.logits)) throw NumericalFailure("non-finite values in head");
  return out;
}

Eigen::VectorXd ToyDetector::backward(const ForwardResult& fwd, const FeatureMap& dfeatures, const ScalarField& dlogits,
                                      const FeatureMap* dshallow) const {
  const Eigen::Index H = fwd.features.height;
  const Eigen::Index W = fwd.features.width;
  const std::size_t L = arch_.widths.size();
  if (dfeatures.values.rows() != fwd.features.channels() || dfeatures.values.cols() != H * W) {
    throw ShapeMismatch("backward: feature gradient has the wrong shape");
  }
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(params_.size());
  const Eigen::Map<const Eigen::RowVectorXd> dl(dlogits.data(), H * W);

  const Segment& hw = segments_[2 * L];
  grad.segment(hw.offset, hw.size) = l2_normalize_channels(fwd.features).values * dl.transpose();
  grad[segments_.back().offset] = dl.sum();

  const FeatureMap dz(head_weights() * dl, H, W);
  Eigen::MatrixXd dx = dfeatures.values + normalize_backward(fwd.features, dz).values;
  for (std::size_t l = L; l-- > 0;) {
    if (l == 0 && dshallow) dx += dshallow->values;
    Eigen::MatrixXd dpre = dx;
    if (l + 1 != L) {
      dpre.array() *= fwd.cache.preactivations[l].array().unaryExpr([](double v) { return sigmoid(v); });
    }
    const Segment& ws = segments_[2 * l];
    const Segment& bs = segments_[2 * l + 1];
    // Row-major (out x in*9) storage equals column-major (in*9 x out).
    Eigen::Map<Eigen::MatrixXd>(grad.data() + ws.offset, ws.size / ws.shape[0], ws.shape[0]) =
        fwd.cache.columns[l] * dpre.transpose();
    grad.segment(bs.offset, bs.size) = dpre.rowwise().sum();
    if (l > 0) {
      const Eigen::MatrixXd dcols = weight(l) * dpre;
      dx = col2im3x3(dcols, arch_.widths[l - 1], H, W);
    }
  }
  return grad;
}

}  // namespace gsacp
