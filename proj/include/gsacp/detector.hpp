#pragma once

#include "gsacp/numgrid.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace gsacp {

/// A named slice of the flat parameter vector.
struct Segment {
  std::string name;
  std::vector<Eigen::Index> shape;
  Eigen::Index offset = 0;
  Eigen::Index size = 0;
};

struct Architecture {
  int input_channels = 1;
  /// Output channels of each 3x3 layer; the last one is the feature map F and stays linear.
  std::vector<int> widths{8, 16, 16, 16};
  double head_bias_init = -2.0;
};

/// Intermediate values kept for the backward pass.
struct ForwardCache {
  std::vector<Eigen::MatrixXd> columns;     // im2col input of each layer
  std::vector<Eigen::MatrixXd> preactivations;
  std::vector<Eigen::MatrixXd> activations;  // output of each layer
};

struct ForwardResult {
  FeatureMap features;  // last 3x3 layer, C x HW
  ScalarField logits;
  ForwardCache cache;

  /// First-layer activations, used only by the shallow-fusion configuration.
  FeatureMap shallow() const;
};

/// Small fully convolutional detector on the per-image standardized input: softplus 3x3 layers, a linear 3x3 feature layer, and a
/// 1x1 logit head on the L2-normalized features. Same padding keeps H x W.
class ToyDetector {
 public:
  ToyDetector() = default;
  ToyDetector(const Architecture& arch, std::uint64_t seed);

  const Architecture& architecture() const { return arch_; }
  const std::vector<Segment>& segments() const { return segments_; }
  const Eigen::VectorXd& parameters() const { return params_; }
  void set_parameters(const Eigen::VectorXd& params);
  Eigen::Index parameter_count() const { return params_.size(); }
  int feature_channels() const { return arch_.widths.back(); }

  ForwardResult forward(const Image& img) const;

  /// Gradient of the loss with respect to every parameter, given the loss gradient on the
  /// features (beyond the head's own path), on the logits, and optionally on the
  /// first-layer activations.
  Eigen::VectorXd backward(const ForwardResult& fwd, const FeatureMap& dfeatures, const ScalarField& dlogits,
                           const FeatureMap* dshallow = nullptr) const;

  Eigen::VectorXd head_weights() const;

 private:
  void layout();
  Eigen::Map<const Eigen::MatrixXd> weight(std::size_t layer) const;
  Eigen::Map<const Eigen::VectorXd> bias(std::size_t layer) const;

  Architecture arch_;
  std::vector<Segment> segments_;
  Eigen::VectorXd params_;
};

/// Unrolls 3x3 same-padded neighborhoods: row c*9 + k holds channel c at tap k.
Eigen::MatrixXd im2col3x3(const Eigen::MatrixXd& x, Eigen::Index height, Eigen::Index width);
Eigen::MatrixXd col2im3x3(const Eigen::MatrixXd& cols, Eigen::Index channels, Eigen::Index height, Eigen::Index width);

}  // namespace gsacp
