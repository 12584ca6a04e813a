#pragma once

#include "gsacp/affinity.hpp"
#include "gsacp/losses.hpp"

#include <limits>
#include <numbers>

namespace gsacp {

// ---------------------------------------------------------------------------
// Local teacher decoupling

struct TeacherState {
  Eigen::VectorXd parameters;
  double decay = 0.99;
  long step_count = 0;
};

/// theta_T <- decay * theta_T + (1 - decay) * theta, elementwise.
inline TeacherState ema_update(const TeacherState& teacher, const Eigen::VectorXd& student) {
  if (teacher.parameters.size() != student.size()) {
    throw ShapeMismatch("ema_update: teacher has " + std::to_string(teacher.parameters.size()) +
                        " parameters, student has " + std::to_string(student.size()));
  }
  if (!(teacher.decay >= 0.0 && teacher.decay < 1.0)) throw InvalidParameter("ema decay must lie in [0,1)");
  TeacherState out = teacher;
  out.parameters = teacher.decay * teacher.parameters + (1.0 - teacher.decay) * student;
  ++out.step_count;
  return out;
}

struct MixSchedule {
  double alpha_max = 0.5;
  double ramp_start = 30.0;
  double ramp_end = 48.0;
  int disk_radius = 6;

  void validate() const {
    if (!(alpha_max >= 0.0 && alpha_max <= 1.0)) throw InvalidParameter("alpha_max must lie in [0,1]");
    if (!(ramp_start >= 0.0 && ramp_start < ramp_end)) throw InvalidParameter("mix ramp needs 0 <= start < end");
    if (disk_radius < 0) throw InvalidParameter("mix disk radius must be >= 0");
  }

  /// Linear ramp from 0 at ramp_start to alpha_max at ramp_end.
  double alpha_at(double epoch) const {
    if (epoch <= ramp_start) return 0.0;
    if (epoch >= ramp_end) return alpha_max;
    return alpha_max * (epoch - ramp_start) / (ramp_end - ramp_start);
  }
};

/// Inside the union of seed disks: (1 - alpha) sg[A] + alpha * teacher_prob. Outside: sg[A]
/// unchanged. A negative disk_radius mixes everywhere (global teacher).
template <typename Scalar>
TargetFieldT<Scalar> predmix_target(const TargetFieldT<Scalar>& A, const Field<Scalar>& teacher_prob,
                                    const PointSet& seeds, double alpha_t, int disk_radius) {
  if (!A.stop_gradient) throw ContractViolation("predmix_target: A must carry the stop-gradient marker");
  if (!(alpha_t >= 0.0 && alpha_t <= 1.0)) throw InvalidParameter("predmix_target: alpha_t must lie in [0,1]");
  require_same_shape(A.values, teacher_prob, "predmix_target");
  TargetFieldT<Scalar> out = A;
  if (alpha_t == 0.0) return out;
  const BinaryMask disks = disk_radius < 0 ? BinaryMask::Ones(A.values.rows(), A.values.cols())
                                           : exclusion_mask(A.values.rows(), A.values.cols(), seeds, disk_radius);
  const Scalar alpha = static_cast<Scalar>(alpha_t);
  for (Eigen::Index i = 0; i < out.values.size(); ++i) {
    if (disks.data()[i]) out.values.data()[i] = (Scalar(1) - alpha) * A.values.data()[i] + alpha * teacher_prob.data()[i];
  }
  return out;
}

struct PropDecaySchedule {
  double lambda0 = 1.0;
  double decay_start = 30.0;
  double total_epochs = 60.0;
  double floor = 0.0;

  void validate() const {
    if (!(lambda0 >= 0.0) || !(floor >= 0.0) || floor > lambda0) throw InvalidParameter("need 0 <= floor <= lambda0");
    if (!(decay_start >= 0.0 && decay_start <= total_epochs)) {
      throw InvalidParameter("decay_start must lie in [0, total_epochs]");
    }
  }
};

/// lambda0 before decay_start, then cosine from lambda0 down to floor at total_epochs.
inline double lambda_prop_at(const PropDecaySchedule& s, double epoch) {
  if (epoch < 0.0) throw InvalidParameter("lambda_prop_at: epoch must be >= 0");
  if (epoch < s.decay_start) return s.lambda0;
  const double span = s.total_epochs - s.decay_start;
  const double progress = span > 0.0 ? std::clamp((epoch - s.decay_start) / span, 0.0, 1.0) : 1.0;
  return s.floor + (s.lambda0 - s.floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

// ---------------------------------------------------------------------------
// Adaptive support gate

struct SupportScore {
  double quality = 0.0;      // Q_r
  double reliability = 0.0;  // C_r
};

/// Q_r = mean A on the radius-r disk minus mean A on the ring (r, 2r];
/// C_r = fraction of ring pixels with A below leak_threshold. An empty ring counts as
/// zero mass and full reliability.
template <typename Scalar>
SupportScore support_scores(const Field<Scalar>& A, const Pixel& seed, int r, double leak_threshold = 0.1) {
  if (r < 1) throw InvalidParameter("support_scores: radius must be >= 1");
  if (!inside(seed, A.rows(), A.cols())) throw InvalidInput("support_scores: seed outside grid");
  const int outer = 2 * r;
  double in_sum = 0.0, ring_sum = 0.0;
  long in_n = 0, ring_n = 0, ring_quiet = 0;
  for (int row = std::max(0, seed.row - outer); row <= std::min<int>(A.rows() - 1, seed.row + outer); ++row) {
    for (int col = std::max(0, seed.col - outer); col <= std::min<int>(A.cols() - 1, seed.col + outer); ++col) {
      const double d2 = squared_distance(seed, {row, col});
      const double v = static_cast<double>(A(row, col));
      if (d2 <= static_cast<double>(r) * r) {
        in_sum += v;
        ++in_n;
      } else if (d2 <= static_cast<double>(outer) * outer) {
        ring_sum += v;
        ++ring_n;
        if (v < leak_threshold) ++ring_quiet;
      }
    }
  }
  SupportScore out;
  const double ring_mean = ring_n ? ring_sum / ring_n : 0.0;
  out.quality = in_sum / in_n - ring_mean;
  out.reliability = ring_n ? static_cast<double>(ring_quiet) / ring_n : 1.0;
  return out;
}

struct GateConfig {
  std::vector<int> radii{2, 4, 6, 8, 12};
  std::vector<double> tau{0.5, 0.6, 0.7, 0.8, 0.9};
  double leak_threshold = 0.1;

  int fallback_radius() const { return radii.front(); }

  void validate() const {
    if (radii.empty() || radii.size() != tau.size()) throw InvalidParameter("gate needs one threshold per radius");
    for (std::size_t k = 0; k < radii.size(); ++k) {
      if (radii[k] < 1) throw InvalidParameter("gate radii must be >= 1");
      if (k && radii[k] <= radii[k - 1]) throw InvalidParameter("gate radii must be strictly ascending");
      if (k && tau[k] < tau[k - 1]) throw InvalidParameter("gate thresholds must be non-decreasing");
    }
  }
};

/// r* = argmax Q_r subject to C_r >= tau_r; smaller radius on ties; fallback when infeasible.
inline int adaptive_support_gate(const std::vector<SupportScore>& scores, const GateConfig& cfg) {
  cfg.validate();
  if (scores.size() != cfg.radii.size()) throw InvalidInput("adaptive_support_gate: one score per radius required");
  int best = -1;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    if (scores[k].reliability < cfg.tau[k]) continue;
    if (best < 0 || scores[k].quality > scores[best].quality) best = static_cast<int>(k);
  }
  return best < 0 ? cfg.fallback_radius() : cfg.radii[best];
}

/// Zeroes w outside the radius-r* disk of each pixel's winner seed.
template <typename Scalar>
Field<Scalar> apply_gate_to_prior(const Field<Scalar>& w, const PointSet& seeds, const IndexField& winner,
                                  const std::vector<int>& radius_per_seed) {
  require_same_shape(w, winner, "apply_gate_to_prior");
  if (radius_per_seed.size() != seeds.size()) throw InvalidInput("apply_gate_to_prior: one radius per seed required");
  Field<Scalar> out = w;
  for (int r = 0; r < w.rows(); ++r) {
    for (int c = 0; c < w.cols(); ++c) {
      const int k = winner(r, c);
      if (radius_per_seed[k] < 1) throw InvalidParameter("apply_gate_to_prior: radius must be >= 1");
      if (!in_disk(seeds[k], radius_per_seed[k], {r, c})) out(r, c) = Scalar(0);
    }
  }
  return out;
}

}  // namespace gsacp
