#pragma once

// Residual terms of the positioning objective: adaptive-scale step and
// velocity motion factors, scale smoothing, coarse loop closures, UWB
// ranges and the gauge prior. Each function returns the residual and,
// optionally, the analytic Jacobians under the right-multiplicative
// perturbation convention (see manifold.hpp).
//
// The closed-form motion Jacobians are first-order: exact wherever the
// residual vanishes, descent-valid elsewhere. The loop and range Jacobians
// are exact everywhere away from their degenerate configurations.

#include <cmath>

#include <Eigen/Dense>

#include "stride/error.hpp"
#include "stride/keys.hpp"
#include "stride/manifold.hpp"

namespace stride {

/// One detected step: IMU relative rotation across the step, walking
/// direction in the pre-step pose frame (unit norm), detection time.
struct StepMeasurement {
  Rotation relative_rotation;
  Vec3 direction = Vec3(1.0, 0.0, 0.0);
  double timestamp = 0.0;
};

/// One learned-odometry velocity sample: planar world-frame velocity
/// integrated over dt seconds.
struct VelocityMeasurement {
  Eigen::Vector2d velocity = Eigen::Vector2d::Zero();
  double dt = 0.0;
  double timestamp = 0.0;
};

/// One two-way-ranging measurement bound to graph variables.
struct RangeMeasurement {
  VariableKey pose_key;
  VariableKey anchor_key;
  double distance = 0.0;
  double timestamp = 0.0;
};

/// Information weighting (inverse covariance) plus an optional Cauchy
/// robust kernel whose scale is expressed in whitened residual units.
class FactorWeight {
 public:
  enum class Kernel { kNone, kCauchy };

  FactorWeight() = default;

  explicit FactorWeight(const Eigen::MatrixXd& information) { set_information(information); }

  static FactorWeight isotropic(int dim, double info) {
    return FactorWeight(Eigen::MatrixXd(info * Eigen::MatrixXd::Identity(dim, dim)));
  }

  static FactorWeight diagonal(const Eigen::VectorXd& info) {
    return FactorWeight(Eigen::MatrixXd(info.asDiagonal()));
  }

  FactorWeight with_cauchy(double scale) const {
    FactorWeight w = *this;
    w.kernel_ = Kernel::kCauchy;
    w.cauchy_scale_ = scale;
    return w;
  }

  void set_information(const Eigen::MatrixXd& information) {
    if (information.rows() != information.cols()) {
      throw std::invalid_argument("FactorWeight: information matrix must be square");
    }
    if (!information.isApprox(information.transpose(), 1e-9)) {
      throw std::invalid_argument("FactorWeight: information matrix must be symmetric");
    }
    Eigen::LLT<Eigen::MatrixXd> llt(information);
    if (llt.info() != Eigen::Success) {
      throw std::invalid_argument("FactorWeight: information matrix must be positive definite");
    }
    information_ = information;
    sqrt_information_ = llt.matrixL().transpose();
  }

  const Eigen::MatrixXd& information() const { return information_; }
  /// Upper-triangular S with S^T S = information.
  const Eigen::MatrixXd& sqrt_information() const { return sqrt_information_; }
  Kernel kernel() const { return kernel_; }
  double cauchy_scale() const { return cauchy_scale_; }
  int dim() const { return static_cast<int>(information_.rows()); }

  Eigen::VectorXd whiten(const Eigen::VectorXd& residual) const {
    return sqrt_information_ * residual;
  }

 private:
  Eigen::MatrixXd information_ = Eigen::MatrixXd::Identity(1, 1);
  Eigen::MatrixXd sqrt_information_ = Eigen::MatrixXd::Identity(1, 1);
  Kernel kernel_ = Kernel::kNone;
  double cauchy_scale_ = 1.0;
};

/// Robust down-weighting multiplier applied on top of the information
/// matrix. Cauchy: 1 / (1 + (|r_whitened| / c)^2), in (0, 1]; plain
/// least squares: 1.
inline double apply_robust_weight(const Eigen::VectorXd& residual, const FactorWeight& w) {
  if (w.kernel() == FactorWeight::Kernel::kNone) return 1.0;
  const double n = w.whiten(residual).norm() / w.cauchy_scale();
  return 1.0 / (1.0 + n * n);
}

/// Contribution of one residual to the robustified objective. The Cauchy
/// branch is the loss whose IRLS weight is exactly apply_robust_weight().
inline double robust_cost(const Eigen::VectorXd& residual, const FactorWeight& w) {
  const double sq = w.whiten(residual).squaredNorm();
  if (w.kernel() == FactorWeight::Kernel::kNone) return sq;
  const double c2 = w.cauchy_scale() * w.cauchy_scale();
  return c2 * std::log1p(sq / c2);
}

struct MotionJacobians {
  Mat6 h_t0 = Mat6::Zero();
  Mat6 h_t1 = Mat6::Zero();
  Vec6 h_s = Vec6::Zero();
};

/// Measured relative step pose [R | s*u; 0 | 1] for the step-counting model.
inline Pose step_relative_pose(double s, const StepMeasurement& m) {
  return Pose(m.relative_rotation, s * m.direction);
}

/// Relative step pose for the velocity model: identity rotation, planar
/// translation (s*vx*dt, s*vy*dt, 0).
inline Pose velocity_relative_pose(double s, const VelocityMeasurement& m) {
  return Pose(Rotation(), Vec3(s * m.velocity.x() * m.dt, s * m.velocity.y() * m.dt, 0.0));
}

namespace detail {

inline Tangent motion_residual_impl(const Pose& t0, const Pose& t1, const Pose& step,
                                    const Vec3& translation_scale_direction,
                                    MotionJacobians* jac) {
  const Pose rel = compose(inverse(t0), t1);
  const Tangent residual = log_map(compose(inverse(step), rel));
  if (jac != nullptr) {
    jac->h_t0 = -adjoint(inverse(rel));
    jac->h_t1 = Mat6::Identity();
    jac->h_s = Vec6::Zero();
    // d(residual)/ds at zero residual: the step translation column,
    // expressed in the error frame.
    jac->h_s.tail<3>() = -(step.rotation.inverse() * translation_scale_direction);
  }
  return residual;
}

}  // namespace detail

/// residual = Log(step(s)^-1 * T0^-1 * T1). Zero iff t1 == t0 * step(s).
/// H_t0 = -Adj((T0^-1 T1)^-1), H_t1 = I. H_s is the negative walking
/// direction in the error frame (equals [0; -u] whenever the measured step
/// rotation maps u to itself, e.g. for straight steps).
inline Tangent pdr_motion_residual(const Pose& t0, const Pose& t1, double s,
                                   const StepMeasurement& m, MotionJacobians* jac = nullptr) {
  return detail::motion_residual_impl(t0, t1, step_relative_pose(s, m), m.direction, jac);
}

/// Velocity-model variant: identity step rotation, so
/// H_s = [0, 0, 0, -vx*dt, -vy*dt, 0]^T exactly.
inline Tangent ronin_motion_residual(const Pose& t0, const Pose& t1, double s,
                                     const VelocityMeasurement& m,
                                     MotionJacobians* jac = nullptr) {
  return detail::motion_residual_impl(t0, t1, velocity_relative_pose(s, m),
                                      Vec3(m.velocity.x() * m.dt, m.velocity.y() * m.dt, 0.0),
                                      jac);
}

/// residual = s_j - s_i, Jacobians (-1, +1).
inline double scale_smooth_residual(double s_i, double s_j, double* h_si = nullptr,
                                    double* h_sj = nullptr) {
  if (h_si != nullptr) *h_si = -1.0;
  if (h_sj != nullptr) *h_sj = 1.0;
  return s_j - s_i;
}

struct LoopJacobians {
  Eigen::Matrix<double, 1, 6> h_ti = Eigen::Matrix<double, 1, 6>::Zero();
  Eigen::Matrix<double, 1, 6> h_tj = Eigen::Matrix<double, 1, 6>::Zero();
  /// Set when |q| == 0 with radius == 0, where no gradient direction exists.
  bool degenerate = false;
};

/// Coarse loop closure: costless inside the trust radius, |q| - r outside,
/// with q the relative translation in pose i's frame. Jacobians are zero
/// inside the radius.
inline double coarse_loop_residual(const Pose& ti, const Pose& tj, double radius,
                                   LoopJacobians* jac = nullptr) {
  const Vec3 q = ti.rotation.inverse() * (tj.translation - ti.translation);
  const double qn = q.norm();
  if (jac != nullptr) {
    *jac = LoopJacobians();
    if (qn <= radius) {
      jac->degenerate = (qn < 1e-12 && radius == 0.0);
    } else {
      const Eigen::RowVector3d q_norm = q.transpose() / qn;
      Eigen::Matrix<double, 3, 6> leverage;
      leverage << skew(q), -Mat3::Identity();
      jac->h_ti = q_norm * leverage;
      jac->h_tj.head<3>().setZero();
      jac->h_tj.tail<3>() = q_norm * (ti.rotation.inverse() * tj.rotation).matrix();
    }
  }
  return std::max(qn - radius, 0.0);
}

struct RangeJacobians {
  Eigen::Matrix<double, 1, 6> h_pose = Eigen::Matrix<double, 1, 6>::Zero();
  Eigen::RowVector3d h_anchor = Eigen::RowVector3d::Zero();
};

/// residual = |t_u - t_a| - d. Throws DegenerateGeometryError when pose and
/// anchor coincide (direction undefined).
inline double range_residual(const Pose& tu, const Vec3& anchor, double d,
                             RangeJacobians* jac = nullptr) {
  const Vec3 delta = tu.translation - anchor;
  const double n = delta.norm();
  if (n < 1e-9) {
    throw DegenerateGeometryError("range_residual: pose and anchor coincide");
  }
  if (jac != nullptr) {
    const Eigen::RowVector3d dir = delta.transpose() / n;
    jac->h_anchor = -dir;
    jac->h_pose.head<3>().setZero();
    jac->h_pose.tail<3>() = dir * tu.rotation.matrix();
  }
  return n - d;
}

/// Gauge prior: residual = Log(anchor_pose^-1 * t), Jacobian I at zero
/// residual (first order elsewhere).
inline Tangent prior_residual(const Pose& t, const Pose& anchor_pose, Mat6* jac = nullptr) {
  if (jac != nullptr) *jac = Mat6::Identity();
  return log_map(compose(inverse(anchor_pose), t));
}

}  // namespace stride
