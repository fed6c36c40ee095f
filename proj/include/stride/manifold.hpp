#pragma once

// SO(3)/SE(3) group operations, exponential/logarithm maps and adjoints.
//
// Conventions used throughout the library:
//  - tangent vectors are ordered (omega, v): rotational part first,
//    translational part last;
//  - pose variables are perturbed on the right, T -> T * exp_map(delta);
//  - all analytic factor Jacobians are taken with respect to that
//    right-multiplicative perturbation.

#include <cmath>

#include <Eigen/Dense>

#include "stride/error.hpp"

namespace stride {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

/// SE(3) tangent vector, ordered (omega_x, omega_y, omega_z, v_x, v_y, v_z).
/// Units: rad and m.
using Tangent = Vec6;

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

/// SO(3) element stored as a 3x3 orthonormal matrix with det = +1.
class Rotation {
 public:
  Rotation() : mat_(Mat3::Identity()) {}

  explicit Rotation(const Mat3& m) : mat_(m) {}

  /// Rodrigues formula. Total on R^3.
  static Rotation exp(const Vec3& omega) {
    const double theta2 = omega.squaredNorm();
    const double theta = std::sqrt(theta2);
    const Mat3 w = skew(omega);
    double a, b;
    if (theta < 1e-5) {
      a = 1.0 - theta2 / 6.0;
      b = 0.5 - theta2 / 24.0;
    } else {
      a = std::sin(theta) / theta;
      b = (1.0 - std::cos(theta)) / theta2;
    }
    return Rotation(Mat3(Mat3::Identity() + a * w + b * w * w));
  }

  static Rotation rot_z(double angle) { return exp(Vec3(0.0, 0.0, angle)); }

  static Rotation from_quaternion_wxyz(double w, double x, double y, double z) {
    Eigen::Quaterniond q(w, x, y, z);
    q.normalize();
    return Rotation(q.toRotationMatrix());
  }

  /// Principal-branch rotation vector. Throws LogMapBranchError when the
  /// rotation angle is within 1e-9 of pi, where the axis is ambiguous.
  Vec3 log() const {
    Eigen::Quaterniond q(mat_);
    if (q.w() < 0.0) q.coeffs() = -q.coeffs();
    const double s = q.vec().norm();
    const double theta = 2.0 * std::atan2(s, q.w());
    if (theta >= M_PI - 1e-9) {
      throw LogMapBranchError("log_map: rotation angle at the pi branch cut");
    }
    if (s < 1e-12) {
      return 2.0 * q.vec();  // w ~ 1 here
    }
    return (theta / s) * q.vec();
  }

  const Mat3& matrix() const { return mat_; }

  Rotation inverse() const { return Rotation(Mat3(mat_.transpose())); }

  Rotation operator*(const Rotation& other) const { return Rotation(Mat3(mat_ * other.mat_)); }

  Vec3 operator*(const Vec3& v) const { return mat_ * v; }

  /// Re-projects onto SO(3); composition chains keep the matrix orthonormal
  /// to ~1e-13 per product, call this after long accumulations.
  Rotation normalized() const {
    Eigen::Quaterniond q(mat_);
    q.normalize();
    return Rotation(q.toRotationMatrix());
  }

  Eigen::Vector4d quaternion_wxyz() const {
    Eigen::Quaterniond q(mat_);
    if (q.w() < 0.0) q.coeffs() = -q.coeffs();
    return Eigen::Vector4d(q.w(), q.x(), q.y(), q.z());
  }

  double orthonormality_error() const {
    return ((mat_.transpose() * mat_) - Mat3::Identity()).cwiseAbs().maxCoeff();
  }

 private:
  Mat3 mat_;
};

/// SE(3) element: rotation plus translation in meters.
struct Pose {
  Rotation rotation;
  Vec3 translation = Vec3::Zero();

  Pose() = default;
  Pose(const Rotation& r, const Vec3& t) : rotation(r), translation(t) {}

  static Pose identity() { return Pose(); }

  static Pose from_translation(double x, double y, double z) {
    return Pose(Rotation(), Vec3(x, y, z));
  }
};

inline Pose compose(const Pose& a, const Pose& b) {
  return Pose(a.rotation * b.rotation, a.rotation * b.translation + a.translation);
}

inline Pose inverse(const Pose& t) {
  const Rotation rinv = t.rotation.inverse();
  return Pose(rinv, -(rinv * t.translation));
}

namespace detail {

// Left Jacobian of SO(3): V such that exp_se3(omega, v) has translation V*v.
inline Mat3 so3_left_jacobian(const Vec3& omega) {
  const double theta2 = omega.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 w = skew(omega);
  double b, c;
  if (theta < 1e-5) {
    b = 0.5 - theta2 / 24.0;
    c = 1.0 / 6.0 - theta2 / 120.0;
  } else {
    b = (1.0 - std::cos(theta)) / theta2;
    c = (theta - std::sin(theta)) / (theta2 * theta);
  }
  return Mat3::Identity() + b * w + c * w * w;
}

inline Mat3 so3_left_jacobian_inverse(const Vec3& omega) {
  const double theta2 = omega.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 w = skew(omega);
  double e;
  if (theta < 1e-5) {
    e = 1.0 / 12.0 + theta2 / 720.0;
  } else {
    const double half = 0.5 * theta;
    e = (1.0 - half * std::cos(half) / std::sin(half)) / theta2;
  }
  return Mat3::Identity() - 0.5 * w + e * w * w;
}

}  // namespace detail

/// SE(3) exponential map, (omega, v) -> Pose.
inline Pose exp_map(const Tangent& xi) {
  const Vec3 omega = xi.head<3>();
  const Vec3 v = xi.tail<3>();
  return Pose(Rotation::exp(omega), detail::so3_left_jacobian(omega) * v);
}

/// SE(3) logarithm map, principal branch. Throws LogMapBranchError when the
/// rotation angle reaches pi.
inline Tangent log_map(const Pose& t) {
  Tangent xi;
  const Vec3 omega = t.rotation.log();
  xi.head<3>() = omega;
  xi.tail<3>() = detail::so3_left_jacobian_inverse(omega) * t.translation;
  return xi;
}

/// 6x6 adjoint of an SE(3) element under the (omega, v) ordering:
///   [ R       0 ]
///   [ [t]x R  R ]
inline Mat6 adjoint(const Pose& t) {
  Mat6 adj = Mat6::Zero();
  const Mat3& r = t.rotation.matrix();
  adj.topLeftCorner<3, 3>() = r;
  adj.bottomRightCorner<3, 3>() = r;
  adj.bottomLeftCorner<3, 3>() = skew(t.translation) * r;
  return adj;
}

}  // namespace stride
