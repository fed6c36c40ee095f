#pragma once

// Central finite-difference Jacobians over manifold perturbations. This is
// the oracle every analytic factor Jacobian is checked against: pose
// variables are perturbed via T * exp_map(eps * e_i) (the project-wide
// right-multiplicative convention), scalars and vectors additively.

#include <Eigen/Dense>

#include "stride/manifold.hpp"

namespace stride {

/// f: Pose -> Eigen::VectorXd. Returns the len(f) x 6 matrix of central
/// difference columns, one per tangent dimension.
template <typename F>
Eigen::MatrixXd numeric_jacobian_pose(const F& f, const Pose& at, double eps) {
  Eigen::MatrixXd jac;
  for (int i = 0; i < 6; ++i) {
    Tangent delta = Tangent::Zero();
    delta(i) = eps;
    const Eigen::VectorXd hi = f(compose(at, exp_map(delta)));
    delta(i) = -eps;
    const Eigen::VectorXd lo = f(compose(at, exp_map(delta)));
    if (jac.size() == 0) jac.resize(hi.size(), 6);
    jac.col(i) = (hi - lo) / (2.0 * eps);
  }
  return jac;
}

/// f: double -> Eigen::VectorXd. Single central-difference column.
template <typename F>
Eigen::MatrixXd numeric_jacobian_scalar(const F& f, double at, double eps) {
  const Eigen::VectorXd hi = f(at + eps);
  const Eigen::VectorXd lo = f(at - eps);
  Eigen::MatrixXd jac(hi.size(), 1);
  jac.col(0) = (hi - lo) / (2.0 * eps);
  return jac;
}

/// f: Eigen::VectorXd -> Eigen::VectorXd, additive perturbation per entry.
template <typename F>
Eigen::MatrixXd numeric_jacobian_vector(const F& f, const Eigen::VectorXd& at, double eps) {
  Eigen::MatrixXd jac;
  for (int i = 0; i < at.size(); ++i) {
    Eigen::VectorXd x = at;
    x(i) = at(i) + eps;
    const Eigen::VectorXd hi = f(x);
    x(i) = at(i) - eps;
    const Eigen::VectorXd lo = f(x);
    if (jac.size() == 0) jac.resize(hi.size(), at.size());
    jac.col(i) = (hi - lo) / (2.0 * eps);
  }
  return jac;
}

}  // namespace stride
