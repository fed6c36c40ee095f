#pragma once

// Shared generators and the dense normal-equations oracle used by the
// solver tests. Everything here is deliberately independent of the sparse
// solve path in stride/graph.hpp.

#include <random>

#include <Eigen/Dense>

#include "stride/graph.hpp"
#include "stride/manifold.hpp"

namespace stride::testutil {

inline std::mt19937_64 make_rng(std::uint64_t seed) { return std::mt19937_64(seed); }

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Vec3 random_vec3(std::mt19937_64& rng, double magnitude) {
  return Vec3(uniform(rng, -magnitude, magnitude), uniform(rng, -magnitude, magnitude),
              uniform(rng, -magnitude, magnitude));
}

inline Rotation random_rotation(std::mt19937_64& rng, double max_angle) {
  Vec3 axis = random_vec3(rng, 1.0);
  if (axis.norm() < 1e-9) axis = Vec3(1.0, 0.0, 0.0);
  axis.normalize();
  return Rotation::exp(uniform(rng, -max_angle, max_angle) * axis);
}

inline Pose random_pose(std::mt19937_64& rng, double max_angle, double max_translation) {
  return Pose(random_rotation(rng, max_angle), random_vec3(rng, max_translation));
}

inline Tangent random_tangent(std::mt19937_64& rng, double max_angle, double max_translation) {
  Tangent xi;
  Vec3 axis = random_vec3(rng, 1.0);
  if (axis.norm() < 1e-9) axis = Vec3(0.0, 0.0, 1.0);
  axis.normalize();
  xi.head<3>() = uniform(rng, 0.0, max_angle) * axis;
  xi.tail<3>() = random_vec3(rng, max_translation);
  return xi;
}

/// Dense whitened, robust-reweighted Gauss-Newton step for a whole graph,
/// assembled by stacking every factor into one dense Jacobian and solving
/// the normal equations with a dense factorization.
inline Eigen::VectorXd dense_gauss_newton_step(const FactorGraph& graph) {
  const auto layout = graph.variable_layout();
  int dim = 0;
  std::map<VariableKey, int> offsets;
  for (const auto& [key, off] : layout) {
    offsets[key] = off;
    dim = std::max(dim, off + tangent_dim(key.kind));
  }
  int rows = 0;
  for (const auto& f : graph.factors()) rows += f->dim();

  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(rows, dim);
  Eigen::VectorXd res = Eigen::VectorXd::Zero(rows);
  int row = 0;
  std::vector<Eigen::MatrixXd> jacobians;
  for (const auto& f : graph.factors()) {
    const Eigen::VectorXd r = f->evaluate(graph.values(), &jacobians);
    const double sw = std::sqrt(apply_robust_weight(r, f->weight()));
    res.segment(row, f->dim()) = sw * f->weight().whiten(r);
    for (std::size_t ki = 0; ki < f->keys().size(); ++ki) {
      auto it = offsets.find(f->keys()[ki]);
      if (it == offsets.end()) continue;  // constant variable
      jac.block(row, it->second, f->dim(), jacobians[ki].cols()) =
          sw * (f->weight().sqrt_information() * jacobians[ki]);
    }
    row += f->dim();
  }
  const Eigen::MatrixXd h = jac.transpose() * jac;
  const Eigen::VectorXd b = -jac.transpose() * res;
  return h.ldlt().solve(b);
}

}  // namespace stride::testutil
