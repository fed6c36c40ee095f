#include "stride/manifold.hpp"

#include <gtest/gtest.h>

#include "stride/numeric_diff.hpp"
#include "test_util.hpp"

namespace stride {
namespace {

using testutil::make_rng;
using testutil::random_pose;
using testutil::random_tangent;

constexpr double kTol = 1e-9;

TEST(Manifold, ComposeIdentity) {
  const Pose c = compose(Pose::identity(), Pose::identity());
  EXPECT_LT(c.translation.norm(), kTol);
  EXPECT_LT((c.rotation.matrix() - Mat3::Identity()).norm(), kTol);
}

TEST(Manifold, ComposePureTranslations) {
  const Pose c = compose(Pose::from_translation(1, 0, 0), Pose::from_translation(0, 2, 0));
  EXPECT_LT((c.translation - Vec3(1, 2, 0)).norm(), kTol);
}

TEST(Manifold, ComposeRotationThenTranslation) {
  const Pose a(Rotation::rot_z(M_PI / 2), Vec3::Zero());
  const Pose c = compose(a, Pose::from_translation(1, 0, 0));
  EXPECT_LT((c.translation - Vec3(0, 1, 0)).norm(), kTol);
  EXPECT_LT((c.rotation.matrix() - Rotation::rot_z(M_PI / 2).matrix()).norm(), kTol);
}

TEST(Manifold, ComposeWithInverseIsIdentity) {
  auto rng = make_rng(11);
  for (int i = 0; i < 100; ++i) {
    const Pose t = random_pose(rng, 3.0, 10.0);
    const Pose e = compose(t, inverse(t));
    EXPECT_LT(e.translation.norm(), kTol);
    EXPECT_LT((e.rotation.matrix() - Mat3::Identity()).norm(), kTol);
    EXPECT_LT(t.rotation.orthonormality_error(), kTol);
    EXPECT_NEAR(t.rotation.matrix().determinant(), 1.0, kTol);
  }
}

TEST(Manifold, LogMapIdentityIsZero) {
  EXPECT_LT(log_map(Pose::identity()).norm(), kTol);
}

TEST(Manifold, LogMapPureTranslation) {
  const Tangent xi = log_map(Pose::from_translation(0.3, 0, 0));
  Tangent expected = Tangent::Zero();
  expected(3) = 0.3;
  EXPECT_LT((xi - expected).norm(), kTol);
}

TEST(Manifold, ExpMapZeroIsIdentity) {
  const Pose t = exp_map(Tangent::Zero());
  EXPECT_LT(t.translation.norm(), kTol);
  EXPECT_LT((t.rotation.matrix() - Mat3::Identity()).norm(), kTol);
}

TEST(Manifold, ExpMapPureRotation) {
  Tangent xi = Tangent::Zero();
  xi(2) = M_PI / 2;
  EXPECT_LT((exp_map(xi).rotation.matrix() - Rotation::rot_z(M_PI / 2).matrix()).norm(), kTol);
  EXPECT_LT(exp_map(xi).translation.norm(), kTol);
}

TEST(Manifold, ExpMapPureTranslation) {
  Tangent xi = Tangent::Zero();
  xi.tail<3>() = Vec3(0.4, -1.2, 2.5);
  const Pose t = exp_map(xi);
  EXPECT_LT((t.translation - Vec3(0.4, -1.2, 2.5)).norm(), kTol);
  EXPECT_LT((t.rotation.matrix() - Mat3::Identity()).norm(), kTol);
}

// Round trip: the oracle for log_map is exp_map itself.
TEST(Manifold, LogExpRoundTrip) {
  auto rng = make_rng(17);
  for (int i = 0; i < 500; ++i) {
    const Tangent xi = random_tangent(rng, 3.0, 10.0);
    const Tangent back = log_map(exp_map(xi));
    EXPECT_LT((back - xi).norm(), kTol) << "xi = " << xi.transpose();
  }
}

TEST(Manifold, ExpLogRoundTripOnPoses) {
  auto rng = make_rng(19);
  for (int i = 0; i < 200; ++i) {
    const Pose t = random_pose(rng, 3.0, 10.0);
    const Pose back = exp_map(log_map(t));
    EXPECT_LT((back.translation - t.translation).norm(), kTol);
    EXPECT_LT((back.rotation.matrix() - t.rotation.matrix()).norm(), kTol);
  }
}

TEST(Manifold, LogMapAtPiBranchReportsError) {
  const Pose t(Rotation::rot_z(M_PI), Vec3(1, 0, 0));
  EXPECT_THROW(log_map(t), LogMapBranchError);
  EXPECT_THROW(Rotation::rot_z(M_PI).log(), LogMapBranchError);
}

TEST(Manifold, AdjointIdentity) {
  EXPECT_LT((adjoint(Pose::identity()) - Mat6::Identity()).norm(), kTol);
}

TEST(Manifold, AdjointRotatesTranslationalTangent) {
  const Pose t(Rotation::rot_z(M_PI / 2), Vec3::Zero());
  Tangent xi = Tangent::Zero();
  xi(3) = 1.0;
  const Tangent mapped = adjoint(t) * xi;
  Tangent expected = Tangent::Zero();
  expected(4) = 1.0;
  EXPECT_LT((mapped - expected).norm(), kTol);
}

TEST(Manifold, AdjointOfInverseIsInverse) {
  auto rng = make_rng(23);
  for (int i = 0; i < 100; ++i) {
    const Pose a = random_pose(rng, 3.0, 10.0);
    EXPECT_LT((adjoint(a) * adjoint(inverse(a)) - Mat6::Identity()).cwiseAbs().maxCoeff(), kTol);
  }
}

TEST(Manifold, AdjointHomomorphism) {
  auto rng = make_rng(29);
  for (int i = 0; i < 100; ++i) {
    const Pose a = random_pose(rng, 3.0, 10.0);
    const Pose b = random_pose(rng, 3.0, 10.0);
    const Mat6 lhs = adjoint(compose(a, b));
    const Mat6 rhs = adjoint(a) * adjoint(b);
    EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), kTol);
  }
}

// Adjoint against its defining identity: T * Exp(xi) * T^-1 = Exp(Adj(T) xi).
TEST(Manifold, AdjointConjugationIdentity) {
  auto rng = make_rng(31);
  for (int i = 0; i < 100; ++i) {
    const Pose t = random_pose(rng, 1.5, 5.0);
    const Tangent xi = random_tangent(rng, 1.0, 2.0);
    const Pose lhs = compose(t, compose(exp_map(xi), inverse(t)));
    const Pose rhs = exp_map(Tangent(adjoint(t) * xi));
    EXPECT_LT((lhs.translation - rhs.translation).norm(), 1e-8);
    EXPECT_LT((lhs.rotation.matrix() - rhs.rotation.matrix()).norm(), 1e-8);
  }
}

TEST(NumericJacobian, ScalarSquare) {
  const auto f = [](double x) {
    Eigen::VectorXd r(1);
    r(0) = x * x;
    return r;
  };
  const Eigen::MatrixXd jac = numeric_jacobian_scalar(f, 3.0, 1e-6);
  EXPECT_NEAR(jac(0, 0), 6.0, 1e-6);
}

TEST(NumericJacobian, RightPerturbationOfLogIsIdentityAtZero) {
  auto rng = make_rng(37);
  const Pose t = random_pose(rng, 1.0, 3.0);
  const auto f = [&](const Pose& x) { return Eigen::VectorXd(log_map(compose(inverse(t), x))); };
  const Eigen::MatrixXd jac = numeric_jacobian_pose(f, t, 1e-6);
  EXPECT_LT((jac - Mat6::Identity()).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(NumericJacobian, ConstantFunctionIsZero) {
  const auto f = [](const Pose&) { return Eigen::VectorXd(Eigen::VectorXd::Constant(2, 7.0)); };
  const Eigen::MatrixXd jac = numeric_jacobian_pose(f, Pose::identity(), 1e-6);
  EXPECT_LT(jac.cwiseAbs().maxCoeff(), 1e-9);
}

TEST(NumericJacobian, AdditiveVectorPerturbation) {
  const auto f = [](const Eigen::VectorXd& x) {
    Eigen::VectorXd r(1);
    r(0) = x.squaredNorm();
    return r;
  };
  Eigen::VectorXd at(3);
  at << 1.0, -2.0, 0.5;
  const Eigen::MatrixXd jac = numeric_jacobian_vector(f, at, 1e-6);
  EXPECT_LT((jac - 2.0 * at.transpose()).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Manifold, QuaternionRoundTrip) {
  auto rng = make_rng(41);
  for (int i = 0; i < 100; ++i) {
    const Rotation r = testutil::random_rotation(rng, 3.1);
    const Eigen::Vector4d q = r.quaternion_wxyz();
    const Rotation back = Rotation::from_quaternion_wxyz(q(0), q(1), q(2), q(3));
    EXPECT_LT((back.matrix() - r.matrix()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_GE(q(0), 0.0);
  }
}

}  // namespace
}  // namespace stride
