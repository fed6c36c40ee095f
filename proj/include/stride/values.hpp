#pragma once

#include <map>

#include <Eigen/Dense>

#include "stride/error.hpp"
#include "stride/keys.hpp"
#include "stride/manifold.hpp"

namespace stride {

inline int tangent_dim(VarKind kind) {
  switch (kind) {
    case VarKind::kPose: return 6;
    case VarKind::kScale: return 1;
    case VarKind::kAnchor: return 3;
  }
  return 0;
}

/// Current estimates for all variables of a graph. Copy to take a
/// read-only snapshot; copies are independent values.
class Values {
 public:
  void insert(const VariableKey& key, const Pose& pose) {
    require_kind(key, VarKind::kPose);
    poses_.emplace(key, pose);
  }
  void insert(const VariableKey& key, double scale) {
    require_kind(key, VarKind::kScale);
    scales_.emplace(key, scale);
  }
  void insert(const VariableKey& key, const Vec3& anchor) {
    require_kind(key, VarKind::kAnchor);
    anchors_.emplace(key, anchor);
  }

  const Pose& pose(const VariableKey& key) const { return at(poses_, key); }
  double scale(const VariableKey& key) const { return at(scales_, key); }
  const Vec3& anchor(const VariableKey& key) const { return at(anchors_, key); }

  void set_pose(const VariableKey& key, const Pose& pose) { at(poses_, key) = pose; }
  void set_scale(const VariableKey& key, double s) { at(scales_, key) = s; }
  void set_anchor(const VariableKey& key, const Vec3& a) { at(anchors_, key) = a; }

  bool has(const VariableKey& key) const {
    switch (key.kind) {
      case VarKind::kPose: return poses_.count(key) > 0;
      case VarKind::kScale: return scales_.count(key) > 0;
      case VarKind::kAnchor: return anchors_.count(key) > 0;
    }
    return false;
  }

  std::size_t size() const { return poses_.size() + scales_.size() + anchors_.size(); }

  const std::map<VariableKey, Pose>& poses() const { return poses_; }
  const std::map<VariableKey, double>& scales() const { return scales_; }
  const std::map<VariableKey, Vec3>& anchors() const { return anchors_; }

  /// Right-multiplicative manifold retraction of one variable. Scales are
  /// additive and clamped to [scale_min, scale_max]; anchors additive.
  void retract(const VariableKey& key, const Eigen::VectorXd& delta, double scale_min,
               double scale_max) {
    switch (key.kind) {
      case VarKind::kPose: {
        Pose& p = at(poses_, key);
        p = compose(p, exp_map(Tangent(delta)));
        p.rotation = p.rotation.normalized();
        break;
      }
      case VarKind::kScale: {
        double& s = at(scales_, key);
        s = std::clamp(s + delta(0), scale_min, scale_max);
        break;
      }
      case VarKind::kAnchor: {
        at(anchors_, key) += Vec3(delta);
        break;
      }
    }
  }

  /// Visits every key in deterministic (kind, agent, index) order.
  template <typename F>
  void for_each_key(F&& f) const {
    for (const auto& [k, v] : poses_) f(k);
    for (const auto& [k, v] : scales_) f(k);
    for (const auto& [k, v] : anchors_) f(k);
  }

 private:
  static void require_kind(const VariableKey& key, VarKind kind) {
    if (key.kind != kind) {
      throw GraphError("Values: key " + to_string(key) + " has the wrong kind for this value");
    }
  }

  template <typename M>
  static auto& at(M& map, const VariableKey& key) {
    auto it = map.find(key);
    if (it == map.end()) {
      throw GraphError("Values: unknown variable " + to_string(key));
    }
    return it->second;
  }

  std::map<VariableKey, Pose> poses_;
  std::map<VariableKey, double> scales_;
  std::map<VariableKey, Vec3> anchors_;
};

}  // namespace stride
