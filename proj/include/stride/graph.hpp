#pragma once

// Factor container and sparse Levenberg-Marquardt solver. The graph owns
// pose/scale/anchor variables, builds the measurement factors appended by
// add_step/add_range/add_loop, and minimizes the weighted robustified sum
// of squared residuals over the non-constant variables.
//
// Incremental mode re-linearizes a window of recent variables per new
// measurement batch and periodically falls back to a full batch solve;
// both paths share the same fixed points.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "stride/error.hpp"
#include "stride/factors.hpp"
#include "stride/keys.hpp"
#include "stride/manifold.hpp"
#include "stride/values.hpp"

namespace stride {

/// Damped Gauss-Newton settings plus the incremental-mode windowing knobs.
struct SolverConfig {
  int max_iterations = 100;
  double lambda_init = 1e-6;
  double lambda_up = 10.0;
  double lambda_down = 0.25;
  double abs_tol = 1e-12;
  double rel_tol = 1e-9;
  int incremental_window = 10;
  int full_batch_interval = 4;

  void validate() const {
    if (max_iterations <= 0 || lambda_init <= 0.0 || lambda_up <= 1.0 || lambda_down <= 0.0 ||
        lambda_down >= 1.0 || abs_tol <= 0.0 || rel_tol <= 0.0 || rel_tol >= 1.0 ||
        incremental_window <= 0 || full_batch_interval <= 0) {
      throw std::invalid_argument("SolverConfig: all parameters must be positive, "
                                  "lambda_up > 1, lambda_down in (0,1), rel_tol in (0,1)");
    }
  }
};

struct SolveReport {
  int iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  bool converged = false;
  std::map<std::string, double> cost_by_type;
};

/// Normal equations became singular; `variables` lists the offending set.
struct RankDeficientError : std::runtime_error {
  std::vector<VariableKey> variables;
  explicit RankDeficientError(std::vector<VariableKey> vars)
      : std::runtime_error(describe(vars)), variables(std::move(vars)) {}

 private:
  static std::string describe(const std::vector<VariableKey>& vars) {
    std::string msg = "rank-deficient normal equations; under-determined:";
    for (const auto& v : vars) msg += " " + to_string(v);
    return msg;
  }
};

// ---------------------------------------------------------------------------
// Factor wrappers

class Factor {
 public:
  enum class Type { kPrior, kPdrMotion, kRoninMotion, kScaleSmooth, kLoop, kRange };

  Factor(Type type, std::vector<VariableKey> keys, FactorWeight weight)
      : type_(type), keys_(std::move(keys)), weight_(std::move(weight)) {}
  virtual ~Factor() = default;

  Type type() const { return type_; }
  const char* type_name() const {
    switch (type_) {
      case Type::kPrior: return "prior";
      case Type::kPdrMotion: return "pdr_motion";
      case Type::kRoninMotion: return "ronin_motion";
      case Type::kScaleSmooth: return "scale_smooth";
      case Type::kLoop: return "loop";
      case Type::kRange: return "range";
    }
    return "?";
  }

  const std::vector<VariableKey>& keys() const { return keys_; }
  const FactorWeight& weight() const { return weight_; }
  int dim() const { return weight_.dim(); }

  /// Residual at `values`; when `jacobians` is non-null it receives one
  /// dim x tangent_dim(key) matrix per key, in key order.
  virtual Eigen::VectorXd evaluate(const Values& values,
                                   std::vector<Eigen::MatrixXd>* jacobians) const = 0;

 private:
  Type type_;
  std::vector<VariableKey> keys_;
  FactorWeight weight_;
};

class PriorFactor final : public Factor {
 public:
  PriorFactor(const VariableKey& key, const Pose& anchor_pose, FactorWeight weight)
      : Factor(Type::kPrior, {key}, std::move(weight)), anchor_pose_(anchor_pose) {}

  Eigen::VectorXd evaluate(const Values& values,
                           std::vector<Eigen::MatrixXd>* jacobians) const override {
    Mat6 jac;
    const Tangent r = prior_residual(values.pose(keys()[0]), anchor_pose_,
                                     jacobians != nullptr ? &jac : nullptr);
    if (jacobians != nullptr) *jacobians = {jac};
    return r;
  }

  const Pose& anchor_pose() const { return anchor_pose_; }

 private:
  Pose anchor_pose_;
};

class PdrMotionFactor final : public Factor {
 public:
  PdrMotionFactor(const VariableKey& pose0, const VariableKey& pose1, const VariableKey& scale,
                  StepMeasurement m, FactorWeight weight)
      : Factor(Type::kPdrMotion, {pose0, pose1, scale}, std::move(weight)), m_(std::move(m)) {}

  Eigen::VectorXd evaluate(const Values& values,
                           std::vector<Eigen::MatrixXd>* jacobians) const override {
    MotionJacobians jac;
    const Tangent r =
        pdr_motion_residual(values.pose(keys()[0]), values.pose(keys()[1]),
                            values.scale(keys()[2]), m_, jacobians != nullptr ? &jac : nullptr);
    if (jacobians != nullptr) *jacobians = {jac.h_t0, jac.h_t1, jac.h_s};
    return r;
  }

  const StepMeasurement& measurement() const { return m_; }

 private:
  StepMeasurement m_;
};

class RoninMotionFactor final : public Factor {
 public:
  RoninMotionFactor(const VariableKey& pose0, const VariableKey& pose1, const VariableKey& scale,
                    VelocityMeasurement m, FactorWeight weight)
      : Factor(Type::kRoninMotion, {pose0, pose1, scale}, std::move(weight)), m_(m) {}

  Eigen::VectorXd evaluate(const Values& values,
                           std::vector<Eigen::MatrixXd>* jacobians) const override {
    MotionJacobians jac;
    const Tangent r =
        ronin_motion_residual(values.pose(keys()[0]), values.pose(keys()[1]),
                              values.scale(keys()[2]), m_, jacobians != nullptr ? &jac : nullptr);
    if (jacobians != nullptr) *jacobians = {jac.h_t0, jac.h_t1, jac.h_s};
    return r;
  }

  const VelocityMeasurement& measurement() const { return m_; }

 private:
  VelocityMeasurement m_;
};

class ScaleSmoothFactor final : public Factor {
 public:
  ScaleSmoothFactor(const VariableKey& si, const VariableKey& sj, FactorWeight weight)
      : Factor(Type::kScaleSmooth, {si, sj}, std::move(weight)) {}

  Eigen::VectorXd evaluate(const Values& values,
                           std::vector<Eigen::MatrixXd>* jacobians) const override {
    double h_si = 0.0, h_sj = 0.0;
    Eigen::VectorXd r(1);
    r(0) = scale_smooth_residual(values.scale(keys()[0]), values.scale(keys()[1]), &h_si, &h_sj);
    if (jacobians != nullptr) {
      jacobians->assign(2, Eigen::MatrixXd(1, 1));
      (*jacobians)[0](0, 0) = h_si;
      (*jacobians)[1](0, 0) = h_sj;
    }
    return r;
  }
};

class CoarseLoopFactor final : public Factor {
 public:
  CoarseLoopFactor(const VariableKey& pose_i, const VariableKey& pose_j, double radius,
                   FactorWeight weight)
      : Factor(Type::kLoop, {pose_i, pose_j}, std::move(weight)), radius_(radius) {}

  Eigen::VectorXd evaluate(const Values& values,
                           std::vector<Eigen::MatrixXd>* jacobians) const override {
    LoopJacobians jac;
    Eigen::VectorXd r(1);
    r(0) = coarse_loop_residual(values.pose(keys()[0]), values.pose(keys()[1]), radius_,
                                jacobians != nullptr ? &jac : nullptr);
    if (jacobians != nullptr) *jacobians = {jac.h_ti, jac.h_tj};
    return r;
  }

  double radius() const { return radius_; }

 private:
  double radius_;
};

class RangeFactor final : public Factor {
 public:
  RangeFactor(const VariableKey& pose, const VariableKey& anchor, double distance,
              FactorWeight weight)
      : Factor(Type::kRange, {pose, anchor}, std::move(weight)), distance_(distance) {}

  Eigen::VectorXd evaluate(const Values& values,
                           std::vector<Eigen::MatrixXd>* jacobians) const override {
    RangeJacobians jac;
    Eigen::VectorXd r(1);
    r(0) = range_residual(values.pose(keys()[0]), values.anchor(keys()[1]), distance_,
                          jacobians != nullptr ? &jac : nullptr);
    if (jacobians != nullptr) *jacobians = {jac.h_pose, jac.h_anchor};
    return r;
  }

  double distance() const { return distance_; }

 private:
  double distance_;
};

// ---------------------------------------------------------------------------
// Graph

/// Per-factor weights and variable-management policy of a graph.
struct GraphOptions {
  FactorWeight motion_weight =
      FactorWeight::diagonal((Eigen::VectorXd(6) << 50, 50, 50, 25, 25, 25).finished());
  FactorWeight scale_smooth_weight = FactorWeight::isotropic(1, 400.0);
  FactorWeight range_weight = FactorWeight::isotropic(1, 100.0).with_cauchy(1.0);
  FactorWeight prior_weight = FactorWeight::isotropic(6, 1e6);
  FactorWeight default_loop_weight = FactorWeight::isotropic(1, 4.0);

  double initial_scale = 1.0;
  bool adaptive_scale = true;
  double scale_min = 0.2;
  double scale_max = 3.0;

  /// Anchor initialization: when absent from `anchor_init_overrides`, a new
  /// anchor starts at the observing pose offset by the measured distance
  /// along the pose heading; a second range from >= `anchor_refine_baseline`
  /// away arriving before the first solve refines it to the two-circle
  /// intersection nearest the trajectory centroid.
  std::map<std::int64_t, Vec3> anchor_init_overrides;
  bool fix_anchors = false;
  double anchor_refine_baseline = 0.5;
};

class FactorGraph {
 public:
  explicit FactorGraph(GraphOptions options = {}) : options_(std::move(options)) {}

  const GraphOptions& options() const { return options_; }
  const Values& values() const { return values_; }
  Values& mutable_values() { return values_; }
  const std::vector<std::unique_ptr<Factor>>& factors() const { return factors_; }
  std::size_t num_factors() const { return factors_.size(); }

  bool is_constant(const VariableKey& key) const { return constants_.count(key) > 0; }
  void set_constant(const VariableKey& key, bool constant = true) {
    if (!values_.has(key)) throw GraphError("set_constant: unknown variable " + to_string(key));
    if (constant) {
      constants_.insert(key);
    } else {
      constants_.erase(key);
    }
  }

  /// Appends a step for `agent`: creates the next pose (dead-reckoned from
  /// the previous estimate at the current scale) and the step's scale
  /// variable, plus the motion factor and, from the second step on, the
  /// scale smoothing factor. The agent's first step also pins pose 0 to the
  /// origin with a prior. Returns the new pose key.
  VariableKey add_step(std::int32_t agent, const StepMeasurement& m) {
    if (std::abs(m.direction.norm() - 1.0) > 1e-9) {
      throw GraphError("add_step: walking direction must be a unit vector");
    }
    return add_step_impl(agent, m.timestamp, step_relative_pose(current_scale(agent), m),
                         [&](const VariableKey& p0, const VariableKey& p1,
                             const VariableKey& s) -> std::unique_ptr<Factor> {
                           return std::make_unique<PdrMotionFactor>(p0, p1, s, m,
                                                                    options_.motion_weight);
                         });
  }

  VariableKey add_step(std::int32_t agent, const VelocityMeasurement& m) {
    if (m.dt <= 0.0) throw GraphError("add_step: velocity interval dt must be positive");
    return add_step_impl(agent, m.timestamp, velocity_relative_pose(current_scale(agent), m),
                         [&](const VariableKey& p0, const VariableKey& p1,
                             const VariableKey& s) -> std::unique_ptr<Factor> {
                           return std::make_unique<RoninMotionFactor>(p0, p1, s, m,
                                                                      options_.motion_weight);
                         });
  }

  /// Appends a range factor; the anchor variable is created on first
  /// observation (see GraphOptions for the initialization policy).
  void add_range(const VariableKey& pose_key, std::int64_t anchor_id, double distance) {
    if (distance < 0.0) throw GraphError("add_range: negative distance");
    if (pose_key.kind != VarKind::kPose || !values_.has(pose_key)) {
      throw GraphError("add_range: unknown pose " + to_string(pose_key));
    }
    const VariableKey anchor_key = VariableKey::anchor(anchor_id);
    if (!values_.has(anchor_key)) {
      values_.insert(anchor_key, initial_anchor_position(pose_key, anchor_id, distance));
      if (options_.fix_anchors) constants_.insert(anchor_key);
      if (options_.anchor_init_overrides.count(anchor_id) == 0) {
        pending_anchor_obs_.emplace(anchor_id, std::make_pair(pose_key, distance));
      }
    } else {
      maybe_refine_anchor(anchor_key, pose_key, distance);
    }
    add_factor(std::make_unique<RangeFactor>(pose_key, anchor_key, distance,
                                             options_.range_weight));
  }

  /// Appends a coarse loop closure between two existing poses (possibly of
  /// different agents). radius == 0 degrades to a proximity constraint.
  void add_loop(const VariableKey& key_i, const VariableKey& key_j, double radius,
                const FactorWeight& weight) {
    if (key_i == key_j) throw GraphError("add_loop: self loop rejected");
    for (const VariableKey& k : {key_i, key_j}) {
      if (k.kind != VarKind::kPose || !values_.has(k)) {
        throw GraphError("add_loop: unknown pose " + to_string(k));
      }
    }
    add_factor(std::make_unique<CoarseLoopFactor>(key_i, key_j, radius, weight));
  }

  void add_loop(const VariableKey& key_i, const VariableKey& key_j, double radius) {
    add_loop(key_i, key_j, radius, options_.default_loop_weight);
  }

  /// Adds an explicit prior (gauge or otherwise).
  void add_prior(const VariableKey& pose_key, const Pose& anchor_pose) {
    if (pose_key.kind != VarKind::kPose || !values_.has(pose_key)) {
      throw GraphError("add_prior: unknown pose " + to_string(pose_key));
    }
    add_factor(std::make_unique<PriorFactor>(pose_key, anchor_pose, options_.prior_weight));
  }

  std::int64_t num_steps(std::int32_t agent) const {
    auto it = agents_.find(agent);
    return it == agents_.end() ? 0 : it->second.num_steps;
  }

  double current_scale(std::int32_t agent) const {
    auto it = agents_.find(agent);
    if (it == agents_.end() || it->second.num_steps == 0) return options_.initial_scale;
    return values_.scale(VariableKey::scale(agent, it->second.num_steps - 1));
  }

  /// Total robustified cost plus the per-factor-type breakdown.
  double total_cost(std::map<std::string, double>* by_type = nullptr) const {
    return cost_over(all_factor_indices(), by_type);
  }

  /// One undamped Gauss-Newton step over all non-constant variables, in
  /// the column order of variable_layout(). Throws RankDeficientError when
  /// the normal equations are singular.
  Eigen::VectorXd gauss_newton_step() const {
    const Layout layout = make_layout(active_keys_all());
    Eigen::SparseMatrix<double> h;
    Eigen::VectorXd b;
    assemble(layout, all_factor_indices(), &h, &b);
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(h);
    if (ldlt.info() != Eigen::Success) {
      throw RankDeficientError(deficient_variables(layout, h));
    }
    const double dmax = layout.dim > 0 ? ldlt.vectorD().cwiseAbs().maxCoeff() : 0.0;
    if ((ldlt.vectorD().array().abs() < 1e-12 * std::max(dmax, 1.0)).any()) {
      throw RankDeficientError(deficient_variables(layout, h));
    }
    Eigen::VectorXd delta = ldlt.solve(b);
    if (!delta.allFinite()) {
      throw RankDeficientError(deficient_variables(layout, h));
    }
    return delta;
  }

  /// Column layout used by gauss_newton_step: (key, offset) pairs in
  /// deterministic key order, constants excluded.
  std::vector<std::pair<VariableKey, int>> variable_layout() const {
    const Layout layout = make_layout(active_keys_all());
    std::vector<std::pair<VariableKey, int>> out;
    out.reserve(layout.order.size());
    for (const auto& key : layout.order) out.emplace_back(key, layout.offsets.at(key));
    return out;
  }

  /// Full batch Levenberg-Marquardt solve.
  SolveReport solve(const SolverConfig& config) {
    config.validate();
    require_gauge();
    SolveReport report = optimize(active_keys_all(), all_factor_indices(), config);
    mark_solved();
    return report;
  }

  /// Optimizes the variables touched by factors appended since the last
  /// solve, expanded by `config.incremental_window` pose ordinals and the
  /// scale/anchor variables their factors touch. Every
  /// `config.full_batch_interval`-th batch also runs a full batch solve.
  SolveReport solve_incremental(const SolverConfig& config) {
    config.validate();
    require_gauge();
    if (pending_factor_start_ == factors_.size()) {
      return SolveReport{};  // empty batch: no-op
    }
    const std::set<VariableKey> active = incremental_active_set(config.incremental_window);
    std::vector<std::size_t> involved;
    for (std::size_t i = 0; i < factors_.size(); ++i) {
      for (const auto& k : factors_[i]->keys()) {
        if (active.count(k) > 0) {
          involved.push_back(i);
          break;
        }
      }
    }
    SolveReport report = optimize(active, involved, config);
    mark_solved();
    ++incremental_batches_;
    if (incremental_batches_ % config.full_batch_interval == 0) {
      const SolveReport full = optimize(active_keys_all(), all_factor_indices(), config);
      report.iterations += full.iterations;
      report.final_cost = full.final_cost;
      report.converged = full.converged;
      report.cost_by_type = full.cost_by_type;
    }
    return report;
  }

 private:
  struct AgentState {
    std::int64_t num_steps = 0;
    double last_timestamp = -std::numeric_limits<double>::infinity();
  };

  struct Layout {
    std::vector<VariableKey> order;
    std::map<VariableKey, int> offsets;
    int dim = 0;
  };

  template <typename MakeFactor>
  VariableKey add_step_impl(std::int32_t agent, double timestamp, const Pose& step_pose,
                            const MakeFactor& make_factor) {
    AgentState& state = agents_[agent];
    if (timestamp <= state.last_timestamp) {
      throw GraphError("add_step: non-increasing timestamp for agent " + std::to_string(agent));
    }
    const std::int64_t n = state.num_steps;
    const VariableKey prev_pose = VariableKey::pose(agent, n);
    if (n == 0 && !values_.has(prev_pose)) {
      values_.insert(prev_pose, Pose::identity());
      add_factor(std::make_unique<PriorFactor>(prev_pose, Pose::identity(),
                                               options_.prior_weight));
    }
    const VariableKey new_pose = VariableKey::pose(agent, n + 1);
    const VariableKey scale_key = VariableKey::scale(agent, n);
    const double scale_value =
        n == 0 ? options_.initial_scale : values_.scale(VariableKey::scale(agent, n - 1));

    values_.insert(new_pose, compose(values_.pose(prev_pose), step_pose));
    values_.insert(scale_key, scale_value);
    if (!options_.adaptive_scale) constants_.insert(scale_key);

    add_factor(make_factor(prev_pose, new_pose, scale_key));
    if (n >= 1) {
      add_factor(std::make_unique<ScaleSmoothFactor>(VariableKey::scale(agent, n - 1), scale_key,
                                                     options_.scale_smooth_weight));
    }
    state.num_steps = n + 1;
    state.last_timestamp = timestamp;
    return new_pose;
  }

  void add_factor(std::unique_ptr<Factor> factor) {
    for (const auto& k : factor->keys()) {
      if (!values_.has(k)) {
        throw GraphError("factor references unknown variable " + to_string(k));
      }
    }
    factors_.push_back(std::move(factor));
  }

  Vec3 initial_anchor_position(const VariableKey& pose_key, std::int64_t anchor_id,
                               double distance) const {
    auto it = options_.anchor_init_overrides.find(anchor_id);
    if (it != options_.anchor_init_overrides.end()) return it->second;
    const Pose& pose = values_.pose(pose_key);
    return pose.translation + distance * (pose.rotation * Vec3(1.0, 0.0, 0.0));
  }

  /// Two-circle refinement for the second observation of an unsolved anchor.
  void maybe_refine_anchor(const VariableKey& anchor_key, const VariableKey& pose_key,
                           double distance) {
    auto pending = pending_anchor_obs_.find(anchor_key.index);
    if (pending == pending_anchor_obs_.end()) return;
    const auto& [first_pose_key, first_distance] = pending->second;
    const Vec3 p1 = values_.pose(first_pose_key).translation;
    const Vec3 p2 = values_.pose(pose_key).translation;
    const Eigen::Vector2d c1 = p1.head<2>();
    const Eigen::Vector2d c2 = p2.head<2>();
    const double baseline = (c2 - c1).norm();
    if (baseline < options_.anchor_refine_baseline) return;
    pending_anchor_obs_.erase(pending);

    const double a =
        (first_distance * first_distance - distance * distance + baseline * baseline) /
        (2.0 * baseline);
    const double h2 = first_distance * first_distance - a * a;
    const double h = h2 > 0.0 ? std::sqrt(h2) : 0.0;
    const Eigen::Vector2d axis = (c2 - c1) / baseline;
    const Eigen::Vector2d perp(-axis.y(), axis.x());
    const Eigen::Vector2d base = c1 + a * axis;
    const Eigen::Vector2d cand_a = base + h * perp;
    const Eigen::Vector2d cand_b = base - h * perp;

    // Trajectory interior: centroid of the observing agent's pose positions.
    Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
    int count = 0;
    for (const auto& [key, pose] : values_.poses()) {
      if (key.agent == pose_key.agent) {
        centroid += pose.translation.head<2>();
        ++count;
      }
    }
    if (count > 0) centroid /= count;
    const Eigen::Vector2d chosen =
        ((cand_a - centroid).squaredNorm() <= (cand_b - centroid).squaredNorm()) ? cand_a : cand_b;
    values_.set_anchor(anchor_key, Vec3(chosen.x(), chosen.y(), 0.5 * (p1.z() + p2.z())));
  }

  void require_gauge() const {
    if (values_.poses().empty()) return;
    for (const auto& f : factors_) {
      if (f->type() == Factor::Type::kPrior) return;
    }
    throw GraphError("solve: graph with poses has no prior factor (gauge not fixed)");
  }

  std::vector<std::size_t> all_factor_indices() const {
    std::vector<std::size_t> idx(factors_.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return idx;
  }

  std::set<VariableKey> active_keys_all() const {
    std::set<VariableKey> keys;
    values_.for_each_key([&](const VariableKey& k) {
      if (constants_.count(k) == 0) keys.insert(k);
    });
    return keys;
  }

  std::set<VariableKey> incremental_active_set(int window) const {
    std::set<VariableKey> active;
    for (std::size_t i = pending_factor_start_; i < factors_.size(); ++i) {
      for (const auto& k : factors_[i]->keys()) active.insert(k);
    }
    // Expand pose keys along their step ordinals.
    std::set<VariableKey> expanded = active;
    for (const auto& k : active) {
      if (k.kind != VarKind::kPose) continue;
      for (std::int64_t j = k.index - window; j <= k.index + window; ++j) {
        const VariableKey neighbor = VariableKey::pose(k.agent, j);
        if (values_.has(neighbor)) expanded.insert(neighbor);
      }
    }
    // Pull in the scale/anchor variables of factors touching active poses.
    for (const auto& f : factors_) {
      bool touches = false;
      for (const auto& k : f->keys()) {
        if (k.kind == VarKind::kPose && expanded.count(k) > 0) {
          touches = true;
          break;
        }
      }
      if (!touches) continue;
      for (const auto& k : f->keys()) {
        if (k.kind != VarKind::kPose) expanded.insert(k);
      }
    }
    std::set<VariableKey> result;
    for (const auto& k : expanded) {
      if (constants_.count(k) == 0) result.insert(k);
    }
    return result;
  }

  Layout make_layout(const std::set<VariableKey>& keys) const {
    Layout layout;
    layout.order.assign(keys.begin(), keys.end());
    for (const auto& k : layout.order) {
      layout.offsets.emplace(k, layout.dim);
      layout.dim += tangent_dim(k.kind);
    }
    return layout;
  }

  double cost_over(const std::vector<std::size_t>& involved,
                   std::map<std::string, double>* by_type) const {
    return cost_over(values_, involved, by_type);
  }

  double cost_over(const Values& values, const std::vector<std::size_t>& involved,
                   std::map<std::string, double>* by_type) const {
    double total = 0.0;
    for (std::size_t i : involved) {
      const Factor& f = *factors_[i];
      const double c = robust_cost(f.evaluate(values, nullptr), f.weight());
      total += c;
      if (by_type != nullptr) (*by_type)[f.type_name()] += c;
    }
    return total;
  }

  /// Whitened, robust-reweighted normal equations H delta = b over `layout`.
  void assemble(const Layout& layout, const std::vector<std::size_t>& involved,
                Eigen::SparseMatrix<double>* h, Eigen::VectorXd* b) const {
    std::vector<Eigen::Triplet<double>> triplets;
    *b = Eigen::VectorXd::Zero(layout.dim);
    std::vector<Eigen::MatrixXd> jacobians;
    for (std::size_t fi : involved) {
      const Factor& f = *factors_[fi];
      const Eigen::VectorXd residual = f.evaluate(values_, &jacobians);
      const double w = apply_robust_weight(residual, f.weight());
      const double sw = std::sqrt(w);
      const Eigen::VectorXd rw = sw * f.weight().whiten(residual);
      const auto& keys = f.keys();
      std::vector<Eigen::MatrixXd> whitened(keys.size());
      for (std::size_t ki = 0; ki < keys.size(); ++ki) {
        if (layout.offsets.count(keys[ki]) == 0) continue;
        whitened[ki] = sw * (f.weight().sqrt_information() * jacobians[ki]);
      }
      for (std::size_t ki = 0; ki < keys.size(); ++ki) {
        auto it_i = layout.offsets.find(keys[ki]);
        if (it_i == layout.offsets.end()) continue;
        const int oi = it_i->second;
        const Eigen::VectorXd grad = whitened[ki].transpose() * rw;
        for (int r = 0; r < grad.size(); ++r) (*b)(oi + r) -= grad(r);
        for (std::size_t kj = 0; kj < keys.size(); ++kj) {
          auto it_j = layout.offsets.find(keys[kj]);
          if (it_j == layout.offsets.end()) continue;
          const int oj = it_j->second;
          const Eigen::MatrixXd block = whitened[ki].transpose() * whitened[kj];
          for (int r = 0; r < block.rows(); ++r) {
            for (int c = 0; c < block.cols(); ++c) {
              triplets.emplace_back(oi + r, oj + c, block(r, c));
            }
          }
        }
      }
    }
    h->resize(layout.dim, layout.dim);
    h->setFromTriplets(triplets.begin(), triplets.end());
  }

  std::vector<VariableKey> deficient_variables(const Layout& layout,
                                               const Eigen::SparseMatrix<double>& h) const {
    // Unconstrained or numerically dependent columns, found per variable
    // block from the dense sub-block's smallest eigenvalue.
    std::vector<VariableKey> offenders;
    const Eigen::MatrixXd dense(h);
    const double scale = std::max(dense.diagonal().maxCoeff(), 1.0);
    for (const auto& key : layout.order) {
      const int off = layout.offsets.at(key);
      const int dim = tangent_dim(key.kind);
      const Eigen::MatrixXd block = dense.block(off, off, dim, dim);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(block);
      if (eig.eigenvalues().minCoeff() < 1e-10 * scale) offenders.push_back(key);
    }
    if (offenders.empty()) {
      // Deficiency spans variable blocks; report every variable involved.
      offenders = layout.order;
    }
    return offenders;
  }

  SolveReport optimize(const std::set<VariableKey>& active,
                       const std::vector<std::size_t>& involved, const SolverConfig& config) {
    SolveReport report;
    report.initial_cost = total_cost();
    if (active.empty() || involved.empty()) {
      report.final_cost = report.initial_cost;
      report.converged = true;
      total_cost(&report.cost_by_type);
      return report;
    }
    const Layout layout = make_layout(active);
    double lambda = config.lambda_init;
    double cost = cost_over(involved, nullptr);
    const double full_minus_sub = report.initial_cost - cost;

    Eigen::SparseMatrix<double> h;
    Eigen::VectorXd b;
    for (int iter = 0; iter < config.max_iterations; ++iter) {
      ++report.iterations;
      assemble(layout, involved, &h, &b);
      Eigen::VectorXd damping = h.diagonal().cwiseMax(1e-9);
      bool accepted = false;
      double new_cost = cost;
      Values candidate;
      for (int attempt = 0; attempt < 32; ++attempt) {
        Eigen::SparseMatrix<double> damped = h;
        for (int i = 0; i < layout.dim; ++i) damped.coeffRef(i, i) += lambda * damping(i);
        Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(damped);
        if (ldlt.info() == Eigen::Success) {
          const Eigen::VectorXd delta = ldlt.solve(b);
          if (delta.allFinite()) {
            candidate = values_;
            for (const auto& key : layout.order) {
              const int off = layout.offsets.at(key);
              candidate.retract(key, delta.segment(off, tangent_dim(key.kind)),
                                options_.scale_min, options_.scale_max);
            }
            new_cost = cost_over(candidate, involved, nullptr);
            if (std::isfinite(new_cost) && new_cost < cost) {
              accepted = true;
              break;
            }
          }
        }
        lambda *= config.lambda_up;
        if (lambda > 1e14) break;
      }
      if (!accepted) {
        report.converged = true;  // no descent direction left at this point
        break;
      }
      values_ = candidate;
      lambda = std::max(lambda * config.lambda_down, 1e-12);
      const double decrease = cost - new_cost;
      cost = new_cost;
      if (cost + full_minus_sub <= config.abs_tol ||
          decrease <= config.rel_tol * std::max(cost, 1e-300)) {
        report.converged = true;
        break;
      }
    }
    report.final_cost = total_cost(&report.cost_by_type);
    return report;
  }

  void mark_solved() {
    pending_factor_start_ = factors_.size();
    pending_anchor_obs_.clear();
  }

  GraphOptions options_;
  Values values_;
  std::set<VariableKey> constants_;
  std::vector<std::unique_ptr<Factor>> factors_;
  std::map<std::int32_t, AgentState> agents_;
  std::map<std::int64_t, std::pair<VariableKey, double>> pending_anchor_obs_;
  std::size_t pending_factor_start_ = 0;
  std::int64_t incremental_batches_ = 0;
};

}  // namespace stride
