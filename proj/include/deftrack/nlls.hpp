#pragma once

#include <iosfwd>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "deftrack/geometry.hpp"

namespace deftrack::nlls {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// 95th percentiles of the chi-square distribution, used as Huber thresholds
/// on Mahalanobis squared norms.
inline constexpr double kChi2_95_2Dof = 5.991;
inline constexpr double kChi2_95_3Dof = 7.815;

/// Retraction for parameter blocks that live on a manifold. Jacobians are
/// always taken with respect to the tangent increment.
class Manifold {
 public:
  virtual ~Manifold() = default;
  virtual int tangent_size() const = 0;
  virtual Vector plus(const Vector& x, const Vector& delta) const = 0;
};

/// Pose stored as (qx, qy, qz, qw, tx, ty, tz); increments are twists
/// (rho, phi) applied on the left: T <- exp(xi) * T.
class PoseManifold final : public Manifold {
 public:
  int tangent_size() const override { return 6; }
  Vector plus(const Vector& x, const Vector& delta) const override;
};

Vector pose_to_vector(const Pose& pose);
Pose pose_from_vector(const Vector& x);

class CostFunction {
 public:
  virtual ~CostFunction() = default;
  virtual int residual_size() const = 0;
  /// `jacobians[k]`, when non-null, receives d(residual)/d(tangent of block
  /// k). Returns false if the residual is undefined at `parameters`.
  virtual bool evaluate(std::span<const Vector* const> parameters,
                        Vector& residual, std::span<Matrix*> jacobians) const = 0;
};

struct RobustCost {
  double cost = 0.0;    // rho(e)
  double weight = 1.0;  // d rho / d e
  double squared_norm = 0.0;  // e
};

/// Huber on the Mahalanobis squared norm e = sum (r_i / sigma_i)^2:
///   rho(e) = e                         for e <= threshold
///   rho(e) = 2 sqrt(threshold e) - threshold   otherwise.
/// `threshold` is delta^2 (e.g. a chi-square quantile).
RobustCost huber_apply(const Vector& residual, const Vector& sigma,
                       double threshold);

struct ResidualBlock {
  std::shared_ptr<const CostFunction> cost;
  std::vector<int> parameter_blocks;
  Vector sigma;
  /// Huber threshold on the squared Mahalanobis norm; <= 0 disables the
  /// robust kernel.
  double huber_threshold = 0.0;
  /// Multiplies the robustified cost (the lambda weights of regularisers).
  double scale = 1.0;
};

struct ParameterBlock {
  Vector value;
  std::shared_ptr<const Manifold> manifold;
  bool fixed = false;

  int tangent_size() const {
    return manifold ? manifold->tangent_size() : static_cast<int>(value.size());
  }
  Vector plus(const Vector& delta) const {
    return manifold ? manifold->plus(value, delta) : Vector(value + delta);
  }
};

class Problem {
 public:
  int add_parameter_block(Vector initial,
                          std::shared_ptr<const Manifold> manifold = nullptr);
  void set_fixed(int block, bool fixed = true);
  /// Throws std::invalid_argument on unknown blocks, inconsistent sigma size
  /// or non-positive sigma.
  int add_residual_block(std::shared_ptr<const CostFunction> cost,
                         std::vector<int> parameter_blocks, Vector sigma,
                         double huber_threshold = 0.0, double scale = 1.0);

  int num_parameter_blocks() const { return static_cast<int>(params_.size()); }
  int num_residual_blocks() const { return static_cast<int>(residuals_.size()); }
  const ParameterBlock& parameter_block(int i) const { return params_[i]; }
  ParameterBlock& mutable_parameter_block(int i) { return params_[i]; }
  const Vector& value(int i) const { return params_[i].value; }
  const ResidualBlock& residual_block(int i) const { return residuals_[i]; }

  /// Evaluates one residual block at the current values. `jacobians` holds
  /// one matrix per referenced parameter block (fixed ones included).
  bool evaluate_block(int i, Vector& residual,
                      std::vector<Matrix>* jacobians) const;

  /// Total robust cost sum_b scale_b * rho_b(e_b). False if any block is
  /// undefined.
  bool total_cost(double& cost) const;

 private:
  std::vector<ParameterBlock> params_;
  std::vector<ResidualBlock> residuals_;
};

enum class SolverStatus { kConverged, kMaxIterations, kFailed };

const char* to_string(SolverStatus status);

struct IterationRecord {
  int iteration = 0;
  double cost = 0.0;
  double damping = 0.0;
  double step_norm = 0.0;
  bool accepted = false;
};

/// Levenberg-Marquardt with IRLS Huber weighting. The damped system is
/// (H + lambda * diag(H)) dx = -g, with diag(H) clamped to [1e-6, 1e32].
/// lambda starts at `initial_damping`, is multiplied by `damping_increase`
/// (10) after a rejected step and by `damping_decrease` (0.5) after an
/// accepted one. Terminates when an accepted step lowers the cost by less
/// than `function_tolerance` relative, when the gradient max-norm drops
/// below `gradient_tolerance`, when the step is below `parameter_tolerance`
/// relative to the state, or after `max_iterations` accepted-or-rejected
/// steps.
struct SolverOptions {
  int max_iterations = 50;
  double function_tolerance = 1e-8;
  double gradient_tolerance = 1e-10;
  double parameter_tolerance = 1e-12;
  double initial_damping = 1e-6;
  double damping_increase = 10.0;
  double damping_decrease = 0.5;
  double max_damping = 1e16;
  /// When set, one CSV row `iteration,cost,damping,step_norm` per step.
  std::ostream* iteration_log = nullptr;
};

struct SolverSummary {
  SolverStatus status = SolverStatus::kFailed;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  std::vector<IterationRecord> history;
};

/// Sparse LM. On kFailed the parameter values are restored to their inputs.
SolverSummary solve(Problem& problem, const SolverOptions& options = {});

/// Largest relative discrepancy ||J_analytic - J_numeric||_F /
/// max(||J_numeric||_F, ||J_analytic||_F) over every (residual, free or fixed
/// parameter block) pair, using central differences with step h in tangent
/// coordinates.
double check_jacobians(const Problem& problem, double h = 1e-6);

}  // namespace deftrack::nlls
