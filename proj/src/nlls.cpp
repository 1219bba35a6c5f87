#include "deftrack/nlls.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

namespace deftrack::nlls {

Vector PoseManifold::plus(const Vector& x, const Vector& delta) const {
  const Vector6d xi = delta.head<6>();
  return pose_to_vector(se3_exp(xi) * pose_from_vector(x));
}

Vector pose_to_vector(const Pose& pose) {
  const Eigen::Quaterniond q = pose.quaternion();
  Vector x(7);
  x << q.x(), q.y(), q.z(), q.w(), pose.translation();
  return x;
}

Pose pose_from_vector(const Vector& x) {
  const Eigen::Quaterniond q(x(3), x(0), x(1), x(2));
  return Pose(q, x.tail<3>());
}

RobustCost huber_apply(const Vector& residual, const Vector& sigma,
                       double threshold) {
  RobustCost out;
  out.squared_norm = residual.cwiseQuotient(sigma).squaredNorm();
  const double e = out.squared_norm;
  if (threshold <= 0.0 || e <= threshold) {
    out.cost = e;
    out.weight = 1.0;
  } else {
    const double root = std::sqrt(threshold * e);
    out.cost = 2.0 * root - threshold;
    out.weight = threshold / root;  // sqrt(threshold / e)
  }
  return out;
}

int Problem::add_parameter_block(Vector initial,
                                 std::shared_ptr<const Manifold> manifold) {
  params_.push_back({std::move(initial), std::move(manifold), false});
  return static_cast<int>(params_.size()) - 1;
}

void Problem::set_fixed(int block, bool fixed) {
  params_.at(static_cast<std::size_t>(block)).fixed = fixed;
}

int Problem::add_residual_block(std::shared_ptr<const CostFunction> cost,
                                std::vector<int> parameter_blocks, Vector sigma,
                                double huber_threshold, double scale) {
  if (!cost) throw std::invalid_argument("residual block without cost");
  for (int b : parameter_blocks) {
    if (b < 0 || b >= num_parameter_blocks()) {
      throw std::invalid_argument("residual references unknown parameter block");
    }
  }
  if (sigma.size() != cost->residual_size()) {
    throw std::invalid_argument("sigma size differs from residual size");
  }
  if ((sigma.array() <= 0.0).any()) {
    throw std::invalid_argument("sigma entries must be positive");
  }
  residuals_.push_back({std::move(cost), std::move(parameter_blocks),
                        std::move(sigma), huber_threshold, scale});
  return static_cast<int>(residuals_.size()) - 1;
}

bool Problem::evaluate_block(int i, Vector& residual,
                             std::vector<Matrix>* jacobians) const {
  const ResidualBlock& block = residuals_[i];
  const std::size_t k = block.parameter_blocks.size();
  std::vector<const Vector*> values(k);
  std::vector<Matrix*> jac_ptrs(k, nullptr);
  if (jacobians != nullptr) jacobians->resize(k);
  for (std::size_t j = 0; j < k; ++j) {
    const ParameterBlock& p = params_[block.parameter_blocks[j]];
    values[j] = &p.value;
    if (jacobians != nullptr) {
      (*jacobians)[j].resize(block.cost->residual_size(), p.tangent_size());
      jac_ptrs[j] = &(*jacobians)[j];
    }
  }
  residual.resize(block.cost->residual_size());
  return block.cost->evaluate(values, residual, jac_ptrs);
}

bool Problem::total_cost(double& cost) const {
  cost = 0.0;
  Vector r;
  for (int i = 0; i < num_residual_blocks(); ++i) {
    if (!evaluate_block(i, r, nullptr) || !r.allFinite()) return false;
    const ResidualBlock& b = residuals_[i];
    cost += b.scale * huber_apply(r, b.sigma, b.huber_threshold).cost;
  }
  return std::isfinite(cost);
}

const char* to_string(SolverStatus status) {
  switch (status) {
    case SolverStatus::kConverged:
      return "converged";
    case SolverStatus::kMaxIterations:
      return "max_iterations";
    case SolverStatus::kFailed:
      return "failed";
  }
  return "unknown";
}

namespace {

using SparseMatrix = Eigen::SparseMatrix<double>;

struct Linearization {
  std::vector<Eigen::Triplet<double>> triplets;
  Vector gradient;
  bool ok = true;
};

Linearization linearize(const Problem& problem, const std::vector<int>& offsets,
                        int n) {
  Linearization lin;
  lin.gradient = Vector::Zero(n);
  // Explicit diagonal entries keep the sparsity pattern fixed even for blocks
  // without residuals.
  for (int i = 0; i < n; ++i) lin.triplets.emplace_back(i, i, 0.0);
  Vector r;
  std::vector<Matrix> jacobians;
  for (int i = 0; i < problem.num_residual_blocks(); ++i) {
    const ResidualBlock& block = problem.residual_block(i);
    if (!problem.evaluate_block(i, r, &jacobians) || !r.allFinite()) {
      lin.ok = false;
      return lin;
    }
    const RobustCost robust = huber_apply(r, block.sigma, block.huber_threshold);
    const double w = block.scale * robust.weight;
    const Vector inv_sigma = block.sigma.cwiseInverse();
    const Vector rw = r.cwiseProduct(inv_sigma);
    const std::size_t k = block.parameter_blocks.size();
    for (std::size_t a = 0; a < k; ++a) {
      jacobians[a] = inv_sigma.asDiagonal() * jacobians[a];
    }
    for (std::size_t a = 0; a < k; ++a) {
      const int oa = offsets[block.parameter_blocks[a]];
      if (oa < 0) continue;
      lin.gradient.segment(oa, jacobians[a].cols()) +=
          w * jacobians[a].transpose() * rw;
      for (std::size_t b = 0; b < k; ++b) {
        const int ob = offsets[block.parameter_blocks[b]];
        if (ob < 0) continue;
        const Matrix hab = w * jacobians[a].transpose() * jacobians[b];
        for (Eigen::Index c = 0; c < hab.cols(); ++c) {
          for (Eigen::Index rr = 0; rr < hab.rows(); ++rr) {
            lin.triplets.emplace_back(oa + static_cast<int>(rr),
                                      ob + static_cast<int>(c), hab(rr, c));
          }
        }
      }
    }
  }
  return lin;
}

}  // namespace

SolverSummary solve(Problem& problem, const SolverOptions& options) {
  SolverSummary summary;
  std::vector<int> offsets(problem.num_parameter_blocks(), -1);
  int n = 0;
  for (int i = 0; i < problem.num_parameter_blocks(); ++i) {
    const ParameterBlock& p = problem.parameter_block(i);
    if (p.fixed) continue;
    offsets[i] = n;
    n += p.tangent_size();
  }
  std::vector<Vector> initial(problem.num_parameter_blocks());
  for (int i = 0; i < problem.num_parameter_blocks(); ++i) {
    initial[i] = problem.value(i);
  }
  auto restore = [&] {
    for (int i = 0; i < problem.num_parameter_blocks(); ++i) {
      problem.mutable_parameter_block(i).value = initial[i];
    }
  };

  double cost = 0.0;
  if (!problem.total_cost(cost)) {
    summary.status = SolverStatus::kFailed;
    return summary;
  }
  summary.initial_cost = summary.final_cost = cost;
  if (n == 0) {
    summary.status = SolverStatus::kConverged;
    return summary;
  }

  Eigen::SimplicialLDLT<SparseMatrix> ldlt;
  bool pattern_ready = false;
  double lambda = options.initial_damping;
  int iteration = 0;
  summary.status = SolverStatus::kMaxIterations;

  auto log = [&](const IterationRecord& rec) {
    summary.history.push_back(rec);
    if (options.iteration_log != nullptr) {
      *options.iteration_log << rec.iteration << ',' << rec.cost << ','
                             << rec.damping << ',' << rec.step_norm << '\n';
    }
  };

  while (iteration < options.max_iterations) {
    Linearization lin = linearize(problem, offsets, n);
    if (!lin.ok) {
      restore();
      summary.status = SolverStatus::kFailed;
      summary.final_cost = summary.initial_cost;
      return summary;
    }
    if (lin.gradient.lpNorm<Eigen::Infinity>() < options.gradient_tolerance) {
      summary.status = SolverStatus::kConverged;
      break;
    }
    SparseMatrix hessian(n, n);
    hessian.setFromTriplets(lin.triplets.begin(), lin.triplets.end());
    const Vector diag = hessian.diagonal().cwiseMax(1e-6).cwiseMin(1e32);
    if (!pattern_ready) {
      ldlt.analyzePattern(hessian);
      pattern_ready = true;
    }
    double state_norm = 0.0;
    for (int i = 0; i < problem.num_parameter_blocks(); ++i) {
      if (offsets[i] >= 0) state_norm += problem.value(i).squaredNorm();
    }
    state_norm = std::sqrt(state_norm);

    bool accepted = false;
    bool done = false;
    while (!accepted && iteration < options.max_iterations) {
      SparseMatrix damped = hessian;
      for (int i = 0; i < n; ++i) damped.coeffRef(i, i) += lambda * diag(i);
      ldlt.factorize(damped);
      if (ldlt.info() != Eigen::Success) {
        lambda *= options.damping_increase;
        if (lambda > options.max_damping) {
          restore();
          summary.status = SolverStatus::kFailed;
          summary.final_cost = summary.initial_cost;
          return summary;
        }
        continue;
      }
      const Vector step = ldlt.solve(-lin.gradient);
      ++iteration;
      const double step_norm = step.norm();
      if (!step.allFinite()) {
        lambda *= options.damping_increase;
        log({iteration, cost, lambda, step_norm, false});
        continue;
      }
      if (step_norm <= options.parameter_tolerance *
                           (state_norm + options.parameter_tolerance)) {
        summary.status = SolverStatus::kConverged;
        done = true;
        break;
      }
      std::vector<Vector> previous(problem.num_parameter_blocks());
      for (int i = 0; i < problem.num_parameter_blocks(); ++i) {
        if (offsets[i] < 0) continue;
        ParameterBlock& p = problem.mutable_parameter_block(i);
        previous[i] = p.value;
        p.value = p.plus(step.segment(offsets[i], p.tangent_size()));
      }
      double new_cost = 0.0;
      const bool valid = problem.total_cost(new_cost);
      if (valid && new_cost <= cost) {
        accepted = true;
        const double decrease = cost - new_cost;
        log({iteration, new_cost, lambda, step_norm, true});
        lambda = std::max(lambda * options.damping_decrease, 1e-16);
        const bool small = decrease <= options.function_tolerance * cost;
        cost = new_cost;
        if (small) {
          summary.status = SolverStatus::kConverged;
          done = true;
        }
      } else {
        for (int i = 0; i < problem.num_parameter_blocks(); ++i) {
          if (offsets[i] >= 0) {
            problem.mutable_parameter_block(i).value = previous[i];
          }
        }
        lambda *= options.damping_increase;
        log({iteration, valid ? new_cost : cost, lambda, step_norm, false});
        if (lambda > options.max_damping) {
          // No descent direction left at this numerical precision.
          summary.status = SolverStatus::kConverged;
          done = true;
          break;
        }
      }
    }
    if (done) break;
  }
  summary.iterations = iteration;
  summary.final_cost = cost;
  return summary;
}

double check_jacobians(const Problem& problem, double h) {
  double worst = 0.0;
  Vector r, r_plus, r_minus;
  std::vector<Matrix> analytic;
  for (int i = 0; i < problem.num_residual_blocks(); ++i) {
    const ResidualBlock& block = problem.residual_block(i);
    if (!problem.evaluate_block(i, r, &analytic)) continue;
    const std::size_t k = block.parameter_blocks.size();
    std::vector<Vector> values(k);
    for (std::size_t j = 0; j < k; ++j) {
      values[j] = problem.value(block.parameter_blocks[j]);
    }
    std::vector<const Vector*> ptrs(k);
    for (std::size_t j = 0; j < k; ++j) ptrs[j] = &values[j];
    std::vector<Matrix*> no_jac(k, nullptr);
    for (std::size_t j = 0; j < k; ++j) {
      const ParameterBlock& p = problem.parameter_block(block.parameter_blocks[j]);
      const int dim = p.tangent_size();
      Matrix numeric(r.size(), dim);
      const Vector original = values[j];
      for (int d = 0; d < dim; ++d) {
        Vector delta = Vector::Zero(dim);
        delta(d) = h;
        values[j] = p.manifold ? p.manifold->plus(original, delta)
                               : Vector(original + delta);
        r_plus.resize(r.size());
        block.cost->evaluate(ptrs, r_plus, no_jac);
        delta(d) = -h;
        values[j] = p.manifold ? p.manifold->plus(original, delta)
                               : Vector(original + delta);
        r_minus.resize(r.size());
        block.cost->evaluate(ptrs, r_minus, no_jac);
        numeric.col(d) = (r_plus - r_minus) / (2.0 * h);
      }
      values[j] = original;
      const double scale = std::max(numeric.norm(), analytic[j].norm());
      if (scale > 0.0) {
        worst = std::max(worst, (analytic[j] - numeric).norm() / scale);
      }
    }
  }
  return worst;
}

}  // namespace deftrack::nlls
