#pragma once

#include <functional>

#include "oobc/problem.hpp"

namespace oobc {

// Joint index convention for active sets: 0..M-1 are the resource
// constraints, then one entry per finite lower bound, then per finite upper
// bound (order fixed by ActiveSetLayout).
struct OptSolution {
  Vec x;
  Vec mu;      // resource duals, size M
  Vec mu_lo;   // box lower-bound duals, size d (zero where bound is -inf)
  Vec mu_hi;   // box upper-bound duals, size d
  std::vector<int> active_set;  // joint indices at equality
  double kkt_residual = 0.0;
};

struct KktGradients {
  Mat dx_dlambda;  // d x M
  Mat dx_db;       // d x M
  Mat dx_dc;       // d x dim(c)
  bool exact = true;
};

struct KktDiagnostic {
  bool nonzero_active_duals = false;
  bool cardinality_ok = false;
  bool gradients_independent = false;
  int active_count = 0;
  double min_singular_value = 0.0;
  bool exact() const {
    return nonzero_active_duals && cardinality_ok && gradients_independent;
  }
};

// Minimizes l(x,c) + lambda'g(x,c) subject to g(x,c) <= b and the box.
// Fairness dispatches to the closed form x = clamp(c/lambda, x_min,
// min(x_max, b)); everything else goes through a log-barrier Newton solver
// followed by an active-set polish.
OptSolution solve_opt_layer(const ProblemSpec& spec, const Vec& c,
                            const Vec& lambda, const Vec& b);

KktGradients differentiate_kkt(const ProblemSpec& spec, const OptSolution& sol,
                               const Vec& c, const Vec& lambda, const Vec& b);

KktDiagnostic check_kkt_conditions(const ProblemSpec& spec,
                                   const OptSolution& sol, const Vec& c,
                                   const Vec& b);

// Generic small dense convex program, also used by the offline-optimal
// baseline on the stacked N*d problem.
struct ConvexConstraint {
  std::function<double(const Vec&)> value;  // feasible iff value(x) <= 0
  std::function<Vec(const Vec&)> grad;
  std::function<Mat(const Vec&)> hess;
};

struct ConvexProgram {
  int dim = 0;
  std::function<double(const Vec&)> objective;
  std::function<Vec(const Vec&)> grad;
  std::function<Mat(const Vec&)> hess;
  std::vector<ConvexConstraint> constraints;
};

struct BarrierResult {
  Vec x;
  Vec duals;  // one per constraint
  double residual = 0.0;
};

// Interior point: log-barrier Newton stages (barrier parameter x10 per
// stage, at most 100 stages) from a strictly feasible start, then Newton
// polish on the active-set KKT system.
BarrierResult solve_barrier(const ConvexProgram& prog, const Vec& x0);

// Strictly feasible point for the opt-layer feasible set, backtracked toward
// the box lower corner. Throws if none is found.
Vec strictly_feasible_start(const ProblemSpec& spec, const Vec& c, const Vec& b);

}  // namespace oobc
