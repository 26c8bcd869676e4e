#pragma once

#include "oobc/model.hpp"
#include "oobc/opt_layer.hpp"

namespace oobc {

enum class BudgetRecurrence {
  // Full total derivative of b_{t+1} through x_t: both the multiplier path
  // and the remaining-budget path. Matches finite differences and is the
  // default.
  full,
  // Drops the d(x)/d(b) term in the budget recurrence; kept selectable for
  // comparison because the simplified form disagrees with finite differences
  // whenever the budget constraint influences the action.
  simplified,
};

struct PipelineOptions {
  BudgetRecurrence recurrence = BudgetRecurrence::full;
};

struct PipelineStep {
  Vec budget;       // b_t before acting
  Vec budget_eff;   // budget passed to the layer after look-ahead reserve
  Vec context;
  double tbar = 0.0;
  Vec lambda;
  OptSolution sol;
  KktGradients grads;
};

struct PipelineTrace {
  std::vector<PipelineStep> steps;
  Vec final_budget;
  double total_loss = 0.0;
  int inexact_steps = 0;
  std::string episode_id;
};

struct ThetaGradient {
  Vec dtheta;  // same shape as ModelParams::theta
};

// Algorithm: for t < N predict lambda_t = f_theta(b_t, c_t, (N-t)/N), solve
// the per-step layer under the remaining budget, consume; at t = N force
// lambda_N = 0 so no budget is left stranded.
PipelineTrace forward_episode(const ModelParams& model, const ProblemSpec& spec,
                              const Episode& ep,
                              const PipelineOptions& opts = {});

ThetaGradient backward_episode(const PipelineTrace& trace,
                               const ModelParams& model,
                               const ProblemSpec& spec,
                               const PipelineOptions& opts = {});

// Streaming inference: commits x_t as soon as c_t arrives. Produces actions
// byte-identical to forward_episode on the same episode.
class OnlineInference {
 public:
  OnlineInference(const ModelParams& model, const ProblemSpec& spec, Vec budgets);

  Vec step(const Vec& context);
  const Vec& remaining() const { return budget_; }
  int steps_taken() const { return t_; }

 private:
  const ModelParams& model_;
  const ProblemSpec& spec_;
  Vec budget_;
  int t_ = 0;
};

// Budget passed to the layer at step t (1-based): the remaining budget minus
// the consumption floor of the N-t steps still ahead.
Vec effective_budget(const ProblemSpec& spec, const Vec& remaining, int t);

}  // namespace oobc
