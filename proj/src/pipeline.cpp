#include "oobc/pipeline.hpp"

#include <cmath>

namespace oobc {

Vec effective_budget(const ProblemSpec& spec, const Vec& remaining, int t) {
  const int n = spec.horizon();
  return remaining - static_cast<double>(n - t) * spec.min_step_consumption();
}

namespace {

void check_feasible_episode(const ProblemSpec& spec, const Episode& ep) {
  validate_episode(spec, ep);
  if (ep.horizon() != spec.horizon())
    throw std::invalid_argument("pipeline: episode length != spec horizon");
  const Vec floor = static_cast<double>(spec.horizon()) * spec.min_step_consumption();
  for (int m = 0; m < ep.budgets.size(); ++m)
    if (floor[m] > ep.budgets[m] + 1e-9)
      throw std::runtime_error("pipeline: budget cannot cover the minimum allocation");
}

PipelineStep run_step(const ModelParams& model, const ProblemSpec& spec,
                      const Vec& budget, const Vec& context, int t) {
  const int n = spec.horizon();
  PipelineStep step;
  step.budget = budget;
  step.context = context;
  step.tbar = static_cast<double>(n - t) / n;
  step.budget_eff = effective_budget(spec, budget, t);
  step.lambda = t == n ? Vec::Zero(spec.num_constraints())
                       : model_forward(model, budget, context, step.tbar);
  step.sol = solve_opt_layer(spec, context, step.lambda, step.budget_eff);
  step.grads = differentiate_kkt(spec, step.sol, context, step.lambda, step.budget_eff);
  return step;
}

}  // namespace

PipelineTrace forward_episode(const ModelParams& model, const ProblemSpec& spec,
                              const Episode& ep, const PipelineOptions&) {
  check_feasible_episode(spec, ep);
  const int n = spec.horizon();

  PipelineTrace trace;
  trace.episode_id = ep.id;
  trace.steps.reserve(n);
  Vec budget = ep.budgets;
  for (int t = 1; t <= n; ++t) {
    PipelineStep step = run_step(model, spec, budget, ep.contexts[t - 1], t);
    trace.total_loss += spec.loss(step.sol.x, step.context);
    budget -= spec.constraints(step.sol.x, step.context);
    if (!step.grads.exact) ++trace.inexact_steps;
    trace.steps.push_back(std::move(step));
    if ((budget.array() < -1e-9).any())
      throw std::runtime_error("pipeline: negative remaining budget at step " +
                               std::to_string(t));
  }
  trace.final_budget = budget;
  return trace;
}

ThetaGradient backward_episode(const PipelineTrace& trace,
                               const ModelParams& model, const ProblemSpec& spec,
                               const PipelineOptions& opts) {
  const int n = static_cast<int>(trace.steps.size());
  const int m = spec.num_constraints();
  const int p = model.param_count();

  ThetaGradient out;
  out.dtheta = Vec::Zero(p);
  Mat db_dtheta = Mat::Zero(m, p);  // d b_t / d theta, zero at t = 1

  for (int t = 1; t <= n; ++t) {
    const PipelineStep& step = trace.steps[t - 1];
    const Mat& dx_dl = step.grads.dx_dlambda;  // d x_t / d lambda_t
    const Mat& dx_db = step.grads.dx_db;       // d x_t / d b_t

    Mat dlambda_dtheta = Mat::Zero(m, p);
    if (t < n) {
      const ModelGradients mg =
          model_backward(model, step.budget, step.context, step.tbar);
      dlambda_dtheta = mg.dtheta + mg.db * db_dtheta;
    }

    const Mat dx_dtheta = dx_dl * dlambda_dtheta + dx_db * db_dtheta;
    const Vec lx = spec.loss_grad_x(step.sol.x, step.context);
    const Vec contrib = dx_dtheta.transpose() * lx;
    if (!contrib.allFinite())
      throw std::runtime_error("backward_episode: non-finite gradient at step " +
                               std::to_string(t));
    out.dtheta += contrib;

    if (t < n) {
      const Mat gx = spec.constraints_grad_x(step.sol.x, step.context);
      if (opts.recurrence == BudgetRecurrence::full)
        db_dtheta -= gx * dx_dtheta;
      else
        db_dtheta -= gx * (dx_dl * dlambda_dtheta);
    }
  }
  return out;
}

OnlineInference::OnlineInference(const ModelParams& model, const ProblemSpec& spec,
                                 Vec budgets)
    : model_(model), spec_(spec), budget_(std::move(budgets)) {
  const Vec floor = static_cast<double>(spec.horizon()) * spec.min_step_consumption();
  for (int m = 0; m < budget_.size(); ++m)
    if (floor[m] > budget_[m] + 1e-9)
      throw std::runtime_error("pipeline: budget cannot cover the minimum allocation");
}

Vec OnlineInference::step(const Vec& context) {
  if (t_ >= spec_.horizon())
    throw std::runtime_error("online inference: episode already complete");
  ++t_;
  const int n = spec_.horizon();
  const double tbar = static_cast<double>(n - t_) / n;
  const Vec lambda = t_ == n ? Vec::Zero(spec_.num_constraints())
                             : model_forward(model_, budget_, context, tbar);
  const OptSolution sol =
      solve_opt_layer(spec_, context, lambda, effective_budget(spec_, budget_, t_));
  budget_ -= spec_.constraints(sol.x, context);
  return sol.x;
}

}  // namespace oobc
