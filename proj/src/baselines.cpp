#include "oobc/baselines.hpp"

#include <algorithm>
#include <cmath>

#include "oobc/opt_layer.hpp"
#include "oobc/pipeline.hpp"

namespace oobc {

namespace {

double clampd(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

BaselineRun finish(const ProblemSpec& spec, const Episode& ep,
                   std::vector<Vec> actions) {
  BaselineRun run;
  run.utility = total_utility(spec, ep, actions);
  run.actions = std::move(actions);
  return run;
}

// Water-filling for -c*log(x) with g(x)=x: x_t = clamp(c_t/lambda, lo, hi),
// consumption is decreasing in lambda, so bisect on the total.
BaselineRun waterfill_opt(const FairnessFamily& fair, const Episode& ep) {
  const int n = ep.horizon();
  const double lo = fair.x_min(), hi = fair.x_max();
  const double budget = ep.budgets(0);

  auto alloc = [&](double lambda) {
    std::vector<double> x(n);
    for (int t = 0; t < n; ++t) {
      const double c = ep.contexts[t](0);
      if (c <= 0.0) {
        x[t] = lo;
      } else if (lambda <= 0.0) {
        x[t] = hi;
      } else {
        x[t] = clampd(c / lambda, lo, hi);
      }
    }
    return x;
  };
  auto total = [&](double lambda) {
    const auto x = alloc(lambda);
    double s = 0.0;
    for (double v : x) s += v;
    return s;
  };

  double x_lambda = 0.0;
  if (total(0.0) > budget) {
    double llo = 0.0, lhi = 1.0;
    while (total(lhi) > budget) {
      lhi *= 2.0;
      if (lhi > 1e18) throw std::runtime_error("water-filling: budget below floor");
    }
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (llo + lhi);
      (total(mid) > budget ? llo : lhi) = mid;
    }
    x_lambda = 0.5 * (llo + lhi);
  }

  const auto x = alloc(x_lambda);
  std::vector<Vec> actions(n);
  for (int t = 0; t < n; ++t) actions[t] = Vec::Constant(1, x[t]);
  return finish(fair, ep, std::move(actions));
}

// Stacked barrier solve of the full-information problem over z in R^{N*d}.
BaselineRun stacked_opt(const ProblemSpec& spec, const Episode& ep) {
  const int n = ep.horizon();
  const int d = spec.action_dim();
  const int m = spec.num_constraints();
  const int dim = n * d;
  const Vec lo = spec.box_lower(), hi = spec.box_upper();

  auto block = [d](const Vec& z, int t) { return Vec(z.segment(t * d, d)); };

  ConvexProgram prog;
  prog.dim = dim;
  prog.objective = [&, n](const Vec& z) {
    double s = 0.0;
    for (int t = 0; t < n; ++t) s += spec.loss(block(z, t), ep.contexts[t]);
    return s;
  };
  prog.grad = [&, n, d, dim](const Vec& z) {
    Vec g = Vec::Zero(dim);
    for (int t = 0; t < n; ++t)
      g.segment(t * d, d) = spec.loss_grad_x(block(z, t), ep.contexts[t]);
    return g;
  };
  prog.hess = [&, n, d, dim](const Vec& z) {
    Mat h = Mat::Zero(dim, dim);
    for (int t = 0; t < n; ++t)
      h.block(t * d, t * d, d, d) = spec.loss_hess_xx(block(z, t), ep.contexts[t]);
    return h;
  };

  for (int k = 0; k < m; ++k) {
    ConvexConstraint c;
    c.value = [&, k, n](const Vec& z) {
      double s = -ep.budgets(k);
      for (int t = 0; t < n; ++t)
        s += spec.constraints(block(z, t), ep.contexts[t])(k);
      return s;
    };
    c.grad = [&, k, n, d, dim](const Vec& z) {
      Vec g = Vec::Zero(dim);
      for (int t = 0; t < n; ++t)
        g.segment(t * d, d) =
            spec.constraints_grad_x(block(z, t), ep.contexts[t]).row(k).transpose();
      return g;
    };
    c.hess = [&, k, n, d, dim](const Vec& z) {
      Mat h = Mat::Zero(dim, dim);
      for (int t = 0; t < n; ++t)
        h.block(t * d, t * d, d, d) =
            spec.constraint_hess_xx(k, block(z, t), ep.contexts[t]);
      return h;
    };
    prog.constraints.push_back(std::move(c));
  }
  for (int t = 0; t < n; ++t) {
    for (int j = 0; j < d; ++j) {
      const int idx = t * d + j;
      if (std::isfinite(lo(j))) {
        ConvexConstraint c;
        c.value = [idx, v = lo(j)](const Vec& z) { return v - z(idx); };
        c.grad = [idx, dim](const Vec&) {
          Vec g = Vec::Zero(dim);
          g(idx) = -1.0;
          return g;
        };
        c.hess = [dim](const Vec&) { return Mat::Zero(dim, dim); };
        prog.constraints.push_back(std::move(c));
      }
      if (std::isfinite(hi(j))) {
        ConvexConstraint c;
        c.value = [idx, v = hi(j)](const Vec& z) { return z(idx) - v; };
        c.grad = [idx, dim](const Vec&) {
          Vec g = Vec::Zero(dim);
          g(idx) = 1.0;
          return g;
        };
        c.hess = [dim](const Vec&) { return Mat::Zero(dim, dim); };
        prog.constraints.push_back(std::move(c));
      }
    }
  }

  // Strictly feasible start: per-step interior anchor, backtracked toward the
  // lower corner until the coupled budget rows go slack.
  Vec anchor(dim), mid(dim);
  for (int t = 0; t < n; ++t) {
    for (int j = 0; j < d; ++j) {
      const double l = std::isfinite(lo(j)) ? lo(j) : -1.0;
      const double h = std::isfinite(hi(j)) ? hi(j) : 1.0;
      anchor(t * d + j) = std::isfinite(lo(j)) ? lo(j) + 1e-6 * std::max(1.0, std::abs(lo(j))) : 0.0;
      mid(t * d + j) = 0.5 * (l + h);
    }
  }
  Vec z0 = mid;
  auto strictly_ok = [&](const Vec& z) {
    for (const auto& c : prog.constraints)
      if (c.value(z) >= -1e-10) return false;
    return true;
  };
  for (int it = 0; it < 200 && !strictly_ok(z0); ++it)
    z0 = anchor + 0.5 * (z0 - anchor);
  if (!strictly_ok(z0))
    throw std::runtime_error("offline optimum: no strictly feasible start");

  const BarrierResult res = solve_barrier(prog, z0);
  std::vector<Vec> actions(n);
  for (int t = 0; t < n; ++t) actions[t] = block(res.x, t);
  return finish(spec, ep, std::move(actions));
}

// Solve the per-step relaxed problem under a fixed multiplier and the
// remaining budget (with reserve), consume, repeat. `zero_last` switches the
// final step to lambda = 0 (last-step fix).
std::vector<Vec> run_fixed_lambda_loop(
    const ProblemSpec& spec, const Episode& ep, bool zero_last,
    const std::function<Vec(int, const Vec&, const Vec&)>& lambda_at) {
  const int n = ep.horizon();
  const int m = spec.num_constraints();
  Vec remaining = ep.budgets;
  std::vector<Vec> actions(n);
  for (int t = 1; t <= n; ++t) {
    const Vec& c = ep.contexts[t - 1];
    const Vec beff = effective_budget(spec, remaining, t);
    Vec lambda = (zero_last && t == n) ? Vec::Zero(m) : lambda_at(t, remaining, c);
    const OptSolution sol = solve_opt_layer(spec, c, lambda, beff);
    actions[t - 1] = sol.x;
    remaining -= spec.constraints(sol.x, c);
  }
  return actions;
}

}  // namespace

BaselineRun solve_offline_opt(const ProblemSpec& spec, const Episode& ep) {
  validate_episode(spec, ep);
  if (const auto* fair = dynamic_cast<const FairnessFamily*>(&spec))
    return waterfill_opt(*fair, ep);
  return stacked_opt(spec, ep);
}

BaselineRun run_equal(const ProblemSpec& spec, const Episode& ep) {
  validate_episode(spec, ep);
  const int n = ep.horizon();
  const int d = spec.action_dim();
  if (d != spec.num_constraints() || d != 1)
    throw std::invalid_argument("equal split is defined for scalar allocations");
  const double share = ep.budgets(0) / n;
  const double x = clampd(share, spec.box_lower()(0), spec.box_upper()(0));
  std::vector<Vec> actions(n, Vec::Constant(1, x));
  return finish(spec, ep, std::move(actions));  // throws if the floor overshoots
}

Vec calibrate_avg_lt(const ProblemSpec& spec,
                     const std::vector<Episode>& training) {
  if (training.empty()) throw std::invalid_argument("avg-lt: empty training set");
  const int m = spec.num_constraints();

  Vec mean_budget = Vec::Zero(m);
  for (const auto& ep : training) mean_budget += ep.budgets;
  mean_budget /= static_cast<double>(training.size());

  // Mean episode consumption under a constant multiplier, without the online
  // budget cap (the calibration target is the long-term average constraint).
  const Vec huge = Vec::Constant(m, 1e18);
  auto mean_consumption = [&](const Vec& lambda) {
    Vec total = Vec::Zero(m);
    for (const auto& ep : training) {
      for (const auto& c : ep.contexts) {
        const OptSolution sol = solve_opt_layer(spec, c, lambda, huge);
        total += spec.constraints(sol.x, c);
      }
    }
    return Vec(total / static_cast<double>(training.size()));
  };

  Vec lambda = Vec::Zero(m);
  // Cyclic per-coordinate bisection; one sweep suffices when M = 1.
  const int sweeps = m == 1 ? 1 : 4;
  for (int sweep = 0; sweep < sweeps; ++sweep) {
    for (int k = 0; k < m; ++k) {
      auto use_k = [&](double v) {
        Vec l = lambda;
        l(k) = v;
        return mean_consumption(l)(k);
      };
      if (use_k(0.0) <= mean_budget(k)) {
        lambda(k) = 0.0;  // slack on average: no pressure needed
        continue;
      }
      double llo = 0.0, lhi = 1.0;
      while (use_k(lhi) > mean_budget(k)) {
        lhi *= 2.0;
        if (lhi > 1e15) throw std::runtime_error("avg-lt: calibration diverged");
      }
      while (lhi - llo > 1e-12 * std::max(1.0, lhi)) {
        const double mid = 0.5 * (llo + lhi);
        const double cons = use_k(mid);
        if (std::abs(cons - mean_budget(k)) <= 1e-3 * mean_budget(k)) {
          llo = lhi = mid;
          break;
        }
        (cons > mean_budget(k) ? llo : lhi) = mid;
      }
      lambda(k) = 0.5 * (llo + lhi);
    }
  }
  return lambda;
}

BaselineRun run_avg_lt(const ProblemSpec& spec, const Episode& ep,
                       const Vec& lambda_p) {
  validate_episode(spec, ep);
  auto actions = run_fixed_lambda_loop(
      spec, ep, /*zero_last=*/false,
      [&](int, const Vec&, const Vec&) { return lambda_p; });
  return finish(spec, ep, std::move(actions));
}

BaselineRun run_dgd(const ProblemSpec& spec, const Episode& ep, double eta) {
  validate_episode(spec, ep);
  const int n = ep.horizon();
  const int m = spec.num_constraints();
  const Vec rate = ep.budgets / static_cast<double>(n);

  Vec lambda = Vec::Zero(m);
  Vec remaining = ep.budgets;
  std::vector<Vec> actions(n);
  for (int t = 1; t <= n; ++t) {
    const Vec& c = ep.contexts[t - 1];
    const Vec beff = effective_budget(spec, remaining, t);
    const Vec lam = (t == n) ? Vec::Zero(m) : lambda;
    const OptSolution sol = solve_opt_layer(spec, c, lam, beff);
    actions[t - 1] = sol.x;
    const Vec g = spec.constraints(sol.x, c);
    remaining -= g;
    lambda = (lambda + eta * (g - rate)).cwiseMax(0.0);
  }
  return finish(spec, ep, std::move(actions));
}

BaselineRun run_mw(const ProblemSpec& spec, const Episode& ep, double eta) {
  validate_episode(spec, ep);
  const int n = ep.horizon();
  const int m = spec.num_constraints();
  const Vec rate = ep.budgets / static_cast<double>(n);

  Vec lambda = Vec::Ones(m);
  Vec remaining = ep.budgets;
  std::vector<Vec> actions(n);
  for (int t = 1; t <= n; ++t) {
    const Vec& c = ep.contexts[t - 1];
    const Vec beff = effective_budget(spec, remaining, t);
    const Vec lam = (t == n) ? Vec::Zero(m) : lambda;
    const OptSolution sol = solve_opt_layer(spec, c, lam, beff);
    actions[t - 1] = sol.x;
    const Vec g = spec.constraints(sol.x, c);
    remaining -= g;
    for (int k = 0; k < m; ++k)
      lambda(k) = clampd(lambda(k) * std::exp(eta * (g(k) - rate(k)) / rate(k)),
                         1e-6, 1e6);
  }
  return finish(spec, ep, std::move(actions));
}

double default_dgd_eta(int horizon) { return 1.0 / std::sqrt(horizon); }

DirectPolicy init_direct_policy(const ProblemSpec& spec, std::uint64_t seed,
                                double bscale, double cscale) {
  DirectPolicy policy;
  policy.net = init_model(ModelVariant::mlp, spec.action_dim(),
                          spec.num_constraints(), spec.context_dim(), seed,
                          bscale, cscale);
  const Vec hi = spec.box_upper();
  policy.action_scale = Vec(spec.action_dim());
  for (int j = 0; j < hi.size(); ++j)
    policy.action_scale(j) = std::isfinite(hi(j)) ? hi(j) : bscale;
  return policy;
}

namespace {

struct PolicyStep {
  Vec x;
  // clamp case per coordinate: 0 interior, 1 lower box, 2 upper box, 3 budget
  std::vector<int> clamp;
};

// Scalar projection of the raw policy output: softplus scale, box clamp,
// then the remaining-budget cap (with reserve).
PolicyStep project_scalar(const ProblemSpec& spec, const DirectPolicy& policy,
                          double raw, const Vec& beff) {
  const double lo = spec.box_lower()(0);
  const double hi = spec.box_upper()(0);
  const double cap = std::isfinite(hi) ? std::min(hi, beff(0)) : beff(0);
  const double u = softplus(raw) * policy.action_scale(0);

  PolicyStep step;
  step.clamp = {0};
  double x = u;
  if (std::isfinite(lo) && u <= lo) {
    x = lo;
    step.clamp[0] = 1;
  } else if (u >= cap) {
    x = cap;
    step.clamp[0] = (std::isfinite(hi) && hi <= beff(0)) ? 2 : 3;
  }
  step.x = Vec::Constant(1, x);
  return step;
}

// Generic projection for evaluation: box clamp, then pull back toward the
// lower anchor along a line until the budget rows hold.
Vec project_generic(const ProblemSpec& spec, const Vec& u, const Vec& c,
                    const Vec& beff) {
  const Vec lo = spec.box_lower(), hi = spec.box_upper();
  Vec x = u;
  for (int j = 0; j < x.size(); ++j) x(j) = clampd(x(j), lo(j), hi(j));

  Vec anchor(x.size());
  for (int j = 0; j < x.size(); ++j)
    anchor(j) = std::isfinite(lo(j)) ? lo(j) : 0.0;

  auto feasible = [&](const Vec& z) {
    const Vec g = spec.constraints(z, c);
    return (g.array() <= beff.array() + 1e-12).all();
  };
  if (feasible(x)) return x;
  double alo = 0.0, ahi = 1.0;
  if (!feasible(anchor))
    throw std::runtime_error("direct policy: anchor violates budget");
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (alo + ahi);
    (feasible(anchor + mid * (x - anchor)) ? alo : ahi) = mid;
  }
  return anchor + alo * (x - anchor);
}

}  // namespace

BaselineRun run_direct_policy(const ProblemSpec& spec, const Episode& ep,
                              const DirectPolicy& policy) {
  validate_episode(spec, ep);
  const int n = ep.horizon();
  const int d = spec.action_dim();
  Vec remaining = ep.budgets;
  std::vector<Vec> actions(n);
  for (int t = 1; t <= n; ++t) {
    const Vec& c = ep.contexts[t - 1];
    const Vec beff = effective_budget(spec, remaining, t);
    const double tbar = static_cast<double>(n - t) / n;
    const Vec raw = model_forward_raw(policy.net, remaining, c, tbar);
    Vec x;
    if (d == 1) {
      x = project_scalar(spec, policy, raw(0), beff).x;
    } else {
      Vec u(d);
      for (int j = 0; j < d; ++j)
        u(j) = softplus(raw(j)) * policy.action_scale(j);
      x = project_generic(spec, u, c, beff);
    }
    actions[t - 1] = x;
    remaining -= spec.constraints(x, c);
  }
  return finish(spec, ep, std::move(actions));
}

TrainLog train_direct_policy(DirectPolicy& policy, const ProblemSpec& spec,
                             const std::vector<Episode>& train,
                             const std::vector<Episode>& val,
                             const TrainConfig& cfg) {
  if (spec.action_dim() != 1 || spec.num_constraints() != 1)
    throw std::invalid_argument(
        "direct policy training supports scalar allocations only");

  // Pathwise gradient through the clamp cases: interior passes the softplus
  // chain, the budget cap passes d(cap)/d(b_t) = 1, box clamps pass nothing.
  auto grad_fn = [&spec, &policy](const ModelParams& net, const Episode& ep,
                                  Vec& grad) {
    DirectPolicy cur{net, policy.action_scale};
    const int n = ep.horizon();
    const int p = net.param_count();
    Vec remaining = ep.budgets;
    Mat db_dtheta = Mat::Zero(1, p);  // d(b_t)/d(theta)
    grad = Vec::Zero(p);
    double loss = 0.0;
    for (int t = 1; t <= n; ++t) {
      const Vec& c = ep.contexts[t - 1];
      const Vec beff = effective_budget(spec, remaining, t);
      const double tbar = static_cast<double>(n - t) / n;
      const Vec raw = model_forward_raw(net, remaining, c, tbar);
      const PolicyStep step = project_scalar(spec, cur, raw(0), beff);
      const ModelGradients mg = model_backward_raw(net, remaining, c, tbar);

      Mat dx_dtheta;  // 1 x p, total derivative
      const double chain = softplus_prime(raw(0)) * policy.action_scale(0);
      switch (step.clamp[0]) {
        case 0:  // interior: x = softplus(raw)*scale
          dx_dtheta = chain * (mg.dtheta.row(0) + mg.db(0, 0) * db_dtheta.row(0));
          break;
        case 3:  // budget cap: x = beff, d(beff)/d(b_t) = 1
          dx_dtheta = db_dtheta.row(0);
          break;
        default:  // box clamp: constant
          dx_dtheta = Mat::Zero(1, p);
      }

      loss += spec.loss(step.x, c);
      const Vec dl = spec.loss_grad_x(step.x, c);
      grad += (dl(0) * dx_dtheta.row(0)).transpose();

      const Mat gx = spec.constraints_grad_x(step.x, c);  // 1 x 1
      db_dtheta -= gx(0, 0) * dx_dtheta;
      remaining -= spec.constraints(step.x, c);
    }
    return loss;
  };
  auto loss_fn = [&spec, &policy](const ModelParams& net, const Episode& ep) {
    DirectPolicy cur{net, policy.action_scale};
    BaselineRun run = run_direct_policy(spec, ep, cur);
    return -run.utility;
  };
  return train_loop(policy.net, train, val, cfg, grad_fn, loss_fn);
}

}  // namespace oobc
