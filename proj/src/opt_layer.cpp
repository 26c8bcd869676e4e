#include "oobc/opt_layer.hpp"

#include <Eigen/SVD>
#include <cmath>

namespace oobc {
namespace {

constexpr double kActiveTol = 1e-7;  // scale-relative activity threshold
constexpr double kPinvCutoff = 1e-10;

// Joint constraint indexing: resource rows first, then finite lower bounds,
// then finite upper bounds.
struct BoxLayout {
  std::vector<int> lo;  // coordinates with finite lower bound
  std::vector<int> hi;

  static BoxLayout of(const ProblemSpec& spec) {
    BoxLayout l;
    const Vec blo = spec.box_lower();
    const Vec bhi = spec.box_upper();
    for (int j = 0; j < blo.size(); ++j)
      if (std::isfinite(blo[j])) l.lo.push_back(j);
    for (int j = 0; j < bhi.size(); ++j)
      if (std::isfinite(bhi[j])) l.hi.push_back(j);
    return l;
  }
};

double active_threshold(double scale) { return kActiveTol * std::max(1.0, std::abs(scale)); }

std::vector<int> detect_active_set(const ProblemSpec& spec, const Vec& x,
                                   const Vec& c, const Vec& b) {
  std::vector<int> active;
  const Vec g = spec.constraints(x, c);
  for (int m = 0; m < g.size(); ++m)
    if (b[m] - g[m] <= active_threshold(b[m])) active.push_back(m);
  const BoxLayout layout = BoxLayout::of(spec);
  const Vec lo = spec.box_lower();
  const Vec hi = spec.box_upper();
  int k = static_cast<int>(g.size());
  for (int j : layout.lo) {
    if (x[j] - lo[j] <= active_threshold(lo[j])) active.push_back(k);
    ++k;
  }
  for (int j : layout.hi) {
    if (hi[j] - x[j] <= active_threshold(hi[j])) active.push_back(k);
    ++k;
  }
  return active;
}

double kkt_residual_of(const ProblemSpec& spec, const OptSolution& sol,
                       const Vec& c, const Vec& lambda, const Vec& b) {
  Vec stat = spec.loss_grad_x(sol.x, c);
  const Mat gx = spec.constraints_grad_x(sol.x, c);
  const Vec g = spec.constraints(sol.x, c);
  for (int m = 0; m < g.size(); ++m)
    stat += (lambda[m] + sol.mu[m]) * gx.row(m).transpose();
  stat -= sol.mu_lo;
  stat += sol.mu_hi;
  double res = stat.lpNorm<Eigen::Infinity>();
  for (int m = 0; m < g.size(); ++m)
    res = std::max(res, std::abs(sol.mu[m] * (g[m] - b[m])));
  const Vec lo = spec.box_lower();
  const Vec hi = spec.box_upper();
  for (int j = 0; j < sol.x.size(); ++j) {
    if (sol.mu_lo[j] != 0.0) res = std::max(res, std::abs(sol.mu_lo[j] * (lo[j] - sol.x[j])));
    if (sol.mu_hi[j] != 0.0) res = std::max(res, std::abs(sol.mu_hi[j] * (sol.x[j] - hi[j])));
  }
  return res;
}

OptSolution solve_fairness_closed_form(const FairnessFamily& fam, const Vec& c,
                                       const Vec& lambda, const Vec& b) {
  const double xmin = fam.x_min();
  const double xmax = fam.x_max();
  const double cw = c[0];
  const double lam = lambda[0];
  const double budget = b[0];
  if (budget < xmin - 1e-9)
    throw std::runtime_error("opt layer: infeasible, remaining budget below x_min");
  const double ub = std::min(xmax, budget);

  double x;
  if (lam > 0.0)
    x = std::clamp(cw / lam, xmin, ub);
  else
    x = ub;  // lambda = 0: free resource, loss nonincreasing in x

  OptSolution sol;
  sol.x = Vec::Constant(1, x);
  sol.mu = Vec::Zero(1);
  sol.mu_lo = Vec::Zero(1);
  sol.mu_hi = Vec::Zero(1);

  const double price = cw / x - lam;  // residual of stationarity without duals
  const double tol = 1e-12 * std::max(1.0, ub);
  if (x >= ub - tol && price > 0.0) {
    if (budget <= xmax) sol.mu[0] = price;  // budget clamp
    else sol.mu_hi[0] = price;              // box clamp
  } else if (x <= xmin + tol && price < 0.0) {
    sol.mu_lo[0] = -price;
  }

  sol.active_set = detect_active_set(fam, sol.x, c, b);
  sol.kkt_residual = kkt_residual_of(fam, sol, c, lambda, b);
  return sol;
}

struct PinvResult {
  Mat inv;
  bool exact;
};

PinvResult robust_inverse(const Mat& a) {
  Eigen::JacobiSVD<Mat> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec& sv = svd.singularValues();
  const double cutoff = kPinvCutoff * (sv.size() > 0 ? sv[0] : 0.0);
  bool exact = sv.size() > 0 && sv[sv.size() - 1] > cutoff && sv[0] > 0.0;
  Vec inv_sv(sv.size());
  for (int i = 0; i < sv.size(); ++i) inv_sv[i] = sv[i] > cutoff ? 1.0 / sv[i] : 0.0;
  return {svd.matrixV() * inv_sv.asDiagonal() * svd.matrixU().transpose(), exact};
}

}  // namespace

Vec strictly_feasible_start(const ProblemSpec& spec, const Vec& c, const Vec& b) {
  const Vec lo = spec.box_lower();
  const Vec hi = spec.box_upper();
  const int d = spec.action_dim();
  Vec x(d);
  for (int j = 0; j < d; ++j) {
    const bool lf = std::isfinite(lo[j]), hf = std::isfinite(hi[j]);
    if (lf && hf) x[j] = 0.5 * (lo[j] + hi[j]);
    else if (lf) x[j] = lo[j] + 1.0;
    else if (hf) x[j] = hi[j] - 1.0;
    else x[j] = 0.0;
  }
  auto strictly_ok = [&](const Vec& p) {
    const Vec g = spec.constraints(p, c);
    for (int m = 0; m < g.size(); ++m)
      if (g[m] >= b[m] - 1e-12 * std::max(1.0, std::abs(b[m]))) return false;
    for (int j = 0; j < d; ++j) {
      if (std::isfinite(lo[j]) && p[j] <= lo[j]) return false;
      if (std::isfinite(hi[j]) && p[j] >= hi[j]) return false;
    }
    return true;
  };
  for (int k = 0; k < 200; ++k) {
    if (strictly_ok(x)) return x;
    for (int j = 0; j < d; ++j) {
      if (std::isfinite(lo[j])) {
        const double anchor = lo[j] + 1e-9 * std::max(1.0, std::abs(lo[j]));
        x[j] = anchor + 0.5 * (x[j] - anchor);
      } else {
        x[j] -= std::pow(2.0, k / 4);  // open below: walk down
      }
    }
  }
  throw std::runtime_error("opt layer: no strictly feasible point found");
}

BarrierResult solve_barrier(const ConvexProgram& prog, const Vec& x0) {
  const int d = prog.dim;
  const int nc = static_cast<int>(prog.constraints.size());
  Vec x = x0;

  auto cons_values = [&](const Vec& p) {
    Vec r(nc);
    for (int i = 0; i < nc; ++i) r[i] = prog.constraints[i].value(p);
    return r;
  };
  auto feasible = [&](const Vec& p) { return (cons_values(p).array() < 0.0).all(); };
  if (!feasible(x)) throw std::runtime_error("barrier: start is not strictly feasible");

  auto barrier_obj = [&](const Vec& p, double t) {
    const Vec r = cons_values(p);
    if ((r.array() >= 0.0).any()) return kInf;
    double v = t * prog.objective(p);
    for (int i = 0; i < nc; ++i) v -= std::log(-r[i]);
    return v;
  };

  double t = 1.0;
  for (int stage = 0; stage < 100; ++stage) {
    // Newton on the barrier objective at this t.
    for (int it = 0; it < 100; ++it) {
      Vec grad = t * prog.grad(x);
      Mat hess = t * prog.hess(x);
      const Vec r = cons_values(x);
      for (int i = 0; i < nc; ++i) {
        const Vec gi = prog.constraints[i].grad(x);
        const double inv = -1.0 / r[i];
        grad += inv * gi;
        hess += (inv * inv) * (gi * gi.transpose()) + inv * prog.constraints[i].hess(x);
      }
      Eigen::LDLT<Mat> ldlt(hess);
      Vec step = -ldlt.solve(grad);
      if (ldlt.info() != Eigen::Success || !step.allFinite()) {
        Mat reg = hess + 1e-10 * std::max(1.0, hess.norm()) * Mat::Identity(d, d);
        step = -reg.ldlt().solve(grad);
      }
      const double decrement = -grad.dot(step);
      if (!(decrement > 1e-16)) break;
      const double f0 = barrier_obj(x, t);
      double alpha = 1.0;
      Vec xn = x + step;
      for (int ls = 0; ls < 60; ++ls) {
        if (barrier_obj(xn, t) <= f0 - 1e-4 * alpha * decrement) break;
        alpha *= 0.5;
        xn = x + alpha * step;
      }
      x = xn;
      if (decrement < 1e-14) break;
    }
    if (static_cast<double>(nc) / t < 1e-12) break;
    t *= 10.0;
  }

  BarrierResult res;
  res.x = x;
  res.duals = Vec(nc);
  {
    const Vec r = cons_values(x);
    for (int i = 0; i < nc; ++i) res.duals[i] = std::max(0.0, -1.0 / (t * r[i]));
  }

  // Active-set Newton polish: drives stationarity and active-constraint
  // equality to machine precision so the returned duals satisfy
  // complementary slackness exactly.
  {
    const Vec r = cons_values(x);
    std::vector<int> act;
    for (int i = 0; i < nc; ++i)
      if (res.duals[i] > -r[i]) act.push_back(i);
    const int na = static_cast<int>(act.size());
    if (na == 0) res.duals.setZero();
    if (na <= d) {
      Vec z(d + na);
      z.head(d) = x;
      for (int i = 0; i < na; ++i) z[d + i] = res.duals[act[i]];
      auto eval_F = [&](const Vec& zz) {
        Vec F(d + na);
        const Vec px = zz.head(d);
        Vec stat = prog.grad(px);
        for (int i = 0; i < na; ++i)
          stat += zz[d + i] * prog.constraints[act[i]].grad(px);
        F.head(d) = stat;
        for (int i = 0; i < na; ++i) F[d + i] = prog.constraints[act[i]].value(px);
        return F;
      };
      Vec F = eval_F(z);
      bool ok = true;
      for (int it = 0; it < 40 && F.lpNorm<Eigen::Infinity>() > 1e-14; ++it) {
        const Vec px = z.head(d);
        Mat J = Mat::Zero(d + na, d + na);
        Mat hl = prog.hess(px);
        for (int i = 0; i < na; ++i) hl += z[d + i] * prog.constraints[act[i]].hess(px);
        J.topLeftCorner(d, d) = hl;
        for (int i = 0; i < na; ++i) {
          const Vec gi = prog.constraints[act[i]].grad(px);
          J.block(0, d + i, d, 1) = gi;
          J.block(d + i, 0, 1, d) = gi.transpose();
        }
        Vec step = J.fullPivLu().solve(-F);
        if (!step.allFinite()) { ok = false; break; }
        double alpha = 1.0;
        const double f0 = F.norm();
        Vec zn = z + step;
        Vec Fn = eval_F(zn);
        for (int ls = 0; ls < 30 && (!Fn.allFinite() || Fn.norm() > f0); ++ls) {
          alpha *= 0.5;
          zn = z + alpha * step;
          Fn = eval_F(zn);
        }
        if (!Fn.allFinite() || Fn.norm() >= f0) break;
        z = zn;
        F = Fn;
      }
      if (ok && F.allFinite()) {
        const Vec px = z.head(d);
        const Vec rp = cons_values(px);
        bool valid = (rp.array() <= 1e-9).all();
        for (int i = 0; i < na; ++i)
          if (z[d + i] < -1e-9) valid = false;
        if (valid && F.lpNorm<Eigen::Infinity>() <= 1e-10) {
          res.x = px;
          res.duals.setZero();
          for (int i = 0; i < na; ++i) res.duals[act[i]] = std::max(0.0, z[d + i]);
        }
      }
    }
  }

  // Final residual: stationarity plus complementary slackness.
  {
    Vec stat = prog.grad(res.x);
    const Vec r = cons_values(res.x);
    double cs = 0.0;
    for (int i = 0; i < nc; ++i) {
      stat += res.duals[i] * prog.constraints[i].grad(res.x);
      cs = std::max(cs, std::abs(res.duals[i] * r[i]));
    }
    res.residual = std::max(stat.lpNorm<Eigen::Infinity>(), cs);
  }
  return res;
}

OptSolution solve_opt_layer(const ProblemSpec& spec, const Vec& c,
                            const Vec& lambda, const Vec& b) {
  if (lambda.size() != spec.num_constraints() || b.size() != spec.num_constraints())
    throw std::invalid_argument("opt layer: multiplier/budget dimension mismatch");
  if ((lambda.array() < 0.0).any())
    throw std::invalid_argument("opt layer: lambda must be nonnegative");

  if (const auto* fam = dynamic_cast<const FairnessFamily*>(&spec))
    return solve_fairness_closed_form(*fam, c, lambda, b);

  const int d = spec.action_dim();
  const int m = spec.num_constraints();
  const BoxLayout layout = BoxLayout::of(spec);
  const Vec lo = spec.box_lower();
  const Vec hi = spec.box_upper();

  ConvexProgram prog;
  prog.dim = d;
  prog.objective = [&](const Vec& x) {
    return spec.loss(x, c) + lambda.dot(spec.constraints(x, c));
  };
  prog.grad = [&](const Vec& x) {
    Vec g = spec.loss_grad_x(x, c);
    const Mat gx = spec.constraints_grad_x(x, c);
    for (int i = 0; i < m; ++i) g += lambda[i] * gx.row(i).transpose();
    return g;
  };
  prog.hess = [&](const Vec& x) {
    Mat h = spec.loss_hess_xx(x, c);
    for (int i = 0; i < m; ++i)
      if (lambda[i] != 0.0) h += lambda[i] * spec.constraint_hess_xx(i, x, c);
    return h;
  };
  for (int i = 0; i < m; ++i) {
    prog.constraints.push_back(ConvexConstraint{
        [&spec, &c, &b, i](const Vec& x) { return spec.constraints(x, c)[i] - b[i]; },
        [&spec, &c, i](const Vec& x) {
          return Vec(spec.constraints_grad_x(x, c).row(i).transpose());
        },
        [&spec, &c, i](const Vec& x) { return spec.constraint_hess_xx(i, x, c); }});
  }
  for (int j : layout.lo) {
    prog.constraints.push_back(ConvexConstraint{
        [&lo, j](const Vec& x) { return lo[j] - x[j]; },
        [d, j](const Vec&) { Vec g = Vec::Zero(d); g[j] = -1.0; return g; },
        [d](const Vec&) { return Mat::Zero(d, d); }});
  }
  for (int j : layout.hi) {
    prog.constraints.push_back(ConvexConstraint{
        [&hi, j](const Vec& x) { return x[j] - hi[j]; },
        [d, j](const Vec&) { Vec g = Vec::Zero(d); g[j] = 1.0; return g; },
        [d](const Vec&) { return Mat::Zero(d, d); }});
  }

  const BarrierResult br = solve_barrier(prog, strictly_feasible_start(spec, c, b));

  OptSolution sol;
  sol.x = br.x;
  sol.mu = br.duals.head(m);
  sol.mu_lo = Vec::Zero(d);
  sol.mu_hi = Vec::Zero(d);
  int k = m;
  for (int j : layout.lo) sol.mu_lo[j] = br.duals[k++];
  for (int j : layout.hi) sol.mu_hi[j] = br.duals[k++];
  sol.active_set = detect_active_set(spec, sol.x, c, b);
  sol.kkt_residual = kkt_residual_of(spec, sol, c, lambda, b);
  return sol;
}

KktGradients differentiate_kkt(const ProblemSpec& spec, const OptSolution& sol,
                               const Vec& c, const Vec& lambda, const Vec& b) {
  const int d = spec.action_dim();
  const int m = spec.num_constraints();
  const int dimc = spec.context_dim();
  const Vec& x = sol.x;
  const BoxLayout layout = BoxLayout::of(spec);
  const Vec lo = spec.box_lower();
  const Vec hi = spec.box_upper();

  // Rows of the differentiated KKT system: all resource constraints, plus
  // whichever box constraints are active. Box rows have fixed "budgets", so
  // they shape the system but contribute zero columns to d/dlambda and d/db.
  struct Row {
    Vec grad;
    double mu;
    double slack;
    bool box;
  };
  std::vector<Row> rows;
  const Vec g = spec.constraints(x, c);
  const Mat gx = spec.constraints_grad_x(x, c);
  for (int i = 0; i < m; ++i)
    rows.push_back({gx.row(i).transpose(), sol.mu[i], g[i] - b[i], false});
  std::vector<bool> joint_active(m + layout.lo.size() + layout.hi.size(), false);
  for (int idx : sol.active_set) joint_active[idx] = true;
  int k = m;
  for (int j : layout.lo) {
    if (joint_active[k]) {
      Vec gr = Vec::Zero(d);
      gr[j] = -1.0;
      rows.push_back({gr, sol.mu_lo[j], lo[j] - x[j], true});
    }
    ++k;
  }
  for (int j : layout.hi) {
    if (joint_active[k]) {
      Vec gr = Vec::Zero(d);
      gr[j] = 1.0;
      rows.push_back({gr, sol.mu_hi[j], x[j] - hi[j], true});
    }
    ++k;
  }
  const int nr = static_cast<int>(rows.size());

  Mat d11 = spec.loss_hess_xx(x, c);
  for (int i = 0; i < m; ++i) {
    const double w = lambda[i] + sol.mu[i];
    if (w != 0.0) d11 += w * spec.constraint_hess_xx(i, x, c);
  }
  Mat d12(d, nr), d21(nr, d);
  Vec slack(nr);
  for (int i = 0; i < nr; ++i) {
    d12.col(i) = rows[i].grad;
    d21.row(i) = rows[i].mu * rows[i].grad.transpose();
    slack[i] = rows[i].slack;
  }
  const Mat d22 = slack.asDiagonal();

  const PinvResult inv11 = robust_inverse(d11);
  const Mat sc = d22 - d21 * inv11.inv * d12;
  const PinvResult inv_sc = robust_inverse(sc);
  const bool pinv_used = !inv11.exact || !inv_sc.exact;

  // Block elimination for a general right-hand side: the stationarity rows
  // carry rhs1, the complementary-slackness rows carry rhs2.
  auto dx_for = [&](const Mat& rhs1, const Mat& rhs2) {
    const Mat dmu = inv_sc.inv * (-rhs2 + d21 * inv11.inv * rhs1);
    return Mat(-inv11.inv * (rhs1 + d12 * dmu));
  };

  KktGradients out;
  {
    Mat rhs1(d, m);
    for (int i = 0; i < m; ++i) rhs1.col(i) = rows[i].grad;
    out.dx_dlambda = dx_for(rhs1, Mat::Zero(nr, m));
  }
  {
    Mat rhs2 = Mat::Zero(nr, m);
    for (int i = 0; i < m; ++i) rhs2(i, i) = -rows[i].mu;
    out.dx_db = dx_for(Mat::Zero(d, m), rhs2);
  }
  {
    Mat rhs1 = spec.loss_grad_xc(x, c);
    for (int i = 0; i < m; ++i) {
      const double w = lambda[i] + sol.mu[i];
      if (w != 0.0) rhs1 += w * spec.constraint_grad_xc(i, x, c);
    }
    Mat rhs2 = Mat::Zero(nr, dimc);
    const Mat gc = spec.constraints_grad_c(x, c);
    for (int i = 0; i < m; ++i) rhs2.row(i) = rows[i].mu * gc.row(i);
    out.dx_dc = dx_for(rhs1, rhs2);
  }

  if (!out.dx_dlambda.allFinite() || !out.dx_db.allFinite() || !out.dx_dc.allFinite())
    throw std::runtime_error("differentiate_kkt: non-finite gradient");

  out.exact = !pinv_used && check_kkt_conditions(spec, sol, c, b).exact();
  return out;
}

KktDiagnostic check_kkt_conditions(const ProblemSpec& spec,
                                   const OptSolution& sol, const Vec& c,
                                   const Vec& b) {
  (void)b;
  const int d = spec.action_dim();
  const int m = spec.num_constraints();
  const BoxLayout layout = BoxLayout::of(spec);
  const Mat gx = spec.constraints_grad_x(sol.x, c);

  KktDiagnostic diag;
  diag.active_count = static_cast<int>(sol.active_set.size());
  diag.cardinality_ok = diag.active_count <= d;

  diag.nonzero_active_duals = true;
  Mat stacked(diag.active_count, d);
  int row = 0;
  for (int idx : sol.active_set) {
    double mu;
    Vec grad;
    if (idx < m) {
      mu = sol.mu[idx];
      grad = gx.row(idx).transpose();
    } else if (idx < m + static_cast<int>(layout.lo.size())) {
      const int j = layout.lo[idx - m];
      mu = sol.mu_lo[j];
      grad = Vec::Zero(d);
      grad[j] = -1.0;
    } else {
      const int j = layout.hi[idx - m - static_cast<int>(layout.lo.size())];
      mu = sol.mu_hi[j];
      grad = Vec::Zero(d);
      grad[j] = 1.0;
    }
    if (std::abs(mu) <= 1e-8) diag.nonzero_active_duals = false;
    stacked.row(row++) = grad.transpose();
  }

  if (diag.active_count == 0) {
    diag.gradients_independent = true;
    diag.min_singular_value = kInf;
  } else {
    Eigen::JacobiSVD<Mat> svd(stacked);
    diag.min_singular_value = svd.singularValues().minCoeff();
    diag.gradients_independent = diag.min_singular_value > 1e-8;
  }
  return diag;
}

}  // namespace oobc
