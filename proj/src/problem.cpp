#include "oobc/problem.hpp"

#include <cmath>

namespace oobc {

bool ProblemSpec::in_box(const Vec& x, double tol) const {
  const Vec lo = box_lower();
  const Vec hi = box_upper();
  for (int j = 0; j < x.size(); ++j) {
    if (std::isfinite(lo[j]) && x[j] < lo[j] - tol) return false;
    if (std::isfinite(hi[j]) && x[j] > hi[j] + tol) return false;
  }
  return true;
}

double FairnessFamily::loss(const Vec& x, const Vec& c) const {
  if (x[0] <= 0.0) throw std::domain_error("fairness loss: log argument <= 0");
  return -c[0] * std::log(x[0]);
}

Vec FairnessFamily::loss_grad_x(const Vec& x, const Vec& c) const {
  return Vec::Constant(1, -c[0] / x[0]);
}

Mat FairnessFamily::loss_hess_xx(const Vec& x, const Vec& c) const {
  return Mat::Constant(1, 1, c[0] / (x[0] * x[0]));
}

Mat FairnessFamily::loss_grad_xc(const Vec& x, const Vec& c) const {
  (void)c;
  return Mat::Constant(1, 1, -1.0 / x[0]);
}

Vec FairnessFamily::constraints(const Vec& x, const Vec& c) const {
  (void)c;
  return x;
}

Mat FairnessFamily::constraints_grad_x(const Vec& x, const Vec& c) const {
  (void)x;
  (void)c;
  return Mat::Identity(1, 1);
}

Mat FairnessFamily::constraint_hess_xx(int, const Vec&, const Vec&) const {
  return Mat::Zero(1, 1);
}

Mat FairnessFamily::constraints_grad_c(const Vec&, const Vec&) const {
  return Mat::Zero(1, 1);
}

Mat FairnessFamily::constraint_grad_xc(int, const Vec&, const Vec&) const {
  return Mat::Zero(1, 1);
}

QuadraticFamily::QuadraticFamily(int n, Mat q, std::vector<Mat> p,
                                 std::vector<Vec> w, Vec s, Vec lo, Vec hi)
    : n_(n),
      q_(std::move(q)),
      p_(std::move(p)),
      w_(std::move(w)),
      s_(std::move(s)),
      lo_(std::move(lo)),
      hi_(std::move(hi)) {
  if (p_.size() != w_.size() || static_cast<int>(w_.size()) != s_.size())
    throw std::invalid_argument("quadratic family: inconsistent constraint count");
}

double QuadraticFamily::loss(const Vec& x, const Vec& c) const {
  const Vec r = x - c;
  return 0.5 * r.dot(q_ * r);
}

Vec QuadraticFamily::loss_grad_x(const Vec& x, const Vec& c) const {
  return q_ * (x - c);
}

Mat QuadraticFamily::loss_hess_xx(const Vec&, const Vec&) const { return q_; }

Mat QuadraticFamily::loss_grad_xc(const Vec&, const Vec&) const { return -q_; }

Vec QuadraticFamily::constraints(const Vec& x, const Vec&) const {
  Vec g(num_constraints());
  for (int m = 0; m < num_constraints(); ++m)
    g[m] = 0.5 * x.dot(p_[m] * x) + w_[m].dot(x) + s_[m];
  return g;
}

Mat QuadraticFamily::constraints_grad_x(const Vec& x, const Vec&) const {
  Mat g(num_constraints(), action_dim());
  for (int m = 0; m < num_constraints(); ++m)
    g.row(m) = (p_[m] * x + w_[m]).transpose();
  return g;
}

Mat QuadraticFamily::constraint_hess_xx(int m, const Vec&, const Vec&) const {
  return p_[m];
}

Mat QuadraticFamily::constraints_grad_c(const Vec&, const Vec&) const {
  return Mat::Zero(num_constraints(), context_dim());
}

Mat QuadraticFamily::constraint_grad_xc(int, const Vec&, const Vec&) const {
  return Mat::Zero(action_dim(), context_dim());
}

Vec QuadraticFamily::min_step_consumption() const {
  // Valid when every g_m is nondecreasing on the box (w_m >= 0, P_m PSD with
  // nonnegative entries) and the lower corner is finite; otherwise no reserve.
  for (int j = 0; j < lo_.size(); ++j)
    if (!std::isfinite(lo_[j])) return Vec::Zero(num_constraints());
  return constraints(lo_, Vec::Zero(context_dim()));
}

void validate_episode(const ProblemSpec& spec, const Episode& ep) {
  if (ep.contexts.empty()) throw std::invalid_argument("episode: empty context sequence");
  if (ep.budgets.size() != spec.num_constraints())
    throw std::invalid_argument("episode: budget dimension mismatch");
  if ((ep.budgets.array() <= 0.0).any())
    throw std::invalid_argument("episode: budgets must be strictly positive");
  for (const Vec& c : ep.contexts)
    if (c.size() != spec.context_dim())
      throw std::invalid_argument("episode: context dimension mismatch");
}

double eval_loss(const ProblemSpec& spec, const Vec& x, const Vec& c) {
  if (!spec.in_box(x)) throw std::domain_error("eval_loss: action outside box");
  return spec.loss(x, c);
}

Vec eval_constraints(const ProblemSpec& spec, const Vec& x, const Vec& c) {
  if (!spec.in_box(x)) throw std::domain_error("eval_constraints: action outside box");
  return spec.constraints(x, c);
}

double total_utility(const ProblemSpec& spec, const Episode& ep,
                     const std::vector<Vec>& actions, double tol) {
  if (actions.size() != ep.contexts.size())
    throw std::invalid_argument("total_utility: action count != N");
  double loss_sum = 0.0;
  Vec used = Vec::Zero(spec.num_constraints());
  for (size_t t = 0; t < actions.size(); ++t) {
    loss_sum += eval_loss(spec, actions[t], ep.contexts[t]);
    used += spec.constraints(actions[t], ep.contexts[t]);
  }
  for (int m = 0; m < used.size(); ++m)
    if (used[m] > ep.budgets[m] + tol)
      throw std::runtime_error("total_utility: budget exceeded on constraint " +
                               std::to_string(m));
  return -loss_sum;
}

}  // namespace oobc
