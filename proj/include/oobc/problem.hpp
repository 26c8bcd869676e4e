#pragma once

#include <Eigen/Dense>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace oobc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// One problem instance: contexts c_1..c_N revealed online, budget vector B
// known up front.
struct Episode {
  std::vector<Vec> contexts;
  Vec budgets;
  std::string id;

  int horizon() const { return static_cast<int>(contexts.size()); }
};

struct BudgetState {
  Vec remaining;
  int step = 0;
};

// Function family for one problem class: loss/constraint oracles with first
// and second derivatives, box bounds, and dimensions. All oracles are pure.
class ProblemSpec {
 public:
  virtual ~ProblemSpec() = default;

  virtual int horizon() const = 0;          // N
  virtual int num_constraints() const = 0;  // M
  virtual int action_dim() const = 0;       // d
  virtual int context_dim() const = 0;

  virtual double loss(const Vec& x, const Vec& c) const = 0;
  virtual Vec loss_grad_x(const Vec& x, const Vec& c) const = 0;
  virtual Mat loss_hess_xx(const Vec& x, const Vec& c) const = 0;
  virtual Mat loss_grad_xc(const Vec& x, const Vec& c) const = 0;  // d x dim(c)

  virtual Vec constraints(const Vec& x, const Vec& c) const = 0;        // M
  virtual Mat constraints_grad_x(const Vec& x, const Vec& c) const = 0;  // M x d
  virtual Mat constraint_hess_xx(int m, const Vec& x, const Vec& c) const = 0;
  virtual Mat constraints_grad_c(const Vec& x, const Vec& c) const = 0;  // M x dim(c)
  virtual Mat constraint_grad_xc(int m, const Vec& x, const Vec& c) const = 0;

  // Elementwise bounds, entries may be +-inf.
  virtual Vec box_lower() const = 0;
  virtual Vec box_upper() const = 0;

  virtual bool loss_strongly_convex() const = 0;
  virtual bool constraint_strongly_convex(int m) const { (void)m; return false; }

  // Lower bound on per-step consumption, used to reserve budget for the
  // remaining steps when the box forces a minimum allocation. Zero when the
  // box is open below.
  virtual Vec min_step_consumption() const { return Vec::Zero(num_constraints()); }

  bool in_box(const Vec& x, double tol = 1e-9) const;
};

// Weighted log-fairness: l(x,c) = -c*log(x), g(x) = x, box [1, 40], d = M = 1.
class FairnessFamily : public ProblemSpec {
 public:
  explicit FairnessFamily(int n) : n_(n) {}

  int horizon() const override { return n_; }
  int num_constraints() const override { return 1; }
  int action_dim() const override { return 1; }
  int context_dim() const override { return 1; }

  double loss(const Vec& x, const Vec& c) const override;
  Vec loss_grad_x(const Vec& x, const Vec& c) const override;
  Mat loss_hess_xx(const Vec& x, const Vec& c) const override;
  Mat loss_grad_xc(const Vec& x, const Vec& c) const override;

  Vec constraints(const Vec& x, const Vec& c) const override;
  Mat constraints_grad_x(const Vec& x, const Vec& c) const override;
  Mat constraint_hess_xx(int m, const Vec& x, const Vec& c) const override;
  Mat constraints_grad_c(const Vec& x, const Vec& c) const override;
  Mat constraint_grad_xc(int m, const Vec& x, const Vec& c) const override;

  Vec box_lower() const override { return Vec::Constant(1, x_min_); }
  Vec box_upper() const override { return Vec::Constant(1, x_max_); }
  bool loss_strongly_convex() const override { return true; }
  Vec min_step_consumption() const override { return Vec::Constant(1, x_min_); }

  double x_min() const { return x_min_; }
  double x_max() const { return x_max_; }

 private:
  int n_;
  double x_min_ = 1.0;
  double x_max_ = 40.0;
};

// Convex quadratic family for generic-path exercises:
//   l(x,c) = 0.5 (x - c)' Q (x - c)
//   g_m(x,c) = 0.5 x' P_m x + w_m' x + s_m   (P_m PSD, g >= 0 on positive box)
class QuadraticFamily : public ProblemSpec {
 public:
  QuadraticFamily(int n, Mat q, std::vector<Mat> p, std::vector<Vec> w, Vec s,
                  Vec lo, Vec hi);

  int horizon() const override { return n_; }
  int num_constraints() const override { return static_cast<int>(w_.size()); }
  int action_dim() const override { return static_cast<int>(q_.rows()); }
  int context_dim() const override { return static_cast<int>(q_.rows()); }

  double loss(const Vec& x, const Vec& c) const override;
  Vec loss_grad_x(const Vec& x, const Vec& c) const override;
  Mat loss_hess_xx(const Vec& x, const Vec& c) const override;
  Mat loss_grad_xc(const Vec& x, const Vec& c) const override;

  Vec constraints(const Vec& x, const Vec& c) const override;
  Mat constraints_grad_x(const Vec& x, const Vec& c) const override;
  Mat constraint_hess_xx(int m, const Vec& x, const Vec& c) const override;
  Mat constraints_grad_c(const Vec& x, const Vec& c) const override;
  Mat constraint_grad_xc(int m, const Vec& x, const Vec& c) const override;

  Vec box_lower() const override { return lo_; }
  Vec box_upper() const override { return hi_; }
  bool loss_strongly_convex() const override { return true; }
  Vec min_step_consumption() const override;

 private:
  int n_;
  Mat q_;
  std::vector<Mat> p_;
  std::vector<Vec> w_;
  Vec s_;
  Vec lo_, hi_;
};

void validate_episode(const ProblemSpec& spec, const Episode& ep);

double eval_loss(const ProblemSpec& spec, const Vec& x, const Vec& c);
Vec eval_constraints(const ProblemSpec& spec, const Vec& x, const Vec& c);

// Reported utility is -sum_t l(x_t, c_t); throws if cumulative consumption
// exceeds the budget beyond tolerance on any coordinate.
double total_utility(const ProblemSpec& spec, const Episode& ep,
                     const std::vector<Vec>& actions, double tol = 1e-9);

}  // namespace oobc
