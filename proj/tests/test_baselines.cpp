#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "oobc/baselines.hpp"
#include "oobc/dataset.hpp"

using namespace oobc;

namespace {

Vec v1(double a) { return Vec::Constant(1, a); }

Episode make_episode(std::vector<double> cs, double budget) {
  Episode ep;
  for (double c : cs) ep.contexts.push_back(v1(c));
  ep.budgets = v1(budget);
  ep.id = "test";
  return ep;
}

// Same objective and constraints as FairnessFamily, but a distinct type so
// the offline optimum takes the stacked-barrier route instead of
// water-filling.
class LogFamilyGeneric : public ProblemSpec {
 public:
  explicit LogFamilyGeneric(int n) : n_(n) {}
  int horizon() const override { return n_; }
  int num_constraints() const override { return 1; }
  int action_dim() const override { return 1; }
  int context_dim() const override { return 1; }
  double loss(const Vec& x, const Vec& c) const override {
    return -c(0) * std::log(x(0));
  }
  Vec loss_grad_x(const Vec& x, const Vec& c) const override {
    return v1(-c(0) / x(0));
  }
  Mat loss_hess_xx(const Vec& x, const Vec& c) const override {
    return Mat::Constant(1, 1, c(0) / (x(0) * x(0)));
  }
  Mat loss_grad_xc(const Vec& x, const Vec&) const override {
    return Mat::Constant(1, 1, -1.0 / x(0));
  }
  Vec constraints(const Vec& x, const Vec&) const override { return x; }
  Mat constraints_grad_x(const Vec&, const Vec&) const override {
    return Mat::Identity(1, 1);
  }
  Mat constraint_hess_xx(int, const Vec&, const Vec&) const override {
    return Mat::Zero(1, 1);
  }
  Mat constraints_grad_c(const Vec&, const Vec&) const override {
    return Mat::Zero(1, 1);
  }
  Mat constraint_grad_xc(int, const Vec&, const Vec&) const override {
    return Mat::Zero(1, 1);
  }
  Vec box_lower() const override { return v1(1.0); }
  Vec box_upper() const override { return v1(40.0); }
  bool loss_strongly_convex() const override { return true; }
  Vec min_step_consumption() const override { return v1(1.0); }

 private:
  int n_;
};

}  // namespace

TEST_CASE("water-filling optimum on a hand-solved episode") {
  FairnessFamily fam(3);
  const BaselineRun run = solve_offline_opt(fam, make_episode({1.0, 1.0, 2.0}, 8.0));
  CHECK(run.actions[0](0) == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(run.actions[1](0) == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(run.actions[2](0) == doctest::Approx(4.0).epsilon(1e-8));
  CHECK(run.utility == doctest::Approx(2 * std::log(2.0) + 2 * std::log(4.0)).epsilon(1e-8));
}

TEST_CASE("water-filling with slack budget maxes out every step") {
  FairnessFamily fam(3);
  const BaselineRun run = solve_offline_opt(fam, make_episode({1.0, 2.0, 3.0}, 200.0));
  for (const auto& x : run.actions) CHECK(x(0) == doctest::Approx(40.0));
}

TEST_CASE("stacked barrier route agrees with water-filling") {
  FairnessFamily fair(3);
  LogFamilyGeneric generic(3);
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> uc(0.3, 6.0), ub(4.0, 90.0);
  for (int i = 0; i < 10; ++i) {
    Episode ep = make_episode({uc(rng), uc(rng), uc(rng)}, ub(rng));
    const BaselineRun a = solve_offline_opt(fair, ep);
    const BaselineRun b = solve_offline_opt(generic, ep);
    CHECK(a.utility == doctest::Approx(b.utility).epsilon(1e-6));
  }
}

TEST_CASE("stacked barrier on a quadratic instance") {
  // min 0.5(x1-1)^2 + 0.5(x2-2)^2  s.t. x1 + x2 <= 2  ->  (0.5, 1.5)
  QuadraticFamily fam(2, Mat::Identity(1, 1), {Mat::Zero(1, 1)}, {Vec::Ones(1)},
                      Vec::Zero(1), v1(-kInf), v1(kInf));
  const BaselineRun run = solve_offline_opt(fam, make_episode({1.0, 2.0}, 2.0));
  CHECK(run.actions[0](0) == doctest::Approx(0.5).epsilon(1e-7));
  CHECK(run.actions[1](0) == doctest::Approx(1.5).epsilon(1e-7));
}

TEST_CASE("equal split clamps the per-step share to the box") {
  FairnessFamily fam(4);
  const BaselineRun run = run_equal(fam, make_episode({1.0, 2.0, 3.0, 4.0}, 8.0));
  for (const auto& x : run.actions) CHECK(x(0) == doctest::Approx(2.0));
  FairnessFamily fam3(3);
  const BaselineRun hi = run_equal(fam3, make_episode({1.0, 1.0, 1.0}, 300.0));
  for (const auto& x : hi.actions) CHECK(x(0) == doctest::Approx(40.0));
}

TEST_CASE("long-term multiplier calibration") {
  FairnessFamily fam(2);
  {
    // consumption(lambda) = 2*clamp(2/lambda, 1, 40); equals budget 2 at 2
    const Vec lam = calibrate_avg_lt(fam, {make_episode({2.0, 2.0}, 2.0)});
    CHECK(lam(0) == doctest::Approx(2.0).epsilon(1e-3));
  }
  {
    // slack on average -> zero pressure
    const Vec lam = calibrate_avg_lt(fam, {make_episode({2.0, 2.0}, 200.0)});
    CHECK(lam(0) == 0.0);
  }
  {
    // calibrated multiplier decreases as budgets grow
    const Vec tight = calibrate_avg_lt(fam, {make_episode({3.0, 5.0}, 4.0)});
    const Vec loose = calibrate_avg_lt(fam, {make_episode({3.0, 5.0}, 20.0)});
    CHECK(tight(0) > loose(0));
  }
}

TEST_CASE("constant-multiplier baseline leaves slack unspent") {
  FairnessFamily fam(3);
  const BaselineRun run = run_avg_lt(fam, make_episode({1.0, 1.0, 2.0}, 20.0), v1(0.5));
  CHECK(run.actions[0](0) == doctest::Approx(2.0));
  CHECK(run.actions[1](0) == doctest::Approx(2.0));
  CHECK(run.actions[2](0) == doctest::Approx(4.0));  // no last-step dump
}

TEST_CASE("dual gradient descent walkthrough") {
  // eta = 0.2, B = 6, N = 3, rate = 2. t1: lambda=0 -> x=min(40, b_eff=4)=4,
  // lambda2 = 0.2*(4-2) = 0.4; t2: b_eff = 1 -> x=1; t3 (last-step fix,
  // lambda=0): x = b_eff = 1.
  FairnessFamily fam(3);
  const BaselineRun run = run_dgd(fam, make_episode({2.0, 2.0, 2.0}, 6.0), 0.2);
  CHECK(run.actions[0](0) == doctest::Approx(4.0));
  CHECK(run.actions[1](0) == doctest::Approx(1.0));
  CHECK(run.actions[2](0) == doctest::Approx(1.0));
}

TEST_CASE("multiplicative-weights walkthrough") {
  // lambda1 = 1: x1 = clamp(3/1, 1, b_eff=3) = 3; last step lambda = 0:
  // x2 = b_eff = 1.
  FairnessFamily fam(2);
  const BaselineRun run = run_mw(fam, make_episode({3.0, 3.0}, 4.0), 0.5);
  CHECK(run.actions[0](0) == doctest::Approx(3.0));
  CHECK(run.actions[1](0) == doctest::Approx(1.0));
}

TEST_CASE("offline optimum dominates every online baseline") {
  FairnessFamily fam(5);
  DatasetSpec dspec;
  dspec.horizon = 5;
  dspec.train_count = 30;
  dspec.seed = 7;
  const auto episodes = generate_dataset(dspec).train;
  const Vec lam_p = calibrate_avg_lt(fam, episodes);
  const double eta = default_dgd_eta(5);
  for (const auto& ep : episodes) {
    const double opt = solve_offline_opt(fam, ep).utility;
    CHECK(run_equal(fam, ep).utility <= opt + 1e-8);
    CHECK(run_avg_lt(fam, ep, lam_p).utility <= opt + 1e-8);
    CHECK(run_dgd(fam, ep, eta).utility <= opt + 1e-8);
    CHECK(run_mw(fam, ep, eta).utility <= opt + 1e-8);
  }
}

TEST_CASE("direct policy stays feasible and trains deterministically") {
  FairnessFamily fam(4);
  DatasetSpec dspec;
  dspec.horizon = 4;
  dspec.train_count = 12;
  dspec.val_count = 4;
  dspec.seed = 3;
  const DatasetBundle data = generate_dataset(dspec);

  DirectPolicy policy = init_direct_policy(fam, 15, 4 * fam.x_max(), 5.0);
  for (const auto& ep : data.train) CHECK_NOTHROW(run_direct_policy(fam, ep, policy));

  TrainConfig cfg;
  cfg.schedule = {{5, 5e-3}};
  cfg.batch_size = 4;
  cfg.seed = 1;
  DirectPolicy twin = policy;
  const TrainLog la = train_direct_policy(policy, fam, data.train, data.val, cfg);
  const TrainLog lb = train_direct_policy(twin, fam, data.train, data.val, cfg);
  CHECK((policy.net.theta - twin.net.theta).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK(la.train_loss.back() <= la.train_loss.front() + 1e-9);
  for (const auto& ep : data.train) CHECK_NOTHROW(run_direct_policy(fam, ep, policy));
}

TEST_CASE("direct-policy pathwise gradient matches finite differences") {
  FairnessFamily fam(3);
  DatasetSpec dspec;
  dspec.horizon = 3;
  dspec.train_count = 6;
  dspec.seed = 21;
  const auto eps = generate_dataset(dspec).train;
  DirectPolicy policy = init_direct_policy(fam, 8, 3 * fam.x_max(), 5.0);

  // one plain SGD step equals the analytic gradient direction; verify the
  // underlying gradient numerically through the training loss
  const double h = 1e-6;
  for (const auto& ep : eps) {
    auto loss_at = [&](const DirectPolicy& pol) {
      return -run_direct_policy(fam, ep, pol).utility;
    };
    // recover analytic gradient via a zero-lr hook: use train loop internals
    // indirectly by finite-differencing only a few coordinates
    DirectPolicy probe = policy;
    TrainConfig cfg;
    cfg.optimizer = TrainConfig::Optimizer::sgd;
    cfg.schedule = {{1, 1.0}};
    cfg.batch_size = 1;
    cfg.clip_norm = 0.0;  // disabled
    cfg.keep_best_validation = false;
    train_direct_policy(probe, fam, {ep}, {}, cfg);
    const Vec analytic = policy.net.theta - probe.net.theta;  // lr * grad

    for (int i = 0; i < 8; ++i) {
      const int idx = static_cast<int>((i * 37) % policy.net.theta.size());
      DirectPolicy up = policy, dn = policy;
      up.net.theta(idx) += h;
      dn.net.theta(idx) -= h;
      const double fd = (loss_at(up) - loss_at(dn)) / (2 * h);
      CHECK(std::abs(fd - analytic(idx)) < 1e-4 * std::max(1.0, std::abs(fd)));
    }
  }
}
