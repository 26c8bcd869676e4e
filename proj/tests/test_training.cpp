#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "oobc/training.hpp"

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

QuadraticFamily quad_toy(int n) {
  return QuadraticFamily(n, Mat::Identity(1, 1), {Mat::Zero(1, 1)},
                         {Vec::Ones(1)}, Vec::Zero(1), v1(-kInf), v1(kInf));
}

}  // namespace

TEST_CASE("gradient clipping rescales without changing direction") {
  Vec g(2);
  g << 3.0, 4.0;
  Vec clipped = g;
  clip_gradient(clipped, 2.5);
  CHECK(clipped.norm() == doctest::Approx(2.5));
  CHECK(clipped(0) / clipped(1) == doctest::Approx(0.75));
  Vec small = g;
  clip_gradient(small, 10.0);
  CHECK((small - g).norm() == 0.0);
}

TEST_CASE("zero learning rate leaves weights untouched") {
  QuadraticFamily fam = quad_toy(2);
  ModelParams model = init_model(ModelVariant::linear, 1, 1, 1, 1, 10.0, 2.0);
  const Vec before = model.theta;
  TrainConfig cfg;
  cfg.optimizer = TrainConfig::Optimizer::sgd;
  cfg.schedule = {{3, 0.0}};
  cfg.batch_size = 1;
  cfg.keep_best_validation = false;
  const std::vector<Episode> data{make_episode({1.0, 2.0}, 10.0)};
  train_offline(model, fam, data, data, cfg);
  CHECK((model.theta - before).norm() == 0.0);
}

TEST_CASE("toy problem trains to near-zero loss") {
  // Inactive constraints make the loss 0.5*lambda_1^2; SGD drives the
  // predicted multiplier toward zero.
  QuadraticFamily fam = quad_toy(2);
  ModelParams model = init_model(ModelVariant::linear, 1, 1, 1, 1, 10.0, 2.0);
  TrainConfig cfg;
  cfg.optimizer = TrainConfig::Optimizer::sgd;
  cfg.schedule = {{200, 1.0}};
  cfg.batch_size = 1;
  cfg.keep_best_validation = false;
  const std::vector<Episode> data{make_episode({1.0, 2.0}, 10.0)};
  const TrainLog log = train_offline(model, fam, data, data, cfg);
  CHECK(log.train_loss.back() <= 1e-3);
  CHECK(log.train_loss.back() <= log.train_loss.front());
}

TEST_CASE("training is bitwise deterministic under a fixed seed") {
  FairnessFamily fam(3);
  const std::vector<Episode> train{make_episode({1.0, 2.0, 3.0}, 35.0),
                                   make_episode({2.0, 1.0, 0.5}, 40.0),
                                   make_episode({4.0, 4.0, 1.0}, 32.0)};
  const std::vector<Episode> val{make_episode({1.5, 2.5, 1.0}, 36.0)};
  TrainConfig cfg;
  cfg.schedule = {{4, 5e-3}};
  cfg.batch_size = 2;
  cfg.seed = 42;

  ModelParams a = init_model(ModelVariant::mlp, 1, 1, 1, 9, 120.0, 4.0);
  ModelParams b = a;
  const TrainLog la = train_offline(a, fam, train, val, cfg);
  const TrainLog lb = train_offline(b, fam, train, val, cfg);
  CHECK((a.theta - b.theta).lpNorm<Eigen::Infinity>() == 0.0);
  for (size_t i = 0; i < la.train_loss.size(); ++i) {
    CHECK(la.train_loss[i] == lb.train_loss[i]);
    CHECK(la.val_loss[i] == lb.val_loss[i]);
  }
}

TEST_CASE("validation-best selection returns the best epoch's weights") {
  FairnessFamily fam(2);
  const std::vector<Episode> train{make_episode({1.0, 2.0}, 25.0)};
  const std::vector<Episode> val{make_episode({2.0, 1.0}, 22.0)};
  TrainConfig cfg;
  cfg.schedule = {{6, 5e-2}};  // deliberately coarse so val loss wobbles
  cfg.batch_size = 1;
  ModelParams model = init_model(ModelVariant::mlp, 1, 1, 1, 9, 80.0, 4.0);
  const TrainLog log = train_offline(model, fam, train, val, cfg);
  const double best = *std::min_element(log.val_loss.begin(), log.val_loss.end());
  const double final_val = forward_episode(model, fam, val[0]).total_loss;
  CHECK(final_val == doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("online SGD with zero stepsize only evaluates") {
  FairnessFamily fam(2);
  ModelParams model = init_model(ModelVariant::mlp, 1, 1, 1, 5, 80.0, 4.0);
  const Vec before = model.theta;
  const std::vector<Episode> stream{make_episode({1.0, 2.0}, 25.0),
                                    make_episode({1.0, 2.0}, 25.0)};
  const TrainLog log = train_online(model, fam, stream, 0.0);
  CHECK((model.theta - before).norm() == 0.0);
  CHECK(log.round_loss[0] == log.round_loss[1]);
}

TEST_CASE("online mode equals offline SGD with batch size one") {
  FairnessFamily fam(2);
  const Episode ep = make_episode({1.0, 2.0}, 25.0);
  const double lr = 1e-3;

  ModelParams online = init_model(ModelVariant::mlp, 1, 1, 1, 8, 80.0, 4.0);
  ModelParams offline = online;

  train_online(online, fam, {ep, ep, ep}, lr);

  TrainConfig cfg;
  cfg.optimizer = TrainConfig::Optimizer::sgd;
  cfg.schedule = {{3, lr}};
  cfg.batch_size = 1;
  cfg.keep_best_validation = false;
  train_offline(offline, fam, {ep}, {}, cfg);

  CHECK((online.theta - offline.theta).lpNorm<Eigen::Infinity>() == 0.0);
}
