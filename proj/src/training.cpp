#include "oobc/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

namespace oobc {

void clip_gradient(Vec& grad, double clip_norm) {
  if (clip_norm <= 0.0) return;
  const double norm = grad.norm();
  if (norm > clip_norm) grad *= clip_norm / norm;
}

namespace {

class Adam {
 public:
  explicit Adam(int dim) : m_(Vec::Zero(dim)), v_(Vec::Zero(dim)) {}

  void step(Vec& theta, const Vec& grad, double lr) {
    ++t_;
    m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
    v_ = beta2_ * v_.array() + (1.0 - beta2_) * grad.array().square();
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    theta -= (lr / bc1) * (m_.array() / ((v_ / bc2).array().sqrt() + eps_)).matrix();
  }

 private:
  static constexpr double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  Vec m_, v_;
  long t_ = 0;
};

}  // namespace

TrainLog train_loop(ModelParams& model, const std::vector<Episode>& train,
                    const std::vector<Episode>& val, const TrainConfig& cfg,
                    const EpisodeGradFn& grad_fn, const EpisodeLossFn& loss_fn) {
  if (train.empty()) throw std::invalid_argument("train: empty dataset");
  if (cfg.batch_size < 1) throw std::invalid_argument("train: batch size < 1");

  TrainLog log;
  std::mt19937_64 rng(cfg.seed);
  Adam adam(model.param_count());

  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), size_t{0});

  auto mean_val_loss = [&]() {
    if (val.empty()) return 0.0;
    double s = 0.0;
    for (const Episode& ep : val) s += loss_fn(model, ep);
    return s / static_cast<double>(val.size());
  };

  Vec best_theta = model.theta;
  double best_val = kInf;

  Vec grad(model.param_count());
  for (const auto& [epochs, lr] : cfg.schedule) {
    for (int e = 0; e < epochs; ++e) {
      const auto t0 = std::chrono::steady_clock::now();
      std::shuffle(order.begin(), order.end(), rng);
      double epoch_loss = 0.0;
      for (size_t pos = 0; pos < order.size(); pos += cfg.batch_size) {
        const size_t end = std::min(pos + cfg.batch_size, order.size());
        Vec batch_grad = Vec::Zero(model.param_count());
        for (size_t i = pos; i < end; ++i) {
          epoch_loss += grad_fn(model, train[order[i]], grad);
          batch_grad += grad;
        }
        batch_grad /= static_cast<double>(end - pos);
        clip_gradient(batch_grad, cfg.clip_norm);
        if (cfg.optimizer == TrainConfig::Optimizer::adam)
          adam.step(model.theta, batch_grad, lr);
        else
          model.theta -= lr * batch_grad;
      }
      epoch_loss /= static_cast<double>(train.size());
      if (!std::isfinite(epoch_loss))
        throw std::runtime_error("train: loss diverged to non-finite value");
      const double vloss = mean_val_loss();
      if (!val.empty() && vloss < best_val) {
        best_val = vloss;
        best_theta = model.theta;
      }
      log.train_loss.push_back(epoch_loss);
      log.val_loss.push_back(vloss);
      log.wall_ms.push_back(
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
              .count());
    }
  }

  if (cfg.keep_best_validation && !val.empty()) model.theta = best_theta;
  return log;
}

TrainLog train_offline(ModelParams& model, const ProblemSpec& spec,
                       const std::vector<Episode>& train,
                       const std::vector<Episode>& val, const TrainConfig& cfg) {
  const PipelineOptions opts = cfg.pipeline;
  EpisodeGradFn grad_fn = [&spec, opts](const ModelParams& m, const Episode& ep,
                                        Vec& grad) {
    const PipelineTrace trace = forward_episode(m, spec, ep, opts);
    grad = backward_episode(trace, m, spec, opts).dtheta;
    return trace.total_loss;
  };
  EpisodeLossFn loss_fn = [&spec, opts](const ModelParams& m, const Episode& ep) {
    return forward_episode(m, spec, ep, opts).total_loss;
  };
  return train_loop(model, train, val, cfg, grad_fn, loss_fn);
}

TrainLog train_online(ModelParams& model, const ProblemSpec& spec,
                      const std::vector<Episode>& stream, double stepsize,
                      double clip_norm, const PipelineOptions& opts) {
  if (stepsize < 0.0) throw std::invalid_argument("train_online: negative stepsize");
  TrainLog log;
  for (const Episode& ep : stream) {
    const PipelineTrace trace = forward_episode(model, spec, ep, opts);
    if (!std::isfinite(trace.total_loss))
      throw std::runtime_error("train_online: loss diverged");
    log.round_loss.push_back(trace.total_loss);
    Vec grad = backward_episode(trace, model, spec, opts).dtheta;
    clip_gradient(grad, clip_norm);
    model.theta -= stepsize * grad;
  }
  return log;
}

}  // namespace oobc
