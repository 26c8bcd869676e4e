#pragma once

#include <functional>

#include "oobc/pipeline.hpp"

namespace oobc {

struct TrainConfig {
  enum class Optimizer { sgd, adam };
  Optimizer optimizer = Optimizer::adam;
  // (epochs, learning rate) segments, run in order.
  std::vector<std::pair<int, double>> schedule = {{50, 5e-3}, {30, 2.5e-3}};
  int batch_size = 10;
  std::uint64_t seed = 0;
  double clip_norm = 10.0;
  // Return the weights with the best validation loss instead of the last
  // epoch's; disable for a fixed-schedule run.
  bool keep_best_validation = true;
  PipelineOptions pipeline;

  int total_epochs() const {
    int e = 0;
    for (const auto& [n, _] : schedule) e += n;
    return e;
  }
};

struct TrainLog {
  std::vector<double> train_loss;  // per-epoch mean episode loss
  std::vector<double> val_loss;
  std::vector<double> wall_ms;
  std::vector<double> round_loss;  // online mode: per-round episode loss
};

// Evaluates one episode under the current weights and fills `grad` with the
// gradient of the episode loss; returns the loss.
using EpisodeGradFn =
    std::function<double(const ModelParams&, const Episode&, Vec& grad)>;
using EpisodeLossFn = std::function<double(const ModelParams&, const Episode&)>;

// Minibatch loop shared by the multiplier model and the direct policy.
TrainLog train_loop(ModelParams& model, const std::vector<Episode>& train,
                    const std::vector<Episode>& val, const TrainConfig& cfg,
                    const EpisodeGradFn& grad_fn, const EpisodeLossFn& loss_fn);

TrainLog train_offline(ModelParams& model, const ProblemSpec& spec,
                       const std::vector<Episode>& train,
                       const std::vector<Episode>& val, const TrainConfig& cfg);

// One-step SGD per arriving episode: infer with the current weights, then
// descend on that episode's loss.
TrainLog train_online(ModelParams& model, const ProblemSpec& spec,
                      const std::vector<Episode>& stream, double stepsize,
                      double clip_norm = 10.0, const PipelineOptions& opts = {});

// Rescales to `clip_norm` when the norm exceeds it; direction is preserved.
void clip_gradient(Vec& grad, double clip_norm);

}  // namespace oobc
