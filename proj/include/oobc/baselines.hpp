#pragma once

#include "oobc/training.hpp"

namespace oobc {

struct BaselineRun {
  std::vector<Vec> actions;
  double utility = 0.0;
};

// Full-information optimum: water-filling for the fairness family, stacked
// barrier Newton on the N*d problem otherwise.
BaselineRun solve_offline_opt(const ProblemSpec& spec, const Episode& ep);

// x_t = clamp(B/N, box) every step. Throws if the clamped allocation cannot
// fit the budget (degenerate input).
BaselineRun run_equal(const ProblemSpec& spec, const Episode& ep);

// Constant multiplier calibrated offline against average constraints.
Vec calibrate_avg_lt(const ProblemSpec& spec, const std::vector<Episode>& training);
BaselineRun run_avg_lt(const ProblemSpec& spec, const Episode& ep, const Vec& lambda_p);

// Dual gradient descent (virtual-queue update) with the last-step fix.
BaselineRun run_dgd(const ProblemSpec& spec, const Episode& ep, double eta);

// Multiplicative-weight dual update with the last-step fix.
BaselineRun run_mw(const ProblemSpec& spec, const Episode& ep, double eta);

double default_dgd_eta(int horizon);  // 1/sqrt(N)

// End-to-end policy that predicts the action directly: softplus-scaled
// network output projected onto the feasible set. Stand-in for a
// reinforcement-learned policy, trained by pathwise gradients through the
// projection.
struct DirectPolicy {
  ModelParams net;        // out_dim = d, raw output (no softplus head)
  Vec action_scale;       // per-coordinate scale applied after softplus
};

DirectPolicy init_direct_policy(const ProblemSpec& spec, std::uint64_t seed,
                                double bscale, double cscale);

BaselineRun run_direct_policy(const ProblemSpec& spec, const Episode& ep,
                              const DirectPolicy& policy);

// Pathwise training through the projection; d = 1 families only.
TrainLog train_direct_policy(DirectPolicy& policy, const ProblemSpec& spec,
                             const std::vector<Episode>& train,
                             const std::vector<Episode>& val,
                             const TrainConfig& cfg);

}  // namespace oobc
