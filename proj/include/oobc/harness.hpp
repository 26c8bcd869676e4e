#pragma once

#include <functional>

#include <nlohmann/json.hpp>

#include "oobc/baselines.hpp"
#include "oobc/dataset.hpp"
#include "oobc/pipeline.hpp"

namespace oobc {

struct AlgoResult {
  std::string name;
  std::vector<double> utilities;  // per episode (whole-episode utility)
  double mean_utility = 0.0;      // per-step mean across episodes
  double median = 0.0, q1 = 0.0, q3 = 0.0, min = 0.0, max = 0.0;
  double remaining_budget_frac = 0.0;
  int violations = 0;
  double wall_ms = 0.0;
};

struct RunReport {
  nlohmann::json meta;
  std::vector<AlgoResult> algorithms;
};

using EpisodeRunner = std::function<std::vector<Vec>(const Episode&)>;

struct AlgorithmEntry {
  std::string name;
  EpisodeRunner run;
};

// Evaluates every algorithm on the test set, computing utilities, budget
// slack, and feasibility violations from the returned actions. Aborts with
// the failing episode id if a runner throws.
RunReport run_experiment(const ProblemSpec& spec,
                         const std::vector<Episode>& test,
                         const std::vector<AlgorithmEntry>& algos,
                         nlohmann::json meta = {});

// `include_wall=false` drops the timing fields so reports compare bytewise.
nlohmann::json report_to_json(const RunReport& report, bool include_wall = true);
void write_report(const std::string& json_path, const std::string& csv_path,
                  const RunReport& report);

// Ready-made runners for the standard lineup.
AlgorithmEntry make_unrolled_entry(const ModelParams& model, const ProblemSpec& spec,
                                   std::string name = "unrolled");
AlgorithmEntry make_opt_entry(const ProblemSpec& spec);
AlgorithmEntry make_equal_entry(const ProblemSpec& spec);
AlgorithmEntry make_avg_lt_entry(const ProblemSpec& spec, Vec lambda_p);
AlgorithmEntry make_dgd_entry(const ProblemSpec& spec, double eta);
AlgorithmEntry make_mw_entry(const ProblemSpec& spec, double eta);
AlgorithmEntry make_direct_policy_entry(const DirectPolicy& policy,
                                        const ProblemSpec& spec);

// Finite-difference audits.
struct GradCheckReport {
  double opt_layer_max_rel = 0.0;
  double pipeline_max_rel = 0.0;
  int opt_layer_cases = 0;
  int pipeline_cases = 0;
};

// Random strictly-complementary quadratic instances over d in {1,3} and
// M in {1,2}; compares the implicit derivatives of the layer solution with
// central differences in lambda, b, and c.
double opt_layer_grad_suite(int instances, std::uint64_t seed, int* cases = nullptr);

// Fairness N=4 episodes under a random-weight network; compares the unrolled
// gradient with central differences in theta.
double pipeline_grad_suite(int episodes, std::uint64_t seed,
                           BudgetRecurrence recurrence = BudgetRecurrence::full);

GradCheckReport run_grad_checks(std::uint64_t seed);

std::string version_string();

}  // namespace oobc
