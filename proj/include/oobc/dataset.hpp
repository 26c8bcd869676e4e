#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "oobc/problem.hpp"

namespace oobc {

// Sampling protocol for synthetic episodes: lognormal contexts, budgets
// uniform on [lo_per_step*N, hi_per_step*N].
struct DatasetSpec {
  int horizon = 20;  // N
  int train_count = 500;
  int val_count = 100;
  int test_count = 200;
  double budget_lo_per_step = 10.0;
  double budget_hi_per_step = 15.0;
  double log_mean = 1.0;   // of the underlying normal
  double log_sigma = 0.5;
  int context_dim = 1;
  int num_constraints = 1;
  std::uint64_t seed = 0;

  void set_full_scale() {
    train_count = 5000;
    val_count = 1000;
    test_count = 2000;
  }
  void validate() const;
};

struct DatasetBundle {
  std::vector<Episode> train, val, test;
};

// Deterministic by seed: each episode draws from its own seeded stream, so
// regeneration is byte-identical and counts can change without reshuffling
// earlier episodes.
DatasetBundle generate_dataset(const DatasetSpec& dspec);

void save_episodes(const std::string& path, const std::vector<Episode>& episodes);
std::vector<Episode> load_episodes(const std::string& path);

// CSV trace ingestion: columns episode_id,t,c with a header row. Rows are
// consumed in file order and chunked into length-N episodes; a trailing
// partial chunk is dropped with a warning. Budgets are drawn per the dataset
// law. Malformed or negative-context rows abort with the 1-based line number.
std::vector<Episode> load_trace(const std::string& path, const DatasetSpec& dspec,
                                std::string* warning = nullptr);

// Additive i.i.d. Gaussian perturbation of contexts, clipped at 0.
struct OodSpec {
  double mean = 0.0;
  double sigma = 0.0;
  std::uint64_t seed = 0;
};

// Perturbs every context and reports the 1-D empirical Wasserstein-1
// distance between the original and perturbed context marginals.
std::pair<std::vector<Episode>, double> apply_ood(const std::vector<Episode>& episodes,
                                                  const OodSpec& ood);

// Sorted-sample W1 on scalar samples; unequal sizes are reduced to matching
// evenly spaced order statistics.
double wasserstein1(std::vector<double> a, std::vector<double> b);

std::vector<double> flatten_contexts(const std::vector<Episode>& episodes);

}  // namespace oobc
