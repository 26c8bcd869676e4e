// Acceptance gate: one pass/fail line per criterion, fixed seeds, pinned
// tolerances. Exit code is nonzero if any hard criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <random>
#include <vector>

#include "oobc/harness.hpp"
#include "oobc/training.hpp"

using namespace oobc;

namespace {

Vec v1(double a) { return Vec::Constant(1, a); }

struct Gate {
  bool all_pass = true;
  int total_violations = 0;

  void line(int idx, const char* name, bool pass, const std::string& detail,
            bool soft = false) {
    if (!pass && !soft) all_pass = false;
    std::printf("[%d] %s — %s: %s\n", idx,
                pass ? "PASS" : (soft ? "FAIL (soft gate)" : "FAIL"), name,
                detail.c_str());
    std::fflush(stdout);
  }
};

double now_s() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof(buf), f, ap);
  va_end(ap);
  return buf;
}

double percentile95(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[static_cast<size_t>(0.95 * v.size())];
}

double context_scale(const std::vector<Episode>& train) {
  std::vector<double> ctx;
  for (const auto& ep : train)
    for (const auto& c : ep.contexts) ctx.push_back(c(0));
  return std::max(1e-9, percentile95(ctx));
}

// Closed-form fairness layer vs the generic barrier on random triples;
// returns the max absolute primal gap.
double closed_vs_barrier(int triples, std::uint64_t seed) {
  FairnessFamily fam(3);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uc(0.2, 8.0), ul(0.0, 1.0), ub(1.5, 60.0);
  double worst = 0.0;
  for (int i = 0; i < triples; ++i) {
    const double c = uc(rng), lam = ul(rng), b = ub(rng);
    const OptSolution closed = solve_opt_layer(fam, v1(c), v1(lam), v1(b));
    ConvexProgram prog;
    prog.dim = 1;
    prog.objective = [&](const Vec& x) { return -c * std::log(x(0)) + lam * x(0); };
    prog.grad = [&](const Vec& x) { return v1(-c / x(0) + lam); };
    prog.hess = [&](const Vec& x) { return Mat::Constant(1, 1, c / (x(0) * x(0))); };
    prog.constraints.push_back({[&](const Vec& x) { return x(0) - b; },
                                [](const Vec&) { return v1(1.0); },
                                [](const Vec&) { return Mat::Zero(1, 1); }});
    prog.constraints.push_back({[](const Vec& x) { return 1.0 - x(0); },
                                [](const Vec&) { return v1(-1.0); },
                                [](const Vec&) { return Mat::Zero(1, 1); }});
    prog.constraints.push_back({[](const Vec& x) { return x(0) - 40.0; },
                                [](const Vec&) { return v1(1.0); },
                                [](const Vec&) { return Mat::Zero(1, 1); }});
    const BarrierResult br =
        solve_barrier(prog, v1(0.5 * (1.0 + std::min(40.0, b))));
    worst = std::max(worst, std::abs(br.x(0) - closed.x(0)));
  }
  return worst;
}

struct BenchResult {
  RunReport report;
  ModelParams model;
};

// Desk-scale benchmark at horizon n: generate data, train with the standard
// preset, evaluate the full lineup.
BenchResult run_benchmark(int n, std::uint64_t seed) {
  DatasetSpec dspec;
  dspec.horizon = n;
  dspec.train_count = 500;
  dspec.val_count = 100;
  dspec.test_count = 200;
  dspec.seed = seed;
  const DatasetBundle data = generate_dataset(dspec);

  FairnessFamily fam(n);
  ModelParams model = init_model(ModelVariant::mlp, 1, 1, 1, seed,
                                 n * fam.x_max(), context_scale(data.train));
  TrainConfig cfg;
  cfg.seed = seed;
  train_offline(model, fam, data.train, data.val, cfg);

  const double eta = default_dgd_eta(n);
  std::vector<AlgorithmEntry> algos{
      make_unrolled_entry(model, fam),
      make_opt_entry(fam),
      make_equal_entry(fam),
      make_avg_lt_entry(fam, calibrate_avg_lt(fam, data.train)),
      make_dgd_entry(fam, eta),
      make_mw_entry(fam, eta)};
  BenchResult out{run_experiment(fam, data.test, algos), model};
  return out;
}

const AlgoResult& algo(const RunReport& r, const std::string& name) {
  for (const auto& a : r.algorithms)
    if (a.name == name) return a;
  throw std::runtime_error("missing algorithm " + name);
}

int violations_of(const RunReport& r) {
  int v = 0;
  for (const auto& a : r.algorithms) v += a.violations;
  return v;
}

// Mean per-step test utility of a model trained on (possibly perturbed)
// data, evaluated on the clean test set.
double trained_utility(const FairnessFamily& fam,
                       const std::vector<Episode>& train,
                       const std::vector<Episode>& val,
                       const std::vector<Episode>& test, std::uint64_t seed,
                       bool direct_policy, int* violations) {
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.schedule = {{12, 5e-3}, {6, 2.5e-3}};
  RunReport report;
  if (direct_policy) {
    DirectPolicy policy = init_direct_policy(
        fam, seed, fam.horizon() * fam.x_max(), context_scale(train));
    train_direct_policy(policy, fam, train, val, cfg);
    report = run_experiment(fam, test, {make_direct_policy_entry(policy, fam)});
  } else {
    ModelParams model =
        init_model(ModelVariant::mlp, 1, 1, 1, seed, fam.horizon() * fam.x_max(),
                   context_scale(train));
    train_offline(model, fam, train, val, cfg);
    report = run_experiment(fam, test, {make_unrolled_entry(model, fam)});
  }
  *violations += violations_of(report);
  return report.algorithms[0].mean_utility;
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[1];
}

}  // namespace

int main() {
  Gate gate;
  const double t_start = now_s();

  // 1. implicit-gradient fidelity on random strictly-complementary instances
  {
    const double t0 = now_s();
    const double err = opt_layer_grad_suite(200, 11);
    gate.line(1, "KKT gradient fidelity (200 instances, tol 1e-4)", err <= 1e-4,
              fmt("max rel err %.3e, %.1fs", err, now_s() - t0));
  }

  // 2. end-to-end unrolled gradient vs finite differences
  {
    const double t0 = now_s();
    const double err = pipeline_grad_suite(20, 12);
    gate.line(2, "full-pipeline gradient (N=4 MLP, 20 episodes, tol 1e-3)",
              err <= 1e-3, fmt("max rel err %.3e, %.1fs", err, now_s() - t0));
  }

  // 4. closed-form vs barrier
  {
    const double t0 = now_s();
    const double gap = closed_vs_barrier(500, 13);
    gate.line(4, "solver equivalence (500 triples, tol 1e-8)", gap <= 1e-8,
              fmt("max abs gap %.3e, %.1fs", gap, now_s() - t0));
  }

  // 5 + 6. desk-scale benchmark ordering and leftover budget
  RunReport bench10;
  {
    const double t0 = now_s();
    BenchResult b10 = run_benchmark(10, 14);
    bench10 = b10.report;
    const double u = algo(bench10, "unrolled").mean_utility;
    const double opt = algo(bench10, "opt").mean_utility;
    bool ordering = u <= opt + 1e-9;
    double best_baseline10 = -kInf;
    for (const char* name : {"equal", "avg-lt", "dgd", "mw"}) {
      const double m = algo(bench10, name).mean_utility;
      best_baseline10 = std::max(best_baseline10, m);
      ordering = ordering && u >= m - 1e-9;
    }
    gate.total_violations += violations_of(bench10);

    BenchResult b40 = run_benchmark(40, 15);
    const double u40 = algo(b40.report, "unrolled").mean_utility;
    double best40 = -kInf;
    for (const char* name : {"equal", "avg-lt", "dgd", "mw"})
      best40 = std::max(best40, algo(b40.report, name).mean_utility);
    const bool n40_ok = u40 >= 0.99 * best40;
    gate.total_violations += violations_of(b40.report);

    gate.line(5, "benchmark ordering (N=10 lineup; N=40 >= 99% of best baseline)",
              ordering && n40_ok,
              fmt("N=10 unrolled %.4f vs best baseline %.4f, opt %.4f; "
                  "N=40 unrolled %.4f vs best %.4f (%.1f%%); %.0fs",
                  u, best_baseline10, opt, u40, best40, 100.0 * u40 / best40,
                  now_s() - t0));

    const double leftover = algo(bench10, "unrolled").remaining_budget_frac;
    gate.line(6, "remaining budget of the trained model (tol 5%)",
              leftover <= 0.05, fmt("mean remaining fraction %.3f%%", 100 * leftover));
  }

  // 7. online training trend over a stationary stream
  {
    const double t0 = now_s();
    const int n = 10, rounds = 2000;
    DatasetSpec dspec;
    dspec.horizon = n;
    dspec.train_count = rounds;
    dspec.seed = 16;
    const auto stream = generate_dataset(dspec).train;
    FairnessFamily fam(n);
    ModelParams model = init_model(ModelVariant::mlp, 1, 1, 1, 16,
                                   n * fam.x_max(), context_scale(stream));
    const TrainLog log = train_online(model, fam, stream, 1e-3);
    const auto& rl = log.round_loss;
    auto mean_of = [&](int from, int count) {
      double s = 0.0;
      for (int i = from; i < from + count; ++i) s += rl[i];
      return s / count;
    };
    const double head = mean_of(0, 100), tail = mean_of(rounds - 100, 100);
    // running-average loss sampled every 200 rounds; per-round losses are too
    // noisy (every round is a fresh random episode) for window means to be
    // monotone, but the running average should be, up to 0.1% slack
    bool monotone = true;
    std::vector<double> smooth;
    for (int i = 200; i <= rounds; i += 200) smooth.push_back(mean_of(0, i));
    for (size_t i = 1; i < smooth.size(); ++i)
      if (smooth[i] > smooth[i - 1] + 1e-3 * std::abs(smooth.front()))
        monotone = false;
    gate.line(7, "online training trend (2000 rounds)",
              tail <= head && monotone,
              fmt("first-100 mean %.4f, last-100 mean %.4f, smoothed %s, %.0fs",
                  head, tail, monotone ? "monotone" : "non-monotone",
                  now_s() - t0));
  }

  // 8. OOD robustness (soft gate): median utility drop over 3 seeds
  {
    const double t0 = now_s();
    const int n = 10;
    FairnessFamily fam(n);
    const double levels[] = {0.05, 0.1, 0.2};
    std::vector<double> med_drop_unrolled(3), med_drop_direct(3), med_dw(3);
    std::vector<std::vector<double>> du(3), dd(3), dws(3);
    int viol = 0;
    for (std::uint64_t seed : {101ull, 102ull, 103ull}) {
      DatasetSpec dspec;
      dspec.horizon = n;
      dspec.train_count = 200;
      dspec.val_count = 50;
      dspec.test_count = 100;
      dspec.seed = seed;
      const DatasetBundle data = generate_dataset(dspec);
      const double base_u = trained_utility(fam, data.train, data.val,
                                            data.test, seed, false, &viol);
      const double base_d = trained_utility(fam, data.train, data.val,
                                            data.test, seed, true, &viol);
      for (int li = 0; li < 3; ++li) {
        const OodSpec ood{levels[li], levels[li] / 2, seed + 7 * li};
        auto [ptrain, dw] = apply_ood(data.train, ood);
        auto pval = apply_ood(data.val, ood).first;
        dws[li].push_back(dw);
        du[li].push_back(base_u - trained_utility(fam, ptrain, pval, data.test,
                                                  seed, false, &viol));
        dd[li].push_back(base_d - trained_utility(fam, ptrain, pval, data.test,
                                                  seed, true, &viol));
      }
    }
    gate.total_violations += viol;
    bool ok = true;
    std::string detail;
    for (int li = 0; li < 3; ++li) {
      const double mu = median3(du[li]), md = median3(dd[li]);
      if (mu > md) ok = false;
      detail += fmt("d_W=%.3f: unrolled drop %.4f vs direct %.4f; ",
                    median3(dws[li]), mu, md);
    }
    gate.line(8, "OOD robustness trend (3-seed median)", ok,
              detail + fmt("%.0fs", now_s() - t0), /*soft=*/true);
  }

  // 3. hard feasibility across everything executed above
  gate.line(3, "hard feasibility (all algorithms, all runs)",
            gate.total_violations == 0,
            fmt("%d violations recorded", gate.total_violations));

  // 9. bitwise reproducibility of representative seeded computations
  {
    const double t0 = now_s();
    bool ok = true;

    ok = ok && opt_layer_grad_suite(200, 11) == opt_layer_grad_suite(200, 11);
    ok = ok && pipeline_grad_suite(20, 12) == pipeline_grad_suite(20, 12);
    ok = ok && closed_vs_barrier(500, 13) == closed_vs_barrier(500, 13);

    DatasetSpec dspec;
    dspec.horizon = 10;
    dspec.train_count = 50;
    dspec.val_count = 10;
    dspec.test_count = 20;
    dspec.seed = 17;
    const DatasetBundle a = generate_dataset(dspec);
    const DatasetBundle b = generate_dataset(dspec);
    for (size_t i = 0; i < a.train.size() && ok; ++i)
      ok = a.train[i].budgets(0) == b.train[i].budgets(0) &&
           a.train[i].contexts[3](0) == b.train[i].contexts[3](0);

    FairnessFamily fam(10);
    TrainConfig cfg;
    cfg.seed = 17;
    cfg.schedule = {{3, 5e-3}};
    ModelParams m1 = init_model(ModelVariant::mlp, 1, 1, 1, 17, 400.0,
                                context_scale(a.train));
    ModelParams m2 = m1;
    train_offline(m1, fam, a.train, a.val, cfg);
    train_offline(m2, fam, b.train, b.val, cfg);
    ok = ok && (m1.theta - m2.theta).lpNorm<Eigen::Infinity>() == 0.0;

    const auto algos = std::vector<AlgorithmEntry>{
        make_unrolled_entry(m1, fam), make_opt_entry(fam), make_equal_entry(fam)};
    const RunReport r1 = run_experiment(fam, a.test, algos);
    const RunReport r2 = run_experiment(fam, a.test, algos);
    ok = ok && report_to_json(r1, false).dump() == report_to_json(r2, false).dump();
    gate.total_violations += violations_of(r1) + violations_of(r2);

    gate.line(9, "bitwise reproducibility under fixed seeds", ok,
              fmt("grad suites, dataset, training, report all re-ran identical, %.0fs",
                  now_s() - t0));
  }

  std::printf("%s (total %.0fs)\n", gate.all_pass ? "ALL PASS" : "FAILURES PRESENT",
              now_s() - t_start);
  return gate.all_pass ? 0 : 1;
}
