#include "oobc/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <random>

namespace oobc {

using nlohmann::json;

namespace {

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * (static_cast<double>(v.size()) - 1.0);
  const size_t lo = static_cast<size_t>(pos);
  const size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] * (1.0 - frac) + v[hi] * frac;
}

}  // namespace

RunReport run_experiment(const ProblemSpec& spec,
                         const std::vector<Episode>& test,
                         const std::vector<AlgorithmEntry>& algos, json meta) {
  if (test.empty()) throw std::invalid_argument("run_experiment: empty test set");
  RunReport report;
  meta["episodes"] = test.size();
  meta["horizon"] = spec.horizon();
  meta["version"] = version_string();
  report.meta = std::move(meta);

  for (const auto& algo : algos) {
    AlgoResult res;
    res.name = algo.name;
    const auto start = std::chrono::steady_clock::now();
    double slack_frac = 0.0;
    for (const auto& ep : test) {
      std::vector<Vec> actions;
      try {
        actions = algo.run(ep);
      } catch (const std::exception& e) {
        throw std::runtime_error(algo.name + " failed on episode '" + ep.id +
                                 "': " + e.what());
      }
      if (static_cast<int>(actions.size()) != ep.horizon())
        throw std::runtime_error(algo.name + ": wrong action count on '" + ep.id + "'");
      double loss = 0.0;
      Vec used = Vec::Zero(spec.num_constraints());
      for (int t = 0; t < ep.horizon(); ++t) {
        loss += eval_loss(spec, actions[t], ep.contexts[t]);
        used += eval_constraints(spec, actions[t], ep.contexts[t]);
      }
      if (((used - ep.budgets).array() > 1e-9).any()) ++res.violations;
      res.utilities.push_back(-loss);
      slack_frac += ((ep.budgets - used).array() / ep.budgets.array()).mean();
    }
    const auto stop = std::chrono::steady_clock::now();
    res.wall_ms = std::chrono::duration<double, std::milli>(stop - start).count();

    const double n = static_cast<double>(res.utilities.size());
    double sum = 0.0;
    for (double u : res.utilities) sum += u;
    res.mean_utility = sum / n / spec.horizon();
    res.median = quantile(res.utilities, 0.5);
    res.q1 = quantile(res.utilities, 0.25);
    res.q3 = quantile(res.utilities, 0.75);
    res.min = *std::min_element(res.utilities.begin(), res.utilities.end());
    res.max = *std::max_element(res.utilities.begin(), res.utilities.end());
    res.remaining_budget_frac = slack_frac / n;
    report.algorithms.push_back(std::move(res));
  }
  return report;
}

json report_to_json(const RunReport& report, bool include_wall) {
  json root;
  root["meta"] = report.meta;
  json algos = json::array();
  for (const auto& a : report.algorithms) {
    json j;
    j["name"] = a.name;
    j["mean_utility"] = a.mean_utility;
    j["quartiles"] = {a.q1, a.median, a.q3};
    j["min"] = a.min;
    j["max"] = a.max;
    j["remaining_budget_frac"] = a.remaining_budget_frac;
    j["violations"] = a.violations;
    if (include_wall) j["wall_ms"] = a.wall_ms;
    algos.push_back(std::move(j));
  }
  root["algorithms"] = std::move(algos);
  return root;
}

void write_report(const std::string& json_path, const std::string& csv_path,
                  const RunReport& report) {
  {
    std::ofstream out(json_path);
    if (!out) throw std::runtime_error("cannot write " + json_path);
    out << report_to_json(report).dump(1, '\t') << "\n";
  }
  std::ofstream csv(csv_path);
  if (!csv) throw std::runtime_error("cannot write " + csv_path);
  csv << "algorithm,episode,utility\n";
  csv.precision(17);
  for (const auto& a : report.algorithms)
    for (size_t i = 0; i < a.utilities.size(); ++i)
      csv << a.name << "," << i << "," << a.utilities[i] << "\n";
}

AlgorithmEntry make_unrolled_entry(const ModelParams& model,
                                   const ProblemSpec& spec, std::string name) {
  return {std::move(name), [&model, &spec](const Episode& ep) {
            OnlineInference infer(model, spec, ep.budgets);
            std::vector<Vec> actions;
            actions.reserve(ep.contexts.size());
            for (const auto& c : ep.contexts) actions.push_back(infer.step(c));
            return actions;
          }};
}

AlgorithmEntry make_opt_entry(const ProblemSpec& spec) {
  return {"opt", [&spec](const Episode& ep) {
            return solve_offline_opt(spec, ep).actions;
          }};
}

AlgorithmEntry make_equal_entry(const ProblemSpec& spec) {
  return {"equal", [&spec](const Episode& ep) { return run_equal(spec, ep).actions; }};
}

AlgorithmEntry make_avg_lt_entry(const ProblemSpec& spec, Vec lambda_p) {
  return {"avg-lt", [&spec, lambda_p = std::move(lambda_p)](const Episode& ep) {
            return run_avg_lt(spec, ep, lambda_p).actions;
          }};
}

AlgorithmEntry make_dgd_entry(const ProblemSpec& spec, double eta) {
  return {"dgd", [&spec, eta](const Episode& ep) {
            return run_dgd(spec, ep, eta).actions;
          }};
}

AlgorithmEntry make_mw_entry(const ProblemSpec& spec, double eta) {
  return {"mw", [&spec, eta](const Episode& ep) {
            return run_mw(spec, ep, eta).actions;
          }};
}

AlgorithmEntry make_direct_policy_entry(const DirectPolicy& policy,
                                        const ProblemSpec& spec) {
  return {"direct-policy", [&policy, &spec](const Episode& ep) {
            return run_direct_policy(spec, ep, policy).actions;
          }};
}

namespace {

struct QuadInstance {
  std::shared_ptr<QuadraticFamily> spec;
  Vec c, lambda, b;
};

QuadInstance random_quad_instance(std::mt19937_64& eng, int d, int m) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  Mat a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = gauss(eng);
  Mat q = a * a.transpose() + 0.5 * Mat::Identity(d, d);

  std::vector<Mat> p;
  std::vector<Vec> w;
  Vec s = Vec::Zero(m);
  for (int k = 0; k < m; ++k) {
    Mat bmat(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) bmat(i, j) = gauss(eng);
    p.push_back(0.1 * bmat * bmat.transpose());
    Vec wk(d);
    for (int j = 0; j < d; ++j) wk(j) = 0.2 + 0.8 * u01(eng);
    w.push_back(wk);
  }

  const Vec lo = Vec::Zero(d);
  const Vec hi = Vec::Constant(d, 5.0);
  auto spec = std::make_shared<QuadraticFamily>(4, q, p, w, s, lo, hi);

  QuadInstance inst;
  inst.spec = spec;
  inst.c = Vec(d);
  for (int j = 0; j < d; ++j) inst.c(j) = 0.5 + 2.5 * u01(eng);
  inst.lambda = Vec(m);
  for (int k = 0; k < m; ++k) inst.lambda(k) = 0.5 * u01(eng);

  // Budgets around the consumption of the clamped loss target so the
  // resource rows end up active roughly half the time.
  Vec target = inst.c.cwiseMax(lo).cwiseMin(hi);
  const Vec g = spec->constraints(target, inst.c);
  inst.b = Vec(m);
  for (int k = 0; k < m; ++k)
    inst.b(k) = std::max(0.05, (0.4 + 0.9 * u01(eng)) * g(k));
  return inst;
}

// Strict complementarity margin: finite differences only match the implicit
// derivative away from active-set kinks.
bool strictly_complementary(const ProblemSpec& spec, const OptSolution& sol,
                            const Vec& c, const Vec& b, double margin) {
  const Vec g = spec.constraints(sol.x, c);
  for (int k = 0; k < b.size(); ++k) {
    const double slack = b(k) - g(k);
    if (!((slack > margin && sol.mu(k) < 1e-9) ||
          (sol.mu(k) > margin && std::abs(slack) < 1e-7)))
      return false;
  }
  const Vec lo = spec.box_lower(), hi = spec.box_upper();
  for (int j = 0; j < sol.x.size(); ++j) {
    if (std::isfinite(lo(j))) {
      const double slack = sol.x(j) - lo(j);
      if (!((slack > margin && sol.mu_lo(j) < 1e-9) ||
            (sol.mu_lo(j) > margin && std::abs(slack) < 1e-7)))
        return false;
    }
    if (std::isfinite(hi(j))) {
      const double slack = hi(j) - sol.x(j);
      if (!((slack > margin && sol.mu_hi(j) < 1e-9) ||
            (sol.mu_hi(j) > margin && std::abs(slack) < 1e-7)))
        return false;
    }
  }
  return true;
}

double column_rel_error(const Vec& fd, const Vec& an) {
  return (fd - an).lpNorm<Eigen::Infinity>() /
         std::max(1.0, an.lpNorm<Eigen::Infinity>());
}

}  // namespace

double opt_layer_grad_suite(int instances, std::uint64_t seed, int* cases) {
  std::mt19937_64 eng(seed);
  const int dims[] = {1, 3};
  const int cons[] = {1, 2};
  const double h = 1e-6;

  double worst = 0.0;
  int done = 0;
  int attempts = 0;
  while (done < instances) {
    if (++attempts > instances * 30)
      throw std::runtime_error("grad suite: too many degenerate instances");
    const int d = dims[done % 2];
    const int m = cons[(done / 2) % 2];
    QuadInstance inst = random_quad_instance(eng, d, m);
    const ProblemSpec& spec = *inst.spec;

    OptSolution sol;
    try {
      sol = solve_opt_layer(spec, inst.c, inst.lambda, inst.b);
    } catch (const std::exception&) {
      continue;
    }
    if (!strictly_complementary(spec, sol, inst.c, inst.b, 1e-3)) continue;
    const KktGradients grads = differentiate_kkt(spec, sol, inst.c, inst.lambda, inst.b);
    if (!grads.exact) continue;

    auto solve_at = [&](const Vec& c, const Vec& lambda, const Vec& b) {
      return solve_opt_layer(spec, c, lambda, b).x;
    };
    double err = 0.0;
    for (int k = 0; k < m; ++k) {
      Vec lp = inst.lambda, lm = inst.lambda;
      lp(k) += h;
      lm(k) -= h;
      const Vec fd = (solve_at(inst.c, lp, inst.b) - solve_at(inst.c, lm, inst.b)) / (2 * h);
      err = std::max(err, column_rel_error(fd, grads.dx_dlambda.col(k)));

      Vec bp = inst.b, bm = inst.b;
      bp(k) += h;
      bm(k) -= h;
      const Vec fdb = (solve_at(inst.c, inst.lambda, bp) - solve_at(inst.c, inst.lambda, bm)) / (2 * h);
      err = std::max(err, column_rel_error(fdb, grads.dx_db.col(k)));
    }
    for (int j = 0; j < d; ++j) {
      Vec cp = inst.c, cm = inst.c;
      cp(j) += h;
      cm(j) -= h;
      const Vec fd = (solve_at(cp, inst.lambda, inst.b) - solve_at(cm, inst.lambda, inst.b)) / (2 * h);
      err = std::max(err, column_rel_error(fd, grads.dx_dc.col(j)));
    }
    worst = std::max(worst, err);
    ++done;
  }
  if (cases) *cases = done;
  return worst;
}

double pipeline_grad_suite(int episodes, std::uint64_t seed,
                           BudgetRecurrence recurrence) {
  const int n = 4;
  FairnessFamily spec(n);
  ModelParams model = init_model(ModelVariant::mlp, 1, 1, 1, seed,
                                 /*bscale=*/n * spec.x_max(), /*cscale=*/5.0);
  PipelineOptions opts;
  opts.recurrence = recurrence;

  DatasetSpec dspec;
  dspec.horizon = n;
  dspec.train_count = episodes;
  dspec.seed = seed + 17;
  dspec.val_count = 1;
  dspec.test_count = 1;
  const auto eps = generate_dataset(dspec).train;

  const double h = 1e-6;
  double worst = 0.0;
  for (const auto& ep : eps) {
    const PipelineTrace trace = forward_episode(model, spec, ep, opts);
    const ThetaGradient grad = backward_episode(trace, model, spec, opts);

    Vec fd(model.theta.size());
    ModelParams probe = model;
    for (int i = 0; i < model.theta.size(); ++i) {
      probe.theta(i) = model.theta(i) + h;
      const double lp = forward_episode(probe, spec, ep, opts).total_loss;
      probe.theta(i) = model.theta(i) - h;
      const double lm = forward_episode(probe, spec, ep, opts).total_loss;
      probe.theta(i) = model.theta(i);
      fd(i) = (lp - lm) / (2 * h);
    }
    const double err = (fd - grad.dtheta).norm() / std::max(1.0, grad.dtheta.norm());
    worst = std::max(worst, err);
  }
  return worst;
}

GradCheckReport run_grad_checks(std::uint64_t seed) {
  GradCheckReport rep;
  rep.opt_layer_max_rel = opt_layer_grad_suite(200, seed, &rep.opt_layer_cases);
  rep.pipeline_cases = 20;
  rep.pipeline_max_rel = pipeline_grad_suite(rep.pipeline_cases, seed + 1);
  return rep;
}

std::string version_string() { return "oobc 1.0.0"; }

}  // namespace oobc
