// Command-line front end: data generation, training, evaluation, baseline
// comparison, OOD perturbation, and gradient audits.
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "oobc/harness.hpp"
#include "oobc/training.hpp"

namespace fs = std::filesystem;
using namespace oobc;
using nlohmann::json;

namespace {

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path);
  return json::parse(in);
}

double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  return v[std::min(v.size() - 1, static_cast<size_t>(q * v.size()))];
}

struct LoadedData {
  DatasetBundle bundle;
  int horizon = 0;
};

LoadedData load_data_dir(const std::string& dir) {
  LoadedData d;
  d.bundle.train = load_episodes(dir + "/train.json");
  d.bundle.val = load_episodes(dir + "/val.json");
  d.bundle.test = load_episodes(dir + "/test.json");
  if (d.bundle.train.empty()) throw std::runtime_error("empty training set");
  d.horizon = d.bundle.train.front().horizon();
  return d;
}

ModelParams fresh_model(const std::string& variant, const FairnessFamily& spec,
                        const std::vector<Episode>& train, std::uint64_t seed) {
  const double bscale = spec.horizon() * spec.x_max();
  std::vector<double> ctx;
  for (const auto& ep : train)
    for (const auto& c : ep.contexts) ctx.push_back(c(0));
  const double cscale = std::max(1e-9, percentile(ctx, 0.95));
  return init_model(variant == "linear" ? ModelVariant::linear : ModelVariant::mlp,
                    1, 1, 1, seed, bscale, cscale);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"learned budget-pacing for online convex allocation"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  bool full_scale = false;
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--seed", seed, "global RNG seed");
  app.add_flag("--full-scale", full_scale, "full 5000/1000/2000 protocol");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "sample or ingest episode files");
  std::string out_dir = "data";
  int horizon = 20;
  std::string trace_path;
  gen->add_option("--out", out_dir, "output directory");
  gen->add_option("--n", horizon, "episode length");
  gen->add_option("--trace", trace_path, "CSV trace (episode_id,t,c) for the test split");

  // train / train-online
  auto* train_cmd = app.add_subcommand("train", "offline minibatch training");
  std::string data_dir = "data", ckpt_out = "model.ckpt", variant = "mlp";
  train_cmd->add_option("--data", data_dir, "dataset directory");
  train_cmd->add_option("--out", ckpt_out, "checkpoint path");
  train_cmd->add_option("--model", variant, "mlp | linear");

  auto* online_cmd = app.add_subcommand("train-online", "one-step SGD per episode");
  int rounds = 2000;
  double stepsize = 1e-3;
  online_cmd->add_option("--data", data_dir, "dataset directory");
  online_cmd->add_option("--out", ckpt_out, "checkpoint path");
  online_cmd->add_option("--model", variant, "mlp | linear");
  online_cmd->add_option("--rounds", rounds, "stream length");
  online_cmd->add_option("--stepsize", stepsize, "SGD stepsize");

  // eval / compare
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  std::string ckpt_in = "model.ckpt", report_path = "report.json", csv_path = "report.csv";
  eval_cmd->add_option("--data", data_dir, "dataset directory");
  eval_cmd->add_option("--ckpt", ckpt_in, "checkpoint path");
  eval_cmd->add_option("--report", report_path, "JSON report output");
  eval_cmd->add_option("--csv", csv_path, "per-episode CSV output");

  auto* cmp_cmd = app.add_subcommand("compare", "checkpoint vs the baseline lineup");
  std::string policy_ckpt;
  cmp_cmd->add_option("--data", data_dir, "dataset directory");
  cmp_cmd->add_option("--ckpt", ckpt_in, "checkpoint path");
  cmp_cmd->add_option("--policy-ckpt", policy_ckpt, "direct-policy checkpoint (optional)");
  cmp_cmd->add_option("--report", report_path, "JSON report output");
  cmp_cmd->add_option("--csv", csv_path, "per-episode CSV output");

  // ood
  auto* ood_cmd = app.add_subcommand("ood", "perturb training contexts, report shift");
  double ood_mean = 0.0, ood_sigma = 0.1;
  std::string ood_out;
  ood_cmd->add_option("--data", data_dir, "dataset directory");
  ood_cmd->add_option("--mean", ood_mean, "noise mean");
  ood_cmd->add_option("--sigma", ood_sigma, "noise sigma");
  ood_cmd->add_option("--out", ood_out, "write perturbed train split here");

  // grad-check
  auto* gc_cmd = app.add_subcommand("grad-check", "finite-difference audits");
  bool simplified = false;
  gc_cmd->add_flag("--simplified-recurrence", simplified,
                   "also audit the budget recurrence without the d(x)/d(b) term");

  CLI11_PARSE(app, argc, argv);

  try {
    const json cfg = load_config(config_path);
    if (cfg.contains("seed")) seed = cfg["seed"].get<std::uint64_t>();
    if (cfg.contains("full_scale")) full_scale = cfg["full_scale"].get<bool>();
    if (cfg.contains("horizon")) horizon = cfg["horizon"].get<int>();

    if (gen->parsed()) {
      DatasetSpec dspec;
      dspec.horizon = horizon;
      dspec.seed = seed;
      if (full_scale) dspec.set_full_scale();
      if (cfg.contains("log_mean")) dspec.log_mean = cfg["log_mean"].get<double>();
      if (cfg.contains("log_sigma")) dspec.log_sigma = cfg["log_sigma"].get<double>();
      fs::create_directories(out_dir);
      DatasetBundle bundle = generate_dataset(dspec);
      if (!trace_path.empty()) {
        std::string warn;
        bundle.test = load_trace(trace_path, dspec, &warn);
        if (!warn.empty()) std::cerr << "warning: " << warn << "\n";
      }
      save_episodes(out_dir + "/train.json", bundle.train);
      save_episodes(out_dir + "/val.json", bundle.val);
      save_episodes(out_dir + "/test.json", bundle.test);
      std::cout << "wrote " << bundle.train.size() << "/" << bundle.val.size()
                << "/" << bundle.test.size() << " episodes to " << out_dir << "\n";
      return 0;
    }

    if (train_cmd->parsed()) {
      LoadedData d = load_data_dir(data_dir);
      FairnessFamily spec(d.horizon);
      ModelParams model = fresh_model(variant, spec, d.bundle.train, seed);
      TrainConfig tcfg;
      tcfg.seed = seed;
      if (cfg.contains("batch_size")) tcfg.batch_size = cfg["batch_size"].get<int>();
      TrainLog log = train_offline(model, spec, d.bundle.train, d.bundle.val, tcfg);
      save_checkpoint(ckpt_out, model);
      std::cout << "final val loss " << log.val_loss.back() << ", checkpoint "
                << ckpt_out << "\n";
      return 0;
    }

    if (online_cmd->parsed()) {
      LoadedData d = load_data_dir(data_dir);
      FairnessFamily spec(d.horizon);
      ModelParams model = fresh_model(variant, spec, d.bundle.train, seed);
      std::vector<Episode> stream;
      for (int i = 0; i < rounds; ++i)
        stream.push_back(d.bundle.train[i % d.bundle.train.size()]);
      TrainLog log = train_online(model, spec, stream, stepsize);
      save_checkpoint(ckpt_out, model);
      const auto& rl = log.round_loss;
      const int k = std::min<int>(100, rl.size());
      double head = 0.0, tail = 0.0;
      for (int i = 0; i < k; ++i) {
        head += rl[i] / k;
        tail += rl[rl.size() - k + i] / k;
      }
      std::cout << "first-" << k << " mean loss " << head << ", last-" << k
                << " mean loss " << tail << ", checkpoint " << ckpt_out << "\n";
      return 0;
    }

    if (eval_cmd->parsed() || cmp_cmd->parsed()) {
      LoadedData d = load_data_dir(data_dir);
      FairnessFamily spec(d.horizon);
      ModelParams model = load_checkpoint(ckpt_in);
      std::vector<AlgorithmEntry> algos;
      algos.push_back(make_unrolled_entry(model, spec));
      DirectPolicy policy;
      if (cmp_cmd->parsed()) {
        algos.push_back(make_opt_entry(spec));
        algos.push_back(make_equal_entry(spec));
        algos.push_back(make_avg_lt_entry(spec, calibrate_avg_lt(spec, d.bundle.train)));
        algos.push_back(make_dgd_entry(spec, default_dgd_eta(d.horizon)));
        algos.push_back(make_mw_entry(spec, default_dgd_eta(d.horizon)));
        if (!policy_ckpt.empty()) {
          policy.net = load_checkpoint(policy_ckpt);
          policy.action_scale = Vec::Constant(1, spec.x_max());
          algos.push_back(make_direct_policy_entry(policy, spec));
        }
      }
      json meta;
      meta["seed"] = seed;
      meta["data"] = data_dir;
      RunReport report = run_experiment(spec, d.bundle.test, algos, meta);
      write_report(report_path, csv_path, report);
      for (const auto& a : report.algorithms)
        std::cout << a.name << ": mean utility/step " << a.mean_utility
                  << ", remaining budget " << 100 * a.remaining_budget_frac
                  << "%, violations " << a.violations << "\n";
      return 0;
    }

    if (ood_cmd->parsed()) {
      LoadedData d = load_data_dir(data_dir);
      OodSpec ood{ood_mean, ood_sigma, seed};
      auto [perturbed, dw] = apply_ood(d.bundle.train, ood);
      std::cout << "d_W = " << dw << "\n";
      if (!ood_out.empty()) {
        fs::create_directories(fs::path(ood_out).parent_path().empty()
                                   ? "."
                                   : fs::path(ood_out).parent_path().string());
        save_episodes(ood_out, perturbed);
      }
      return 0;
    }

    if (gc_cmd->parsed()) {
      GradCheckReport rep = run_grad_checks(seed);
      std::cout << "opt-layer suite: " << rep.opt_layer_cases
                << " instances, max rel error " << rep.opt_layer_max_rel
                << (rep.opt_layer_max_rel <= 1e-4 ? " (pass)" : " (FAIL)") << "\n";
      std::cout << "pipeline suite: " << rep.pipeline_cases
                << " episodes, max rel error " << rep.pipeline_max_rel
                << (rep.pipeline_max_rel <= 1e-3 ? " (pass)" : " (FAIL)") << "\n";
      if (simplified) {
        const double simp = pipeline_grad_suite(20, seed + 1, BudgetRecurrence::simplified);
        std::cout << "simplified budget recurrence: max rel error " << simp
                  << " (expected to exceed 1e-3 on budget-active episodes)\n";
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
