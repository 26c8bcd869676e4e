#include "oobc/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

namespace oobc {

using nlohmann::json;

void DatasetSpec::validate() const {
  if (horizon < 2) throw std::invalid_argument("dataset: horizon must be >= 2");
  if (train_count < 1 || val_count < 1 || test_count < 1)
    throw std::invalid_argument("dataset: split counts must be >= 1");
  if (budget_lo_per_step <= 0.0 || budget_hi_per_step < budget_lo_per_step)
    throw std::invalid_argument("dataset: bad budget bounds");
  if (log_sigma < 0.0) throw std::invalid_argument("dataset: negative sigma");
  if (context_dim < 1 || num_constraints < 1)
    throw std::invalid_argument("dataset: bad dimensions");
}

namespace {

std::uint64_t episode_seed(std::uint64_t base, int split, int index) {
  // splitmix64 over a (seed, split, index) key
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(split) * 1000003ULL +
                                                    static_cast<std::uint64_t>(index) + 1ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Vec draw_budget(const DatasetSpec& dspec, std::mt19937_64& eng) {
  std::uniform_real_distribution<double> u(dspec.budget_lo_per_step * dspec.horizon,
                                           dspec.budget_hi_per_step * dspec.horizon);
  Vec b(dspec.num_constraints);
  for (int k = 0; k < dspec.num_constraints; ++k) b(k) = u(eng);
  return b;
}

Episode draw_episode(const DatasetSpec& dspec, int split, int index,
                     const char* prefix) {
  std::mt19937_64 eng(episode_seed(dspec.seed, split, index));
  std::lognormal_distribution<double> ln(dspec.log_mean, dspec.log_sigma);
  Episode ep;
  ep.id = std::string(prefix) + "-" + std::to_string(index);
  ep.budgets = draw_budget(dspec, eng);
  ep.contexts.resize(dspec.horizon);
  for (int t = 0; t < dspec.horizon; ++t) {
    Vec c(dspec.context_dim);
    for (int j = 0; j < dspec.context_dim; ++j) c(j) = ln(eng);
    ep.contexts[t] = c;
  }
  return ep;
}

}  // namespace

DatasetBundle generate_dataset(const DatasetSpec& dspec) {
  dspec.validate();
  DatasetBundle bundle;
  bundle.train.reserve(dspec.train_count);
  for (int i = 0; i < dspec.train_count; ++i)
    bundle.train.push_back(draw_episode(dspec, 0, i, "train"));
  bundle.val.reserve(dspec.val_count);
  for (int i = 0; i < dspec.val_count; ++i)
    bundle.val.push_back(draw_episode(dspec, 1, i, "val"));
  bundle.test.reserve(dspec.test_count);
  for (int i = 0; i < dspec.test_count; ++i)
    bundle.test.push_back(draw_episode(dspec, 2, i, "test"));
  return bundle;
}

void save_episodes(const std::string& path, const std::vector<Episode>& episodes) {
  json root;
  root["version"] = 1;
  json list = json::array();
  for (const auto& ep : episodes) {
    json j;
    j["id"] = ep.id;
    j["budgets"] = std::vector<double>(ep.budgets.data(),
                                       ep.budgets.data() + ep.budgets.size());
    json ctx = json::array();
    for (const auto& c : ep.contexts)
      ctx.push_back(std::vector<double>(c.data(), c.data() + c.size()));
    j["contexts"] = std::move(ctx);
    list.push_back(std::move(j));
  }
  root["episodes"] = std::move(list);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << root.dump(1, '\t') << "\n";
}

std::vector<Episode> load_episodes(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  json root = json::parse(in);
  std::vector<Episode> episodes;
  for (const auto& j : root.at("episodes")) {
    Episode ep;
    ep.id = j.at("id").get<std::string>();
    const auto b = j.at("budgets").get<std::vector<double>>();
    ep.budgets = Eigen::Map<const Vec>(b.data(), static_cast<Eigen::Index>(b.size()));
    for (const auto& row : j.at("contexts")) {
      const auto c = row.get<std::vector<double>>();
      ep.contexts.push_back(
          Eigen::Map<const Vec>(c.data(), static_cast<Eigen::Index>(c.size())));
    }
    episodes.push_back(std::move(ep));
  }
  return episodes;
}

std::vector<Episode> load_trace(const std::string& path, const DatasetSpec& dspec,
                                std::string* warning) {
  dspec.validate();
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);

  std::string line;
  int lineno = 0;
  if (!std::getline(in, line))
    throw std::runtime_error(path + ": empty trace file");
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "episode_id,t,c")
    throw std::runtime_error(path + ":1: expected header 'episode_id,t,c'");

  std::vector<double> values;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string id_field, t_field, c_field;
    if (!std::getline(ss, id_field, ',') || !std::getline(ss, t_field, ',') ||
        !std::getline(ss, c_field))
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": malformed row '" + line + "'");
    double c;
    try {
      size_t pos = 0;
      c = std::stod(c_field, &pos);
      if (pos != c_field.size()) throw std::invalid_argument(c_field);
      (void)std::stol(t_field);
    } catch (const std::exception&) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": malformed row '" + line + "'");
    }
    if (c < 0.0)
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": negative context value " + c_field);
    values.push_back(c);
  }

  const int n = dspec.horizon;
  const int full = static_cast<int>(values.size()) / n;
  const int dropped = static_cast<int>(values.size()) - full * n;
  if (warning) {
    *warning = dropped > 0 ? "dropped " + std::to_string(dropped) +
                                 " trailing row(s) not filling an episode"
                           : "";
  }

  std::vector<Episode> episodes;
  episodes.reserve(full);
  for (int i = 0; i < full; ++i) {
    std::mt19937_64 eng(episode_seed(dspec.seed, 3, i));
    Episode ep;
    ep.id = "trace-" + std::to_string(i);
    ep.budgets = draw_budget(dspec, eng);
    ep.contexts.resize(n);
    for (int t = 0; t < n; ++t)
      ep.contexts[t] = Vec::Constant(1, values[i * n + t]);
    episodes.push_back(std::move(ep));
  }
  return episodes;
}

std::vector<double> flatten_contexts(const std::vector<Episode>& episodes) {
  std::vector<double> out;
  for (const auto& ep : episodes)
    for (const auto& c : ep.contexts)
      out.insert(out.end(), c.data(), c.data() + c.size());
  return out;
}

std::pair<std::vector<Episode>, double> apply_ood(const std::vector<Episode>& episodes,
                                                  const OodSpec& ood) {
  std::vector<Episode> out = episodes;
  if (ood.mean != 0.0 || ood.sigma != 0.0) {
    std::mt19937_64 eng(ood.seed ^ 0xA02EF1C5D4B3ULL);
    std::normal_distribution<double> noise(ood.mean, ood.sigma);
    for (auto& ep : out)
      for (auto& c : ep.contexts)
        for (int j = 0; j < c.size(); ++j)
          c(j) = std::max(0.0, c(j) + noise(eng));
  }
  const double dw = wasserstein1(flatten_contexts(episodes), flatten_contexts(out));
  return {std::move(out), dw};
}

double wasserstein1(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty())
    throw std::invalid_argument("wasserstein1: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const size_t n = std::min(a.size(), b.size());
  auto at = [n](const std::vector<double>& v, size_t i) {
    // evenly spaced order statistics when sizes differ
    return v[i * v.size() / n];
  };
  double s = 0.0;
  for (size_t i = 0; i < n; ++i) s += std::abs(at(a, i) - at(b, i));
  return s / static_cast<double>(n);
}

}  // namespace oobc
