#include "qdt/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "qdt/errors.hpp"
#include "qdt/rng.hpp"

namespace qdt {

double Trajectory::total_return() const {
  double s = 0.0;
  for (double r : rewards) s += r;
  return s;
}

void Trajectory::validate(int n_states, int n_actions) const {
  const std::size_t t = actions.size();
  if (t == 0) throw SchemaError("empty trajectory");
  if (rewards.size() != t) throw SchemaError("rewards/actions length mismatch");
  if (states.size() != t + 1) throw SchemaError("states must have T+1 entries");
  if (!rtg.empty() && rtg.size() != t + 1) {
    throw SchemaError("rtg must have T+1 entries");
  }
  if (n_states >= 0) {
    for (int s : states) {
      if (s < 0 || s >= n_states) throw SchemaError("state id out of range");
    }
  }
  if (n_actions >= 0) {
    for (int a : actions) {
      if (a < 0 || a >= n_actions) throw SchemaError("action id out of range");
    }
  }
}

void compute_rtg(Trajectory& traj) {
  const std::size_t t = traj.rewards.size();
  traj.rtg.assign(t + 1, 0.0);
  for (std::size_t i = t; i-- > 0;) {
    traj.rtg[i] = traj.rewards[i] + traj.rtg[i + 1];
  }
}

nlohmann::json Provenance::to_json() const {
  return {{"policy", policy},
          {"seed", seed},
          {"filters", filters},
          {"value_fn", value_fn}};
}

Provenance Provenance::from_json(const nlohmann::json& j) {
  Provenance p;
  p.policy = j.value("policy", std::string{});
  p.seed = j.value("seed", std::uint64_t{0});
  p.filters = j.value("filters", std::vector<std::string>{});
  p.value_fn = j.value("value_fn", std::string{});
  return p;
}

nlohmann::json DatasetStats::to_json() const {
  return {{"n_episodes", n_episodes},
          {"n_steps", n_steps},
          {"max_return", max_return},
          {"min_return", min_return},
          {"mean_return", mean_return}};
}

DatasetStats DatasetStats::from_json(const nlohmann::json& j) {
  DatasetStats s;
  s.n_episodes = j.at("n_episodes").get<int>();
  s.n_steps = j.at("n_steps").get<long>();
  s.max_return = j.at("max_return").get<double>();
  s.min_return = j.at("min_return").get<double>();
  s.mean_return = j.at("mean_return").get<double>();
  return s;
}

DatasetStats OfflineDataset::stats() const {
  DatasetStats s;
  s.n_episodes = static_cast<int>(trajectories.size());
  if (trajectories.empty()) return s;
  double total = 0.0;
  s.max_return = -std::numeric_limits<double>::infinity();
  s.min_return = std::numeric_limits<double>::infinity();
  for (const Trajectory& t : trajectories) {
    const double ret = t.total_return();
    s.n_steps += t.length();
    s.max_return = std::max(s.max_return, ret);
    s.min_return = std::min(s.min_return, ret);
    total += ret;
  }
  s.mean_return = total / static_cast<double>(s.n_episodes);
  return s;
}

std::size_t OfflineDataset::n_timesteps() const {
  std::size_t n = 0;
  for (const Trajectory& t : trajectories) n += t.length();
  return n;
}

namespace {

Trajectory rollout_episode(const Env& env, std::uint64_t episode_seed,
                           nn::Rng& action_rng, double epsilon,
                           const OptimalValues* oracle) {
  std::unique_ptr<Env> sim = env.clone();
  Trajectory traj;
  int s = sim->reset(episode_seed);
  traj.states.push_back(s);
  while (sim->episode_active()) {
    int a;
    if (oracle != nullptr && action_rng.uniform() >= epsilon) {
      a = oracle->greedy_action(s);
    } else {
      a = static_cast<int>(action_rng.below(env.n_actions()));
    }
    const StepResult r = sim->step(a);
    traj.actions.push_back(a);
    traj.rewards.push_back(r.reward);
    traj.states.push_back(r.next_state);
    traj.truncated = r.truncated;
    s = r.next_state;
  }
  compute_rtg(traj);
  return traj;
}

OfflineDataset empty_like(const Env& env) {
  OfflineDataset ds;
  ds.env_spec = env.spec();
  ds.env_json = env.to_json();
  return ds;
}

}  // namespace

OfflineDataset generate_random(const Env& env, int n_episodes,
                               std::uint64_t seed) {
  if (n_episodes < 1) throw Error("n_episodes must be >= 1");
  OfflineDataset ds = empty_like(env);
  ds.provenance.policy = "uniform_random";
  ds.provenance.seed = seed;
  for (int i = 0; i < n_episodes; ++i) {
    nn::Rng rng = nn::Rng::fork(seed, static_cast<std::uint64_t>(i));
    ds.trajectories.push_back(
        rollout_episode(env, seed + static_cast<std::uint64_t>(i), rng,
                        /*epsilon=*/1.0, /*oracle=*/nullptr));
  }
  return ds;
}

OfflineDataset generate_random_filtered(const Env& env, int n_surviving,
                                        double threshold, std::uint64_t seed) {
  if (n_surviving < 1) throw Error("n_surviving must be >= 1");
  OfflineDataset ds = empty_like(env);
  ds.provenance.policy = "uniform_random";
  ds.provenance.seed = seed;
  ds.provenance.filters.push_back("max_return<=" + std::to_string(threshold));
  // Generation cap so a miscooked threshold cannot spin forever.
  const int budget = 1000 * n_surviving;
  for (int i = 0; i < budget; ++i) {
    nn::Rng rng = nn::Rng::fork(seed, static_cast<std::uint64_t>(i));
    Trajectory traj =
        rollout_episode(env, seed + static_cast<std::uint64_t>(i), rng, 1.0,
                        nullptr);
    if (traj.total_return() <= threshold) {
      ds.trajectories.push_back(std::move(traj));
      if (static_cast<int>(ds.trajectories.size()) == n_surviving) return ds;
    }
  }
  throw Error("could not collect enough episodes under the return filter");
}

OfflineDataset generate_epsilon_ramp(const Env& env,
                                     const OptimalValues& oracle,
                                     int n_episodes, std::uint64_t seed) {
  if (n_episodes < 1) throw Error("n_episodes must be >= 1");
  OfflineDataset ds = empty_like(env);
  ds.provenance.policy = "epsilon_greedy_ramp";
  ds.provenance.seed = seed;
  for (int i = 0; i < n_episodes; ++i) {
    const double eps =
        n_episodes == 1
            ? 1.0
            : 1.0 - static_cast<double>(i) / static_cast<double>(n_episodes - 1);
    nn::Rng rng = nn::Rng::fork(seed, static_cast<std::uint64_t>(i));
    ds.trajectories.push_back(rollout_episode(
        env, seed + static_cast<std::uint64_t>(i), rng, eps, &oracle));
  }
  return ds;
}

OfflineDataset filter_max_return(const OfflineDataset& ds, double threshold) {
  OfflineDataset out;
  out.env_spec = ds.env_spec;
  out.env_json = ds.env_json;
  out.provenance = ds.provenance;
  out.provenance.filters.push_back("max_return<=" + std::to_string(threshold));
  for (const Trajectory& t : ds.trajectories) {
    if (t.total_return() <= threshold) out.trajectories.push_back(t);
  }
  if (out.trajectories.empty()) {
    throw Error("filter_max_return removed every trajectory");
  }
  return out;
}

OfflineDataset remove_top_fraction(const OfflineDataset& ds, double x_percent) {
  if (x_percent < 0.0 || x_percent >= 100.0) {
    throw Error("x_percent must be in [0, 100)");
  }
  const std::size_t n = ds.trajectories.size();
  const std::size_t k = static_cast<std::size_t>(
      std::floor(x_percent / 100.0 * static_cast<double>(n) + 0.5));

  // Stable sort by return descending; among equal returns the earlier
  // trajectory sorts first and is removed first.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return ds.trajectories[a].total_return() > ds.trajectories[b].total_return();
  });
  std::vector<bool> removed(n, false);
  for (std::size_t i = 0; i < k; ++i) removed[order[i]] = true;

  OfflineDataset out;
  out.env_spec = ds.env_spec;
  out.env_json = ds.env_json;
  out.provenance = ds.provenance;
  out.provenance.filters.push_back("remove_top_fraction=" +
                                   std::to_string(x_percent));
  for (std::size_t i = 0; i < n; ++i) {
    if (!removed[i]) out.trajectories.push_back(ds.trajectories[i]);
  }
  if (out.trajectories.empty()) {
    throw Error("remove_top_fraction removed every trajectory");
  }
  return out;
}

void save_dataset(const OfflineDataset& ds, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open dataset for writing: " + path);
  nlohmann::json header = {{"schema_version", 1},
                           {"env", ds.env_json},
                           {"env_spec", ds.env_spec.to_json()},
                           {"provenance", ds.provenance.to_json()},
                           {"stats", ds.stats().to_json()}};
  os << header.dump() << "\n";
  for (const Trajectory& t : ds.trajectories) {
    nlohmann::json line = {{"states", t.states},
                           {"actions", t.actions},
                           {"rewards", t.rewards},
                           {"rtg", t.rtg},
                           {"truncated", t.truncated}};
    os << line.dump() << "\n";
  }
  if (!os) throw IoError("failed writing dataset: " + path);
}

OfflineDataset load_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open dataset: " + path);
  std::string line;
  if (!std::getline(is, line)) throw SchemaError("dataset file is empty");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("bad dataset header: ") + e.what());
  }
  if (header.value("schema_version", -1) != 1) {
    throw SchemaError("unsupported dataset schema_version");
  }

  OfflineDataset ds;
  ds.env_json = header.at("env");
  const nlohmann::json& spec = header.at("env_spec");
  ds.env_spec.name = spec.at("name").get<std::string>();
  ds.env_spec.n_states = spec.at("n_states").get<int>();
  ds.env_spec.n_actions = spec.at("n_actions").get<int>();
  ds.env_spec.episode_cap = spec.at("episode_cap").get<int>();
  ds.env_spec.reward_mode =
      reward_mode_from_string(spec.at("reward_mode").get<std::string>());
  ds.env_spec.seed = spec.at("seed").get<std::uint64_t>();
  ds.provenance = Provenance::from_json(header.at("provenance"));

  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError("bad trajectory record at line " +
                        std::to_string(line_no) + ": " + e.what());
    }
    Trajectory t;
    try {
      t.states = j.at("states").get<std::vector<int>>();
      t.actions = j.at("actions").get<std::vector<int>>();
      t.rewards = j.at("rewards").get<std::vector<double>>();
      t.rtg = j.at("rtg").get<std::vector<double>>();
      t.truncated = j.at("truncated").get<bool>();
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError("bad trajectory record at line " +
                        std::to_string(line_no) + ": " + e.what());
    }
    try {
      t.validate(ds.env_spec.n_states, ds.env_spec.n_actions);
    } catch (const SchemaError& e) {
      throw SchemaError("line " + std::to_string(line_no) + ": " + e.what());
    }
    ds.trajectories.push_back(std::move(t));
  }

  const DatasetStats stored = DatasetStats::from_json(header.at("stats"));
  const DatasetStats fresh = ds.stats();
  if (stored.n_episodes != fresh.n_episodes || stored.n_steps != fresh.n_steps ||
      stored.max_return != fresh.max_return ||
      stored.min_return != fresh.min_return ||
      stored.mean_return != fresh.mean_return) {
    throw SchemaError("dataset stats do not match its trajectories");
  }
  return ds;
}

}  // namespace qdt
