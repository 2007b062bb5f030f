#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "qdt/env.hpp"

namespace qdt {

// One episode. Index convention: states s_0..s_T, actions/rewards 0..T-1,
// rtg has T+1 entries with rtg[T] = 0 before any relabelling.
struct Trajectory {
  std::vector<int> states;
  std::vector<int> actions;
  std::vector<double> rewards;
  std::vector<double> rtg;
  bool truncated = false;

  int length() const { return static_cast<int>(actions.size()); }
  double total_return() const;

  // Throws SchemaError if the length invariants do not hold.
  void validate(int n_states = -1, int n_actions = -1) const;
};

// Backward cumulative sum of rewards into rtg (rtg[T] = 0).
void compute_rtg(Trajectory& traj);

struct Provenance {
  std::string policy;
  std::uint64_t seed = 0;
  std::vector<std::string> filters;
  std::string value_fn;  // checkpoint identity once relabelled

  nlohmann::json to_json() const;
  static Provenance from_json(const nlohmann::json& j);
};

struct DatasetStats {
  int n_episodes = 0;
  long n_steps = 0;
  double max_return = 0.0;
  double min_return = 0.0;
  double mean_return = 0.0;

  nlohmann::json to_json() const;
  static DatasetStats from_json(const nlohmann::json& j);
};

struct OfflineDataset {
  std::vector<Trajectory> trajectories;
  EnvSpec env_spec;
  nlohmann::json env_json;  // full spec, enough to rebuild the env
  Provenance provenance;

  DatasetStats stats() const;
  std::size_t n_timesteps() const;
};

// Uniform-random behaviour policy; episode i is seeded with seed + i.
OfflineDataset generate_random(const Env& env, int n_episodes,
                               std::uint64_t seed);

// Keeps generating random episodes until n_surviving of them have total
// return <= threshold, so the filtered dataset has a fixed episode count.
OfflineDataset generate_random_filtered(const Env& env, int n_surviving,
                                        double threshold, std::uint64_t seed);

// Mixed-quality dataset: episode i follows an epsilon-greedy policy on the
// oracle Q*, with epsilon ramping linearly from 1 (uniform random) down to
// 0 (optimal) across episodes. A toy stand-in for a replay buffer written
// by an improving agent.
OfflineDataset generate_epsilon_ramp(const Env& env,
                                     const OptimalValues& oracle,
                                     int n_episodes, std::uint64_t seed);

// Keeps trajectories with total return <= threshold. Errors when nothing
// survives.
OfflineDataset filter_max_return(const OfflineDataset& ds, double threshold);

// Removes the best x_percent% of trajectories by total return (ties broken
// by earlier original position being removed first). The count removed is
// round(x/100 * N). Errors when nothing survives.
OfflineDataset remove_top_fraction(const OfflineDataset& ds, double x_percent);

// JSON-lines format: line 1 is a header record, then one trajectory per
// line. See docs/MANUAL.md. Loads validate lengths, id ranges against the
// header env spec, and that the stored stats match a recomputation.
void save_dataset(const OfflineDataset& ds, const std::string& path);
OfflineDataset load_dataset(const std::string& path);

}  // namespace qdt
