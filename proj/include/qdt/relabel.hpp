#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "qdt/dataset.hpp"

namespace qdt {

// State-value estimate used for relabelling. Must be defined on every state
// id of the dataset's env and return 0 on terminal states.
using ValueFn = std::function<double(int state)>;

struct TrajectoryRelabelReport {
  int index = 0;
  int n_positions = 0;  // comparison positions (one per rewritten rtg entry)
  int n_replaced = 0;   // positions where the value estimate won
  double mean_uplift = 0.0;
  double max_uplift = 0.0;
  std::vector<int> replaced_positions;  // tau values where the branch fired

  nlohmann::json to_json() const;
};

struct RelabelReport {
  long n_positions_total = 0;
  long n_positions_replaced = 0;
  double mean_uplift = 0.0;
  double max_uplift = 0.0;
  std::vector<TrajectoryRelabelReport> per_trajectory;

  nlohmann::json to_json() const;
};

// Rewrites the return-to-go array backwards from the episode end: the
// anchor rtg[T] is 0, and each earlier entry is the reward plus either the
// next rtg or the value estimate at the next state, whichever is larger.
// Rewards, actions and the input trajectory itself are untouched. The
// report counts how many positions took the value branch and how far the
// rtg moved relative to the trajectory's plain return-to-go.
std::pair<Trajectory, TrajectoryRelabelReport> relabel_trajectory(
    const Trajectory& traj, const ValueFn& value_fn);

// Applies relabel_trajectory to every trajectory; value_fn_id is recorded
// in the output provenance (typically the Q checkpoint path).
std::pair<OfflineDataset, RelabelReport> relabel_dataset(
    const OfflineDataset& ds, const ValueFn& value_fn,
    const std::string& value_fn_id = "");

// Return-to-go values for the model input window ending at time t with
// context length k (clipped at the episode head). The last entry is the
// stored (possibly relabelled) rtg[t]; earlier entries are regenerated by
// the reward recursion so that every adjacent pair inside the window
// satisfies out[i] = rewards[lo+i] + out[i+1] exactly.
std::vector<double> window_rtg(const Trajectory& traj, int t, int k);

}  // namespace qdt
