#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace qdt {

enum class RewardMode { kDense, kDelayed };

std::string to_string(RewardMode mode);
RewardMode reward_mode_from_string(const std::string& s);

struct EnvSpec {
  std::string name;  // builtin name or "custom"
  int n_states = 0;
  int n_actions = 0;
  int episode_cap = 0;
  RewardMode reward_mode = RewardMode::kDense;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
};

struct StepResult {
  int next_state = 0;
  double reward = 0.0;
  bool done = false;
  bool truncated = false;
};

// Deterministic finite-state MDP with enumerable dynamics. Concrete
// environments implement the pure transition function peek(); episode
// bookkeeping (step cap, truncation, delayed-reward accumulation) lives
// here so both environments share identical semantics.
//
// In delayed mode every non-final step pays 0 and the final step pays the
// accumulated dense return, so episode returns match dense mode exactly.
class Env {
 public:
  virtual ~Env() = default;

  const EnvSpec& spec() const { return spec_; }
  int n_states() const { return spec_.n_states; }
  int n_actions() const { return spec_.n_actions; }
  int episode_cap() const { return spec_.episode_cap; }
  RewardMode reward_mode() const { return spec_.reward_mode; }

  // Pure dynamics with dense-mode rewards.
  struct Transition {
    int next = 0;
    double reward = 0.0;
    bool done = false;
  };
  virtual Transition peek(int state, int action) const = 0;
  virtual int start_state() const = 0;
  virtual bool is_terminal(int state) const = 0;
  virtual std::unique_ptr<Env> clone() const = 0;
  virtual nlohmann::json to_json() const = 0;

  // Begins a new episode and returns the start state. These environments
  // are deterministic, so the seed only fixes the episode identity.
  int reset(std::uint64_t seed);

  // Throws ContractError when the episode is already finished.
  StepResult step(int action);

  int state() const { return state_; }
  int steps_taken() const { return steps_; }
  bool episode_active() const { return active_; }

 protected:
  explicit Env(EnvSpec spec) : spec_(std::move(spec)) {}
  EnvSpec& mutable_spec() { return spec_; }

 private:
  EnvSpec spec_;
  int state_ = 0;
  int steps_ = 0;
  bool active_ = false;
  double delayed_acc_ = 0.0;
};

// 2-D grid with eight movement directions and a per-state remap of action
// indices (a fixed uniform permutation drawn from the env seed). Blocked
// moves keep the agent in place and still cost the step reward. Reaching
// the goal pays step_reward + goal_reward on that step.
class GridMazeEnv : public Env {
 public:
  struct Layout {
    int width = 6;
    int height = 6;
    std::vector<std::pair<int, int>> walls;  // (x, y) cells
    std::pair<int, int> start{0, 0};         // bottom-left
    std::pair<int, int> goal{5, 5};          // top-right
    double step_reward = -10.0;
    double goal_reward = 100.0;
    int episode_cap = 50;
    RewardMode reward_mode = RewardMode::kDense;
    std::uint64_t seed = 0;
    std::string name = "custom";
  };

  explicit GridMazeEnv(Layout layout);

  Transition peek(int state, int action) const override;
  int start_state() const override;
  bool is_terminal(int state) const override;
  std::unique_ptr<Env> clone() const override;
  nlohmann::json to_json() const override;

  // Direction index actually applied when taking `action` in `state`.
  int remapped_action(int state, int action) const {
    return remap_[state][action];
  }

  int cell_index(int x, int y) const { return y * layout_.width + x; }
  const Layout& layout() const { return layout_; }

 private:
  bool is_wall(int x, int y) const;

  Layout layout_;
  std::vector<std::array<int, 8>> remap_;  // per-state permutation of 0..7
};

// Small hand-specified state graphs with -1 reward per step, for the
// shortest-path chain tasks. Transitions are an explicit table.
class ChainEnv : public Env {
 public:
  ChainEnv(std::vector<std::vector<int>> next, int start, int goal,
           int episode_cap, RewardMode reward_mode, std::string name);

  // States 0..n-1 in a line; action 0 moves right, action 1 moves left
  // (staying put at the ends). Optimal return from state 0 is -(n-1).
  static std::unique_ptr<ChainEnv> linear(
      int n_states, RewardMode mode = RewardMode::kDense);

  // Branching graph where the optimal path only appears split across two
  // demonstration trajectories (see scripted_trajectory_*). Action 0 from
  // the start is the optimal first move but belongs to the worse
  // demonstration.
  static std::unique_ptr<ChainEnv> stitch_example(
      RewardMode mode = RewardMode::kDense);

  // Action sequences for the two demonstrations on stitch_example().
  static std::vector<int> scripted_trajectory_good_tail();  // return -3
  static std::vector<int> scripted_trajectory_good_head();  // return -5

  Transition peek(int state, int action) const override;
  int start_state() const override;
  bool is_terminal(int state) const override;
  std::unique_ptr<Env> clone() const override;
  nlohmann::json to_json() const override;

 private:
  std::vector<std::vector<int>> next_;
  int start_;
  int goal_;
};

struct OptimalValues {
  std::vector<double> v;                // V*(s)
  std::vector<std::vector<double>> q;   // Q*(s, a)
  double optimal_return_from_start = 0; // undiscounted, greedy on Q*
  int iterations = 0;

  int greedy_action(int state) const;
};

// Exact value iteration to a fixed point. Throws when the sweep budget is
// exhausted before the tolerance is met (e.g. gamma = 1 with unreachable
// goals).
OptimalValues optimal_values(const Env& env, double gamma, double tol = 1e-10,
                             int max_iterations = 100000);

// Builtins: simple6x6, simple6x6-walled, chain10, stitch. A "-delayed"
// suffix selects the delayed reward mode (e.g. simple6x6-delayed).
std::unique_ptr<Env> make_builtin_env(const std::string& name,
                                      std::uint64_t seed = 0);

std::unique_ptr<Env> env_from_json(const nlohmann::json& spec);

// Accepts a builtin name or a path to a JSON spec file.
std::unique_ptr<Env> make_env(const std::string& name_or_path,
                              std::uint64_t seed = 0);

}  // namespace qdt
