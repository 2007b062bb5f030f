#include "qdt/env.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "qdt/errors.hpp"
#include "qdt/rng.hpp"

namespace qdt {

namespace {
// Direction order: N, NE, E, SE, S, SW, W, NW. x grows east, y grows north.
constexpr int kDx[8] = {0, 1, 1, 1, 0, -1, -1, -1};
constexpr int kDy[8] = {1, 1, 0, -1, -1, -1, 0, 1};
}  // namespace

std::string to_string(RewardMode mode) {
  return mode == RewardMode::kDense ? "dense" : "delayed";
}

RewardMode reward_mode_from_string(const std::string& s) {
  if (s == "dense") return RewardMode::kDense;
  if (s == "delayed") return RewardMode::kDelayed;
  throw SchemaError("unknown reward mode: " + s);
}

nlohmann::json EnvSpec::to_json() const {
  return {{"name", name},
          {"n_states", n_states},
          {"n_actions", n_actions},
          {"episode_cap", episode_cap},
          {"reward_mode", to_string(reward_mode)},
          {"seed", seed}};
}

int Env::reset(std::uint64_t /*seed*/) {
  state_ = start_state();
  steps_ = 0;
  active_ = true;
  delayed_acc_ = 0.0;
  return state_;
}

StepResult Env::step(int action) {
  if (!active_) {
    throw ContractError("step called on a finished episode");
  }
  if (action < 0 || action >= n_actions()) {
    throw ContractError("action out of range: " + std::to_string(action));
  }
  const Transition tr = peek(state_, action);
  ++steps_;
  const bool truncated = !tr.done && steps_ >= episode_cap();

  StepResult result;
  result.next_state = tr.next;
  result.done = tr.done;
  result.truncated = truncated;
  if (reward_mode() == RewardMode::kDelayed) {
    delayed_acc_ += tr.reward;
    result.reward = (tr.done || truncated) ? delayed_acc_ : 0.0;
  } else {
    result.reward = tr.reward;
  }
  state_ = tr.next;
  if (tr.done || truncated) active_ = false;
  return result;
}

GridMazeEnv::GridMazeEnv(Layout layout) : Env(EnvSpec{}), layout_(std::move(layout)) {
  if (layout_.width < 1 || layout_.height < 1 ||
      layout_.width * layout_.height < 2) {
    throw Error("grid maze needs at least two cells");
  }
  if (layout_.episode_cap < 1) throw Error("episode_cap must be >= 1");
  if (layout_.start == layout_.goal) throw Error("start equals goal");
  if (is_wall(layout_.start.first, layout_.start.second) ||
      is_wall(layout_.goal.first, layout_.goal.second)) {
    throw Error("start/goal must not be walls");
  }
  auto in_grid = [&](const std::pair<int, int>& c) {
    return c.first >= 0 && c.first < layout_.width && c.second >= 0 &&
           c.second < layout_.height;
  };
  if (!in_grid(layout_.start) || !in_grid(layout_.goal)) {
    throw Error("start/goal outside the grid");
  }

  EnvSpec& spec = mutable_spec();
  spec.name = layout_.name;
  spec.n_states = layout_.width * layout_.height;
  spec.n_actions = 8;
  spec.episode_cap = layout_.episode_cap;
  spec.reward_mode = layout_.reward_mode;
  spec.seed = layout_.seed;

  // One uniform permutation of the eight directions per state, fixed for
  // the lifetime of the environment.
  remap_.resize(spec.n_states);
  for (int s = 0; s < spec.n_states; ++s) {
    std::array<int, 8>& perm = remap_[s];
    std::iota(perm.begin(), perm.end(), 0);
    nn::Rng rng = nn::Rng::fork(layout_.seed, static_cast<std::uint64_t>(s));
    for (int i = 7; i > 0; --i) {
      const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i + 1)));
      std::swap(perm[i], perm[j]);
    }
  }
}

bool GridMazeEnv::is_wall(int x, int y) const {
  for (const auto& w : layout_.walls) {
    if (w.first == x && w.second == y) return true;
  }
  return false;
}

int GridMazeEnv::start_state() const {
  return cell_index(layout_.start.first, layout_.start.second);
}

bool GridMazeEnv::is_terminal(int state) const {
  return state == cell_index(layout_.goal.first, layout_.goal.second);
}

Env::Transition GridMazeEnv::peek(int state, int action) const {
  if (is_terminal(state)) return {state, 0.0, true};
  const int dir = remap_[state][action];
  const int x = state % layout_.width;
  const int y = state / layout_.width;
  int nx = x + kDx[dir];
  int ny = y + kDy[dir];
  if (nx < 0 || nx >= layout_.width || ny < 0 || ny >= layout_.height ||
      is_wall(nx, ny)) {
    nx = x;
    ny = y;
  }
  const int next = cell_index(nx, ny);
  double reward = layout_.step_reward;
  bool done = false;
  if (is_terminal(next)) {
    reward += layout_.goal_reward;
    done = true;
  }
  return {next, reward, done};
}

std::unique_ptr<Env> GridMazeEnv::clone() const {
  return std::make_unique<GridMazeEnv>(*this);
}

nlohmann::json GridMazeEnv::to_json() const {
  nlohmann::json walls = nlohmann::json::array();
  for (const auto& w : layout_.walls) walls.push_back({w.first, w.second});
  return {{"type", "grid_maze"},
          {"name", layout_.name},
          {"width", layout_.width},
          {"height", layout_.height},
          {"walls", walls},
          {"start", {layout_.start.first, layout_.start.second}},
          {"goal", {layout_.goal.first, layout_.goal.second}},
          {"step_reward", layout_.step_reward},
          {"goal_reward", layout_.goal_reward},
          {"episode_cap", layout_.episode_cap},
          {"reward_mode", to_string(layout_.reward_mode)},
          {"seed", layout_.seed}};
}

ChainEnv::ChainEnv(std::vector<std::vector<int>> next, int start, int goal,
                   int episode_cap, RewardMode reward_mode, std::string name)
    : Env(EnvSpec{}), next_(std::move(next)), start_(start), goal_(goal) {
  const int n = static_cast<int>(next_.size());
  if (n < 2) throw Error("chain env needs at least two states");
  if (start_ < 0 || start_ >= n || goal_ < 0 || goal_ >= n || start_ == goal_) {
    throw Error("bad start/goal");
  }
  const std::size_t n_actions = next_.front().size();
  for (const auto& row : next_) {
    if (row.size() != n_actions) throw Error("ragged transition table");
    for (int t : row) {
      if (t < 0 || t >= n) throw Error("transition target out of range");
    }
  }

  EnvSpec& spec = mutable_spec();
  spec.name = std::move(name);
  spec.n_states = n;
  spec.n_actions = static_cast<int>(n_actions);
  spec.episode_cap = episode_cap;
  spec.reward_mode = reward_mode;
  spec.seed = 0;

  // Goal must be reachable from the start.
  std::vector<bool> seen(n, false);
  std::vector<int> stack{start_};
  seen[start_] = true;
  while (!stack.empty()) {
    const int s = stack.back();
    stack.pop_back();
    for (int t : next_[s]) {
      if (!seen[t]) {
        seen[t] = true;
        stack.push_back(t);
      }
    }
  }
  if (!seen[goal_]) throw Error("goal unreachable from start");
}

std::unique_ptr<ChainEnv> ChainEnv::linear(int n_states, RewardMode mode) {
  std::vector<std::vector<int>> next(n_states);
  for (int s = 0; s < n_states; ++s) {
    next[s] = {std::min(s + 1, n_states - 1), std::max(s - 1, 0)};
  }
  return std::make_unique<ChainEnv>(std::move(next), 0, n_states - 1,
                                    4 * n_states, mode,
                                    "chain" + std::to_string(n_states));
}

std::unique_ptr<ChainEnv> ChainEnv::stitch_example(RewardMode mode) {
  // 0 start, 1 junction, 2 goal, 3 detour, 4..6 slow tail. The shortest
  // path is 0 -> 1 -> 2 (return -2).
  std::vector<std::vector<int>> next = {
      {1, 3},  // 0
      {2, 4},  // 1
      {2, 2},  // 2 (absorbing goal)
      {1, 3},  // 3
      {5, 4},  // 4
      {6, 5},  // 5
      {2, 6},  // 6
  };
  return std::make_unique<ChainEnv>(std::move(next), 0, 2, 8, mode, "stitch");
}

std::vector<int> ChainEnv::scripted_trajectory_good_tail() {
  return {1, 0, 0};  // 0 -> 3 -> 1 -> 2, return -3, optimal after the start
}

std::vector<int> ChainEnv::scripted_trajectory_good_head() {
  return {0, 1, 0, 0, 0};  // 0 -> 1 -> 4 -> 5 -> 6 -> 2, return -5
}

Env::Transition ChainEnv::peek(int state, int action) const {
  if (state == goal_) return {state, 0.0, true};
  const int next = next_[state][action];
  return {next, -1.0, next == goal_};
}

int ChainEnv::start_state() const { return start_; }

bool ChainEnv::is_terminal(int state) const { return state == goal_; }

std::unique_ptr<Env> ChainEnv::clone() const {
  return std::make_unique<ChainEnv>(*this);
}

nlohmann::json ChainEnv::to_json() const {
  return {{"type", "chain"},
          {"name", spec().name},
          {"next", next_},
          {"start", start_},
          {"goal", goal_},
          {"episode_cap", spec().episode_cap},
          {"reward_mode", to_string(spec().reward_mode)}};
}

int OptimalValues::greedy_action(int state) const {
  const auto& qs = q[state];
  return static_cast<int>(std::max_element(qs.begin(), qs.end()) - qs.begin());
}

OptimalValues optimal_values(const Env& env, double gamma, double tol,
                             int max_iterations) {
  const int n_states = env.n_states();
  const int n_actions = env.n_actions();
  OptimalValues out;
  out.v.assign(n_states, 0.0);
  out.q.assign(n_states, std::vector<double>(n_actions, 0.0));

  std::vector<double> v_next(n_states, 0.0);
  int iter = 0;
  for (; iter < max_iterations; ++iter) {
    double max_delta = 0.0;
    for (int s = 0; s < n_states; ++s) {
      double best = -std::numeric_limits<double>::infinity();
      for (int a = 0; a < n_actions; ++a) {
        const Env::Transition tr = env.peek(s, a);
        const double q = tr.reward + (tr.done ? 0.0 : gamma * out.v[tr.next]);
        out.q[s][a] = q;
        best = std::max(best, q);
      }
      if (env.is_terminal(s)) best = 0.0;
      v_next[s] = best;
      max_delta = std::max(max_delta, std::abs(v_next[s] - out.v[s]));
    }
    out.v = v_next;
    if (max_delta <= tol) break;
  }
  if (iter >= max_iterations) {
    throw Error("value iteration did not converge within " +
                std::to_string(max_iterations) + " sweeps");
  }
  out.iterations = iter + 1;

  // One more Q refresh against the converged V.
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) {
      const Env::Transition tr = env.peek(s, a);
      out.q[s][a] = tr.reward + (tr.done ? 0.0 : gamma * out.v[tr.next]);
    }
  }

  // Undiscounted return of the greedy policy from the start state.
  std::unique_ptr<Env> sim = env.clone();
  int s = sim->reset(0);
  double total = 0.0;
  while (sim->episode_active()) {
    const StepResult r = sim->step(out.greedy_action(s));
    // Sum dense-equivalent returns; in delayed mode the rewards arrive all
    // at once at the end, which adds up to the same number.
    total += r.reward;
    s = r.next_state;
  }
  out.optimal_return_from_start = total;
  return out;
}

std::unique_ptr<Env> make_builtin_env(const std::string& name,
                                      std::uint64_t seed) {
  std::string base = name;
  RewardMode mode = RewardMode::kDense;
  const std::string suffix = "-delayed";
  if (base.size() > suffix.size() &&
      base.compare(base.size() - suffix.size(), suffix.size(), suffix) == 0) {
    mode = RewardMode::kDelayed;
    base = base.substr(0, base.size() - suffix.size());
  }

  if (base == "simple6x6" || base == "simple6x6-walled") {
    GridMazeEnv::Layout layout;
    layout.name = base + (mode == RewardMode::kDelayed ? "-delayed" : "");
    layout.reward_mode = mode;
    layout.seed = seed;
    if (base == "simple6x6-walled") {
      layout.walls = {{1, 1}, {2, 2}, {3, 3}, {4, 4}};
    }
    return std::make_unique<GridMazeEnv>(layout);
  }
  if (base == "stitch") return ChainEnv::stitch_example(mode);
  if (base.rfind("chain", 0) == 0) {
    const int n = std::stoi(base.substr(5));
    return ChainEnv::linear(n, mode);
  }
  throw Error("unknown builtin env: " + name);
}

std::unique_ptr<Env> env_from_json(const nlohmann::json& spec) {
  const std::string type = spec.at("type").get<std::string>();
  if (type == "grid_maze") {
    GridMazeEnv::Layout layout;
    layout.width = spec.at("width").get<int>();
    layout.height = spec.at("height").get<int>();
    layout.walls.clear();
    for (const auto& w : spec.value("walls", nlohmann::json::array())) {
      layout.walls.emplace_back(w.at(0).get<int>(), w.at(1).get<int>());
    }
    if (spec.contains("start")) {
      layout.start = {spec["start"].at(0).get<int>(),
                      spec["start"].at(1).get<int>()};
    }
    if (spec.contains("goal")) {
      layout.goal = {spec["goal"].at(0).get<int>(),
                     spec["goal"].at(1).get<int>()};
    }
    layout.step_reward = spec.value("step_reward", -10.0);
    layout.goal_reward = spec.value("goal_reward", 100.0);
    layout.episode_cap = spec.value("episode_cap", 50);
    layout.reward_mode =
        reward_mode_from_string(spec.value("reward_mode", std::string("dense")));
    layout.seed = spec.value("seed", std::uint64_t{0});
    layout.name = spec.value("name", std::string("custom"));
    return std::make_unique<GridMazeEnv>(layout);
  }
  if (type == "chain") {
    const RewardMode mode =
        reward_mode_from_string(spec.value("reward_mode", std::string("dense")));
    if (spec.contains("next")) {
      auto next = spec.at("next").get<std::vector<std::vector<int>>>();
      return std::make_unique<ChainEnv>(
          std::move(next), spec.at("start").get<int>(),
          spec.at("goal").get<int>(), spec.value("episode_cap", 50), mode,
          spec.value("name", std::string("custom")));
    }
    const std::string layout = spec.value("layout", std::string("linear"));
    if (layout == "stitch") return ChainEnv::stitch_example(mode);
    if (layout == "linear") {
      return ChainEnv::linear(spec.at("n_states").get<int>(), mode);
    }
    throw SchemaError("unknown chain layout: " + layout);
  }
  throw SchemaError("unknown env type: " + type);
}

std::unique_ptr<Env> make_env(const std::string& name_or_path,
                              std::uint64_t seed) {
  if (std::filesystem::exists(name_or_path)) {
    std::ifstream is(name_or_path);
    nlohmann::json spec;
    try {
      is >> spec;
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError("bad env spec file " + name_or_path + ": " + e.what());
    }
    if (!spec.contains("seed")) spec["seed"] = seed;
    return env_from_json(spec);
  }
  return make_builtin_env(name_or_path, seed);
}

}  // namespace qdt
