#include <deque>
#include <set>

#include "doctest.h"
#include "json.hpp"
#include "qdt/env.hpp"
#include "qdt/errors.hpp"
#include "qdt/rng.hpp"

using namespace qdt;

namespace {

// Independent shortest-path oracle (breadth-first over the raw dynamics).
int bfs_steps_to_goal(const Env& env) {
  std::deque<int> frontier{env.start_state()};
  std::vector<int> dist(env.n_states(), -1);
  dist[env.start_state()] = 0;
  while (!frontier.empty()) {
    const int s = frontier.front();
    frontier.pop_front();
    if (env.is_terminal(s)) return dist[s];
    for (int a = 0; a < env.n_actions(); ++a) {
      const Env::Transition tr = env.peek(s, a);
      if (dist[tr.next] < 0) {
        dist[tr.next] = dist[s] + 1;
        frontier.push_back(tr.next);
      }
    }
  }
  return -1;
}

// Action whose per-state remap lands on the wanted direction.
int action_for_direction(const GridMazeEnv& env, int state, int direction) {
  for (int a = 0; a < 8; ++a) {
    if (env.remapped_action(state, a) == direction) return a;
  }
  return -1;
}

}  // namespace

TEST_CASE("maze reset starts bottom-left and is deterministic") {
  auto env = make_builtin_env("simple6x6", 7);
  const auto* maze = dynamic_cast<GridMazeEnv*>(env.get());
  REQUIRE(maze != nullptr);
  CHECK(env->reset(0) == maze->cell_index(0, 0));
  CHECK(env->reset(3) == env->reset(3));
  CHECK(env->n_states() == 36);
  CHECK(env->n_actions() == 8);
  CHECK(env->episode_cap() == 50);

  auto chain = make_builtin_env("chain10");
  CHECK(chain->reset(0) == 0);  // leftmost
}

TEST_CASE("optimal diagonal path earns +50") {
  auto env = make_builtin_env("simple6x6", 13);
  const auto& maze = dynamic_cast<const GridMazeEnv&>(*env);
  int s = env->reset(0);
  double total = 0.0;
  std::vector<double> rewards;
  for (int i = 0; i < 5; ++i) {
    const int a = action_for_direction(maze, s, 1);  // NE
    REQUIRE(a >= 0);
    const StepResult r = env->step(a);
    rewards.push_back(r.reward);
    total += r.reward;
    s = r.next_state;
  }
  CHECK(total == 50.0);
  CHECK(!env->episode_active());
  CHECK(rewards.back() == 90.0);  // -10 step, +100 goal

  SUBCASE("delayed mode pays everything at the end") {
    auto delayed = make_builtin_env("simple6x6-delayed", 13);
    const auto& dmaze = dynamic_cast<const GridMazeEnv&>(*delayed);
    int ds = delayed->reset(0);
    std::vector<double> drewards;
    for (int i = 0; i < 5; ++i) {
      const StepResult r = delayed->step(action_for_direction(dmaze, ds, 1));
      drewards.push_back(r.reward);
      ds = r.next_state;
    }
    CHECK(drewards == std::vector<double>{0, 0, 0, 0, 50});
  }
}

TEST_CASE("an episode that never reaches the goal truncates at the cap") {
  auto env = make_builtin_env("simple6x6", 21);
  const auto& maze = dynamic_cast<const GridMazeEnv&>(*env);
  int s = env->reset(0);
  const int stay = action_for_direction(maze, s, 6);  // W is blocked at (0,0)
  double total = 0.0;
  StepResult last;
  for (int i = 0; i < 50; ++i) {
    last = env->step(stay);
    total += last.reward;
    CHECK(last.next_state == s);  // blocked moves keep position
  }
  CHECK(total == -500.0);
  CHECK(last.truncated);
  CHECK(!last.done);
  CHECK_THROWS_AS(env->step(stay), ContractError);
}

TEST_CASE("determinism: same env, seed and actions give the same trajectory") {
  for (const char* name : {"simple6x6", "chain10", "stitch"}) {
    auto run = [&] {
      auto env = make_builtin_env(name, 5);
      nn::Rng rng(17);
      std::vector<int> visited{env->reset(2)};
      while (env->episode_active()) {
        const StepResult r =
            env->step(static_cast<int>(rng.below(env->n_actions())));
        visited.push_back(r.next_state);
      }
      return visited;
    };
    CHECK(run() == run());
  }
}

TEST_CASE("action remap is a bijection per state") {
  auto env = make_builtin_env("simple6x6", 99);
  const auto& maze = dynamic_cast<const GridMazeEnv&>(*env);
  bool any_nontrivial = false;
  for (int s = 0; s < env->n_states(); ++s) {
    std::set<int> image;
    for (int a = 0; a < 8; ++a) {
      const int d = maze.remapped_action(s, a);
      image.insert(d);
      // applying the remap then its inverse is the identity
      CHECK(action_for_direction(maze, s, d) == a);
      if (d != a) any_nontrivial = true;
    }
    CHECK(image.size() == 8);
  }
  CHECK(any_nontrivial);
}

TEST_CASE("delayed-mode returns match dense-mode returns exactly") {
  for (std::uint64_t seed : {0ULL, 1ULL, 2ULL, 3ULL}) {
    auto dense = make_builtin_env("simple6x6", 4);
    auto delayed = make_builtin_env("simple6x6-delayed", 4);
    nn::Rng rng(seed);
    double dense_total = 0.0, delayed_total = 0.0;
    dense->reset(seed);
    delayed->reset(seed);
    while (dense->episode_active()) {
      const int a = static_cast<int>(rng.below(8));
      dense_total += dense->step(a).reward;
      delayed_total += delayed->step(a).reward;
    }
    CHECK(!delayed->episode_active());
    CHECK(dense_total == delayed_total);
  }
}

TEST_CASE("value iteration oracle") {
  SUBCASE("default maze optimum is +50 from the start") {
    auto env = make_builtin_env("simple6x6", 3);
    const OptimalValues opt = optimal_values(*env, 1.0);
    CHECK(opt.optimal_return_from_start == 50.0);
    CHECK(bfs_steps_to_goal(*env) == 5);
  }

  SUBCASE("walled variant needs one extra step") {
    auto env = make_builtin_env("simple6x6-walled", 3);
    const OptimalValues opt = optimal_values(*env, 1.0);
    CHECK(opt.optimal_return_from_start == 40.0);
    CHECK(bfs_steps_to_goal(*env) == 6);
  }

  SUBCASE("terminal states sit at exactly zero") {
    auto env = make_builtin_env("chain2");
    const OptimalValues opt = optimal_values(*env, 1.0);
    CHECK(opt.v[1] == 0.0);
  }

  SUBCASE("linear chains cost their length") {
    for (int n : {3, 7, 10, 16}) {
      auto env = ChainEnv::linear(n);
      const OptimalValues opt = optimal_values(*env, 1.0);
      CHECK(opt.optimal_return_from_start == -double(n - 1));
      CHECK(bfs_steps_to_goal(*env) == n - 1);  // brute-force agreement
    }
  }

  SUBCASE("greedy rollout on Q* achieves the reported optimum") {
    for (const char* name : {"simple6x6", "simple6x6-walled", "stitch"}) {
      auto env = make_builtin_env(name, 11);
      const OptimalValues opt = optimal_values(*env, 1.0);
      auto sim = env->clone();
      int s = sim->reset(0);
      double total = 0.0;
      while (sim->episode_active()) {
        const StepResult r = sim->step(opt.greedy_action(s));
        total += r.reward;
        s = r.next_state;
      }
      CHECK(total == opt.optimal_return_from_start);
    }
  }
}

TEST_CASE("stitch example geometry") {
  auto env = ChainEnv::stitch_example();
  auto run_script = [&](const std::vector<int>& actions) {
    auto sim = env->clone();
    sim->reset(0);
    double total = 0.0;
    for (int a : actions) total += sim->step(a).reward;
    return std::make_pair(total, !sim->episode_active());
  };
  const auto [good_tail_return, tail_done] =
      run_script(ChainEnv::scripted_trajectory_good_tail());
  CHECK(good_tail_return == -3.0);
  CHECK(tail_done);
  const auto [good_head_return, head_done] =
      run_script(ChainEnv::scripted_trajectory_good_head());
  CHECK(good_head_return == -5.0);
  CHECK(head_done);

  const OptimalValues opt = optimal_values(*env, 1.0);
  CHECK(opt.optimal_return_from_start == -2.0);
  // The optimal first action is the good-head trajectory's first action.
  CHECK(opt.greedy_action(env->start_state()) ==
        ChainEnv::scripted_trajectory_good_head().front());
}

TEST_CASE("env json round-trips") {
  for (const char* name :
       {"simple6x6", "simple6x6-walled-delayed", "chain10", "stitch"}) {
    auto env = make_builtin_env(name, 23);
    auto clone = env_from_json(env->to_json());
    CHECK(clone->to_json() == env->to_json());
    CHECK(clone->n_states() == env->n_states());
    CHECK(clone->spec().reward_mode == env->spec().reward_mode);
    // Identical dynamics, including the remap.
    for (int s = 0; s < env->n_states(); ++s) {
      for (int a = 0; a < env->n_actions(); ++a) {
        const auto t1 = env->peek(s, a);
        const auto t2 = clone->peek(s, a);
        CHECK(t1.next == t2.next);
        CHECK(t1.reward == t2.reward);
        CHECK(t1.done == t2.done);
      }
    }
  }
  CHECK_THROWS_AS(make_builtin_env("no-such-env"), Error);
  CHECK_THROWS_AS(env_from_json(nlohmann::json{{"type", "wat"}}), SchemaError);
}

TEST_CASE("grid layout validation") {
  GridMazeEnv::Layout bad;
  bad.start = {0, 0};
  bad.goal = {0, 0};
  CHECK_THROWS_AS(GridMazeEnv{bad}, Error);

  GridMazeEnv::Layout walled;
  walled.walls = {{0, 0}};
  CHECK_THROWS_AS(GridMazeEnv{walled}, Error);
}
