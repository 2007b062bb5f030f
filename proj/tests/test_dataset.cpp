#include <fstream>
#include <sstream>

#include "doctest.h"
#include "qdt/dataset.hpp"
#include "qdt/env.hpp"
#include "qdt/errors.hpp"
#include "qdt/rng.hpp"

using namespace qdt;

namespace {

// Minimal dataset whose trajectories have the given total returns (each a
// single transition), for filter tests.
OfflineDataset dataset_with_returns(const std::vector<double>& returns) {
  OfflineDataset ds;
  ds.env_spec.name = "synthetic";
  ds.env_spec.n_states = 2;
  ds.env_spec.n_actions = 1;
  ds.env_spec.episode_cap = 50;
  ds.env_json = {{"type", "chain"}, {"layout", "linear"}, {"n_states", 2}};
  for (double r : returns) {
    Trajectory t;
    t.states = {0, 1};
    t.actions = {0};
    t.rewards = {r};
    compute_rtg(t);
    ds.trajectories.push_back(std::move(t));
  }
  return ds;
}

std::string file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("compute_rtg") {
  Trajectory t;
  t.states = {0, 0, 0, 1};
  t.actions = {0, 0, 0};
  t.rewards = {-10, -10, 100};
  compute_rtg(t);
  CHECK(t.rtg == std::vector<double>{80, 90, 100, 0});

  Trajectory zeros;
  zeros.states = {0, 0, 1};
  zeros.actions = {0, 0};
  zeros.rewards = {0, 0};
  compute_rtg(zeros);
  CHECK(zeros.rtg == std::vector<double>{0, 0, 0});

  Trajectory chain;
  chain.states.assign(10, 0);
  chain.actions.assign(9, 0);
  chain.rewards.assign(9, -1.0);
  compute_rtg(chain);
  CHECK(chain.rtg.front() == -9.0);
  CHECK(chain.rtg.back() == 0.0);
}

TEST_CASE("rtg recursion holds at every position of generated data") {
  auto env = make_builtin_env("simple6x6", 2);
  const OfflineDataset ds = generate_random(*env, 20, 31);
  for (const Trajectory& t : ds.trajectories) {
    for (int i = 0; i < t.length(); ++i) {
      CHECK(t.rtg[i] == t.rewards[i] + t.rtg[i + 1]);  // exact
    }
    CHECK(t.rtg[t.length()] == 0.0);
  }
}

TEST_CASE("generate_random") {
  auto env = make_builtin_env("simple6x6", 2);
  const OfflineDataset ds = generate_random(*env, 100, 7);
  const DatasetStats stats = ds.stats();
  CHECK(stats.n_episodes == 100);
  CHECK(stats.n_steps > 3000);   // uniform policy mostly runs to the cap
  CHECK(stats.n_steps <= 5000);
  CHECK(stats.min_return >= -500.0);
  CHECK(stats.min_return <= stats.mean_return);
  CHECK(stats.mean_return <= stats.max_return);

  const OfflineDataset one = generate_random(*env, 1, 9);
  CHECK(one.trajectories.size() == 1);
  CHECK(one.trajectories[0].length() <= env->episode_cap());

  SUBCASE("same inputs give byte-identical files") {
    save_dataset(generate_random(*env, 10, 3), "/tmp/qdt_ds_a.jsonl");
    save_dataset(generate_random(*env, 10, 3), "/tmp/qdt_ds_b.jsonl");
    CHECK(file_bytes("/tmp/qdt_ds_a.jsonl") == file_bytes("/tmp/qdt_ds_b.jsonl"));
  }
}

TEST_CASE("generate_random_filtered yields exactly n surviving episodes") {
  auto env = make_builtin_env("simple6x6", 2);
  const OfflineDataset ds = generate_random_filtered(*env, 30, 0.0, 5);
  CHECK(ds.trajectories.size() == 30);
  CHECK(ds.stats().max_return <= 0.0);
  CHECK(ds.provenance.filters.size() == 1);
}

TEST_CASE("filter_max_return") {
  const OfflineDataset ds = dataset_with_returns({-10, 50, -490});
  const OfflineDataset kept = filter_max_return(ds, 0.0);
  REQUIRE(kept.trajectories.size() == 2);
  CHECK(kept.trajectories[0].total_return() == -10.0);
  CHECK(kept.trajectories[1].total_return() == -490.0);

  const OfflineDataset all = filter_max_return(
      ds, std::numeric_limits<double>::infinity());
  CHECK(all.trajectories.size() == 3);

  CHECK_THROWS_AS(filter_max_return(ds, -1000.0), Error);

  SUBCASE("idempotent") {
    const OfflineDataset once = filter_max_return(ds, 0.0);
    const OfflineDataset twice = filter_max_return(once, 0.0);
    REQUIRE(twice.trajectories.size() == once.trajectories.size());
    for (std::size_t i = 0; i < once.trajectories.size(); ++i) {
      CHECK(twice.trajectories[i].rewards == once.trajectories[i].rewards);
    }
  }
}

TEST_CASE("remove_top_fraction") {
  SUBCASE("x = 0 is the identity") {
    const OfflineDataset ds = dataset_with_returns({5, 4, 3, 2});
    CHECK(remove_top_fraction(ds, 0.0).trajectories.size() == 4);
  }

  SUBCASE("removes the best half") {
    const OfflineDataset ds = dataset_with_returns({5, 4, 3, 2});
    const OfflineDataset kept = remove_top_fraction(ds, 50.0);
    REQUIRE(kept.trajectories.size() == 2);
    CHECK(kept.trajectories[0].total_return() == 3.0);
    CHECK(kept.trajectories[1].total_return() == 2.0);
  }

  SUBCASE("ties remove the earlier trajectory first") {
    OfflineDataset ds = dataset_with_returns({5, 5, 4});
    // Tag the first 5 with a distinguishing extra step (same return).
    ds.trajectories[0].states = {0, 0, 1};
    ds.trajectories[0].actions = {0, 0};
    ds.trajectories[0].rewards = {0.0, 5.0};
    compute_rtg(ds.trajectories[0]);
    const OfflineDataset kept = remove_top_fraction(ds, 34.0);
    REQUIRE(kept.trajectories.size() == 2);
    CHECK(kept.trajectories[0].total_return() == 5.0);
    CHECK(kept.trajectories[0].length() == 1);  // the later, untagged one
    CHECK(kept.trajectories[1].total_return() == 4.0);
  }

  SUBCASE("bad percentages are rejected") {
    const OfflineDataset ds = dataset_with_returns({1, 2});
    CHECK_THROWS_AS(remove_top_fraction(ds, -1.0), Error);
    CHECK_THROWS_AS(remove_top_fraction(ds, 100.0), Error);
  }

  SUBCASE("chained removals never keep anything above the first cut") {
    nn::Rng rng(44);
    std::vector<double> returns;
    for (int i = 0; i < 40; ++i) {
      returns.push_back(static_cast<double>(rng.below(10)));  // many ties
    }
    const OfflineDataset ds = dataset_with_returns(returns);
    const OfflineDataset once = remove_top_fraction(ds, 30.0);
    double min_removed = std::numeric_limits<double>::infinity();
    // Count multiset difference to find removed returns.
    std::vector<double> kept_returns;
    for (const auto& t : once.trajectories) {
      kept_returns.push_back(t.total_return());
    }
    std::vector<double> pool = returns;
    for (double k : kept_returns) {
      pool.erase(std::find(pool.begin(), pool.end(), k));
    }
    for (double r : pool) min_removed = std::min(min_removed, r);
    const OfflineDataset twice = remove_top_fraction(once, 40.0);
    for (const auto& t : twice.trajectories) {
      CHECK(t.total_return() <= min_removed);
    }
  }
}

TEST_CASE("save and load round-trip") {
  auto env = make_builtin_env("simple6x6", 6);
  const OfflineDataset ds = generate_random(*env, 12, 17);
  const std::string path = "/tmp/qdt_ds_rt.jsonl";
  save_dataset(ds, path);
  const OfflineDataset loaded = load_dataset(path);

  REQUIRE(loaded.trajectories.size() == ds.trajectories.size());
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
    CHECK(loaded.trajectories[i].states == ds.trajectories[i].states);
    CHECK(loaded.trajectories[i].actions == ds.trajectories[i].actions);
    CHECK(loaded.trajectories[i].rewards == ds.trajectories[i].rewards);
    CHECK(loaded.trajectories[i].rtg == ds.trajectories[i].rtg);
    CHECK(loaded.trajectories[i].truncated == ds.trajectories[i].truncated);
  }
  CHECK(loaded.env_spec.n_states == ds.env_spec.n_states);
  CHECK(loaded.env_json == ds.env_json);
  CHECK(loaded.provenance.policy == ds.provenance.policy);

  // Saving the loaded dataset reproduces the file byte for byte.
  save_dataset(loaded, "/tmp/qdt_ds_rt2.jsonl");
  CHECK(file_bytes(path) == file_bytes("/tmp/qdt_ds_rt2.jsonl"));
}

TEST_CASE("load rejects malformed files") {
  auto env = make_builtin_env("chain4", 0);
  const OfflineDataset ds = generate_random(*env, 3, 1);
  const std::string path = "/tmp/qdt_ds_bad.jsonl";

  SUBCASE("action id out of range vs env spec") {
    OfflineDataset bad = ds;
    bad.trajectories[0].actions[0] = 99;
    save_dataset(bad, path);
    CHECK_THROWS_AS(load_dataset(path), SchemaError);
  }

  SUBCASE("empty trajectory record") {
    save_dataset(ds, path);
    std::ofstream os(path, std::ios::app);
    os << R"({"states":[0],"actions":[],"rewards":[],"rtg":[0.0],)"
       << R"("truncated":false})" << "\n";
    os.close();
    CHECK_THROWS_AS(load_dataset(path), SchemaError);
  }

  SUBCASE("corrupt json line") {
    save_dataset(ds, path);
    std::ofstream os(path, std::ios::app);
    os << "{not json\n";
    os.close();
    CHECK_THROWS_AS(load_dataset(path), SchemaError);
  }

  SUBCASE("stats that disagree with the trajectories") {
    save_dataset(ds, path);
    std::ifstream is(path);
    std::string header, rest, line;
    std::getline(is, header);
    while (std::getline(is, line)) rest += line + "\n";
    is.close();
    nlohmann::json h = nlohmann::json::parse(header);
    h["stats"]["mean_return"] = 123.0;
    std::ofstream os(path);
    os << h.dump() << "\n" << rest;
    os.close();
    CHECK_THROWS_AS(load_dataset(path), SchemaError);
  }

  SUBCASE("wrong schema version") {
    save_dataset(ds, path);
    std::ifstream is(path);
    std::string header, rest, line;
    std::getline(is, header);
    while (std::getline(is, line)) rest += line + "\n";
    is.close();
    nlohmann::json h = nlohmann::json::parse(header);
    h["schema_version"] = 2;
    std::ofstream os(path);
    os << h.dump() << "\n" << rest;
    os.close();
    CHECK_THROWS_AS(load_dataset(path), SchemaError);
  }
}

TEST_CASE("epsilon ramp produces a quality gradient") {
  auto env = make_builtin_env("simple6x6", 2);
  const OptimalValues oracle = optimal_values(*env, 1.0);
  const OfflineDataset ds = generate_epsilon_ramp(*env, oracle, 50, 3);
  CHECK(ds.trajectories.size() == 50);
  // The last episode is fully greedy on Q*, so it is optimal.
  CHECK(ds.trajectories.back().total_return() == 50.0);
  // The best early (mostly random) episode should be far worse than the
  // best late episode.
  double early_best = -1e9, late_best = -1e9;
  for (int i = 0; i < 10; ++i) {
    early_best =
        std::max(early_best, ds.trajectories[i].total_return());
  }
  for (int i = 40; i < 50; ++i) {
    late_best = std::max(late_best, ds.trajectories[i].total_return());
  }
  CHECK(late_best > early_best);
}
