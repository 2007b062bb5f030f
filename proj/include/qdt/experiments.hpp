#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "qdt/cql.hpp"
#include "qdt/dataset.hpp"
#include "qdt/dt.hpp"

namespace qdt {

struct ScoreRow {
  std::string agent;     // cql | dt | qdt | max_in_dataset
  int seed = 0;
  std::string protocol;  // best | last ("data" for dataset references)
  double score = 0.0;
  std::string variant;   // "" | dense | delayed | X=<value>
};

struct ExperimentResult {
  std::string id;
  nlohmann::json config;
  int n_seeds = 0;
  bool std_undefined = false;  // single seed: std reported as 0
  double wall_seconds = 0.0;
  std::vector<ScoreRow> rows;
  std::vector<std::string> failures;  // per-seed failures, non-fatal

  std::vector<double> scores(const std::string& agent,
                             const std::string& protocol,
                             const std::string& variant = "") const;
  double mean(const std::string& agent, const std::string& protocol,
              const std::string& variant = "") const;
  double stddev(const std::string& agent, const std::string& protocol,
                const std::string& variant = "") const;
  std::uint64_t config_hash() const;
  nlohmann::json to_json() const;
};

// Shared knobs of the gen-data -> CQL -> relabel -> DT pipeline.
struct PipelineConfig {
  std::string env_name = "simple6x6";
  std::uint64_t env_seed = 0;  // fixes the action remap
  int n_episodes = 100;
  double filter_threshold = 0.0;
  CqlConfig cql;
  DtConfig dt;
  int eval_every = 250;   // periodic evaluation cadence (best-model protocol)
  int eval_episodes = 5;

  nlohmann::json to_json() const;
};

struct AgentScores {
  double best = 0.0;
  double last = 0.0;
};

struct PipelineOutcome {
  AgentScores cql;
  AgentScores dt;
  AgentScores qdt;
  double data_max_return = 0.0;
};

// One full pipeline run on a prepared dataset: CQL (with periodic greedy
// evaluation), relabel with the final Q function, then DT twice from the
// same initialization — raw rtg and relabelled rtg.
PipelineOutcome run_pipeline(const PipelineConfig& cfg, const Env& env,
                             const OfflineDataset& ds, std::uint64_t seed);

// Random-policy dataset filtered to returns <= threshold, full pipeline,
// both evaluation protocols, n seeds in parallel workers.
ExperimentResult run_table1(int seeds = 10, std::uint64_t master_seed = 0,
                            PipelineConfig base = {});

// Same pipeline on the dense and delayed variants of the env.
ExperimentResult run_delayed(int seeds = 3, std::uint64_t master_seed = 0,
                             PipelineConfig base = {});

// Mixed-quality dataset; for each X removes the best X% of trajectories and
// reruns the pipeline, recording the per-X max dataset return as reference.
ExperimentResult run_topx(std::vector<double> x_list = {0, 25, 50, 75, 90},
                          int seeds = 3, std::uint64_t master_seed = 0,
                          PipelineConfig base = {});

// Writes <id>.csv (one row per score), <id>.md (summary table), <id>.json
// (full result), and <id>.svg when the result has numeric X variants.
// Returns the paths written.
std::vector<std::string> emit(const ExperimentResult& result,
                              const std::string& out_dir);

std::vector<ScoreRow> load_scores_csv(const std::string& path);

}  // namespace qdt
