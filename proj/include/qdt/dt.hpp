#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "qdt/dataset.hpp"
#include "qdt/env.hpp"
#include "qdt/graph.hpp"

namespace qdt {

struct DtConfig {
  int n_layers = 4;
  int n_heads = 4;
  int embed_dim = 64;
  int context_length = 2;          // K triples of (rtg, state, action)
  double rtg_conditioning = 50.0;  // evaluation target return
  double rtg_scale = 0.01;         // rtg values are scaled before embedding
  double dropout = 0.1;
  double learning_rate = 4.0e-4;
  double weight_decay = 0.1;  // decoupled, matrix weights only
  int batch_size = 64;
  int n_training_steps = 4000;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;

  void validate() const;
  nlohmann::json to_json() const;
  static DtConfig from_json(const nlohmann::json& j);
};

// One training/inference sample: K (rtg, state, action) triples ending at
// time t, front-padded when the episode head is nearer than K. The token
// sequence is R,s,a,...,R,s (3K-1 tokens; the final action is the thing
// being predicted). rtgs come from window_rtg so the reward recursion holds
// inside the window.
struct TokenWindow {
  std::vector<double> rtgs;   // K, 0 at padded triples
  std::vector<int> states;    // K, pad id = n_states
  std::vector<int> actions;   // K-1, pad id = n_actions
  std::vector<int> timesteps; // K, global episode step of each triple
  std::vector<int> targets;   // K, action to predict at each state token, -1 at pads
  int n_pad = 0;              // padded triples at the front
};

TokenWindow make_window(const Trajectory& traj, int t, int k, int n_states,
                        int n_actions);

// GPT-style causal transformer over interleaved rtg/state/action tokens.
// Actions are predicted at the state-token positions.
class DtModel {
 public:
  DtModel(int n_states, int n_actions, int episode_cap, DtConfig cfg,
          std::uint64_t seed);

  // Logits [batch*K x n_actions], one row per state token. dropout_rng is
  // only consumed when train is true.
  nn::NodeId forward(nn::Graph& g, const std::vector<TokenWindow>& batch,
                     bool train, nn::Rng* dropout_rng);

  struct HistoryTriple {
    double rtg;
    int state;
    int action;
    int timestep;
  };

  // Greedy action at the final state token. history holds up to K-1 most
  // recent triples; older entries are ignored. Evaluation mode: no dropout,
  // bit-identical on repeated calls.
  int act(const std::vector<HistoryTriple>& history, double current_rtg,
          int current_state, int current_timestep);

  const DtConfig& config() const { return cfg_; }
  int n_states() const { return n_states_; }
  int n_actions() const { return n_actions_; }
  int episode_cap() const { return episode_cap_; }
  nn::ParameterStore& params() { return params_; }

  void save(const std::string& path, const nlohmann::json& extra_meta) const;
  static DtModel load(const std::string& path,
                      nlohmann::json* meta_out = nullptr);

 private:
  int n_states_;
  int n_actions_;
  int episode_cap_;
  DtConfig cfg_;
  nn::ParameterStore params_;
};

// Cross-entropy training over windows sampled uniformly across all
// (trajectory, t) positions. The same code path serves raw and relabelled
// datasets; only the rtg arrays differ. The callback (when given) runs
// every callback_every steps and after the final step.
DtModel train_dt(const OfflineDataset& ds, const DtConfig& cfg,
                 std::uint64_t seed,
                 const std::function<void(int step, DtModel&)>& callback = {},
                 int callback_every = 0);

// Fraction of dataset positions whose greedy prediction at the final state
// token matches the action actually taken.
double greedy_accuracy(DtModel& model, const OfflineDataset& ds);

// Rolls an episode conditioning on target_rtg, decrementing the target by
// each observed reward, with a sliding K-triple history.
double conditioned_rollout(DtModel& model, const Env& env, double target_rtg,
                           std::uint64_t seed);

}  // namespace qdt
