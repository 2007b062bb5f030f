#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "qdt/dataset.hpp"
#include "qdt/env.hpp"
#include "qdt/graph.hpp"
#include "qdt/relabel.hpp"

namespace qdt {

struct CqlConfig {
  double alpha = 0.5;               // conservative weight
  double gamma = 0.99;              // discount
  double learning_rate = 5.0e-4;
  double target_update_rate = 1.0e-2;  // soft-update coefficient
  int batch_size = 128;
  int n_training_steps = 6000;
  int state_embed_dim = 32;
  int hidden_layers = 2;
  int hidden_units = 32;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  bool lr_decay = true;      // full rate for 70% of training, then linear to 0
  double value_scale = 10.0; // Q head multiplier; see QNetwork::forward

  void validate() const;
  nlohmann::json to_json() const;
  static CqlConfig from_json(const nlohmann::json& j);
};

// State-embedding MLP producing one Q value per action.
class QNetwork {
 public:
  QNetwork(int n_states, int n_actions, const CqlConfig& cfg, nn::Rng init_rng,
           std::string name_prefix = "");

  // Logits node of shape [states.size() x n_actions].
  nn::NodeId forward(nn::Graph& g, const std::vector<int>& states);

  std::vector<double> qvalues(int state);

  nn::ParameterStore& params() { return params_; }
  const nn::ParameterStore& params() const { return params_; }

  void copy_from(const QNetwork& other);
  // value <- (1 - rate) * value + rate * online.value
  void soft_update_from(const QNetwork& online, double rate);

 private:
  int n_states_;
  int n_actions_;
  int hidden_layers_;
  double value_scale_;
  nn::ParameterStore params_;
};

// Double Q-learning pair plus lagged target copies. The conservative state
// value is max_a min(q1(s,a), q2(s,a)).
class TwinQFunction {
 public:
  TwinQFunction(int n_states, int n_actions, CqlConfig cfg, std::uint64_t seed);

  int n_states() const { return n_states_; }
  int n_actions() const { return n_actions_; }
  const CqlConfig& config() const { return cfg_; }

  std::vector<double> twin_min_qvalues(int state);
  int greedy_action(int state);    // argmax of twin-min, lowest index on ties
  double value_estimate(int state);  // max_a min(q1, q2), no terminal handling

  QNetwork& q1() { return q1_; }
  QNetwork& q2() { return q2_; }
  QNetwork& target1() { return target1_; }
  QNetwork& target2() { return target2_; }

  void soft_update_targets(double rate);

  void save(const std::string& path, const nlohmann::json& extra_meta) const;
  static TwinQFunction load(const std::string& path,
                            nlohmann::json* meta_out = nullptr);

 private:
  int n_states_;
  int n_actions_;
  CqlConfig cfg_;
  QNetwork q1_, q2_, target1_, target2_;
};

struct CqlBatch {
  std::vector<int> s;
  std::vector<int> a;
  std::vector<double> r;
  std::vector<int> s2;
  std::vector<char> done;
  std::size_t size() const { return s.size(); }
};

// All (s_t, a_t, r_t, s_{t+1}, done) tuples of the dataset. The final
// transition of every episode has done set — truncation at the step cap is
// treated as termination, matching the env's accounting.
CqlBatch all_transitions(const OfflineDataset& ds);

// Bellman error with double-Q targets plus the conservative regulariser
// alpha * (E_s[logsumexp_a Q(s,a)] - E_(s,a)~D[Q(s,a)]), summed over both
// online networks. Targets bootstrap min(target1, target2) at the online
// twin-min argmax action and are zero at terminal transitions.
nn::NodeId build_cql_loss(nn::Graph& g, const CqlBatch& batch,
                          TwinQFunction& twinq, const CqlConfig& cfg);

double cql_loss(const CqlBatch& batch, TwinQFunction& twinq,
                const CqlConfig& cfg);

// Minibatch CQL with per-step soft target updates. Deterministic given
// seed. The callback (when given) runs every callback_every steps and once
// after the final step, for periodic evaluation.
TwinQFunction train_cql(
    const OfflineDataset& ds, const CqlConfig& cfg, std::uint64_t seed,
    const std::function<void(int step, TwinQFunction&)>& callback = {},
    int callback_every = 0);

// Conservative state value with terminal states pinned to zero.
double value_estimate(TwinQFunction& twinq, const Env& env, int state);

// ValueFn over twinq for the relabeller; terminal states return 0. The
// returned closure borrows both references.
ValueFn make_value_fn(TwinQFunction& twinq, const Env& env);

// Episode return of the greedy twin-min policy.
double greedy_rollout(TwinQFunction& twinq, const Env& env, std::uint64_t seed);

// Generic rollout helper for any state -> action policy.
double policy_rollout_return(const Env& env,
                             const std::function<int(int)>& policy,
                             std::uint64_t seed);

// ---------------------------------------------------------------------------
// Exact tabular variant, used as an oracle in property tests.

struct TabularQConfig {
  double alpha = 0.5;
  double gamma = 0.99;
  double learning_rate = 0.5;
  double target_update_rate = 0.02;
  int n_training_steps = 30000;
};

struct TabularQ {
  int n_states = 0;
  int n_actions = 0;
  std::vector<double> q;  // [s * n_actions + a]

  double& at(int s, int a) { return q[s * n_actions + a]; }
  double at(int s, int a) const { return q[s * n_actions + a]; }
  double max_q(int s) const;
  int greedy_action(int s) const;
};

// Full-batch gradient descent on the same loss with a tabular Q and a soft
// target table (single table; the twin trick is unnecessary without
// function approximation).
TabularQ train_cql_tabular(const OfflineDataset& ds, const TabularQConfig& cfg);

ValueFn make_value_fn(const TabularQ& table, const Env& env);

// Mean Q(s,a) over the dataset's transitions (alpha-monotonicity checks).
double mean_dataset_q(const TabularQ& table, const OfflineDataset& ds);

}  // namespace qdt
