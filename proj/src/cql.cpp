#include "qdt/cql.hpp"

#include <algorithm>
#include <cmath>

#include "qdt/checkpoint.hpp"
#include "qdt/errors.hpp"
#include "qdt/optim.hpp"

namespace qdt {

void CqlConfig::validate() const {
  if (alpha < 0.0) throw Error("alpha must be >= 0");
  if (gamma <= 0.0 || gamma > 1.0) throw Error("gamma must be in (0, 1]");
  if (target_update_rate <= 0.0 || target_update_rate > 1.0) {
    throw Error("target_update_rate must be in (0, 1]");
  }
  if (batch_size < 1 || n_training_steps < 1) {
    throw Error("batch_size and n_training_steps must be >= 1");
  }
  if (state_embed_dim < 1 || hidden_layers < 1 || hidden_units < 1) {
    throw Error("network dimensions must be >= 1");
  }
}

nlohmann::json CqlConfig::to_json() const {
  return {{"alpha", alpha},
          {"gamma", gamma},
          {"learning_rate", learning_rate},
          {"target_update_rate", target_update_rate},
          {"batch_size", batch_size},
          {"n_training_steps", n_training_steps},
          {"state_embed_dim", state_embed_dim},
          {"hidden_layers", hidden_layers},
          {"hidden_units", hidden_units},
          {"adam_beta1", adam_beta1},
          {"adam_beta2", adam_beta2},
          {"lr_decay", lr_decay},
          {"value_scale", value_scale}};
}

CqlConfig CqlConfig::from_json(const nlohmann::json& j) {
  CqlConfig c;
  c.alpha = j.value("alpha", c.alpha);
  c.gamma = j.value("gamma", c.gamma);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.target_update_rate = j.value("target_update_rate", c.target_update_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.n_training_steps = j.value("n_training_steps", c.n_training_steps);
  c.state_embed_dim = j.value("state_embed_dim", c.state_embed_dim);
  c.hidden_layers = j.value("hidden_layers", c.hidden_layers);
  c.hidden_units = j.value("hidden_units", c.hidden_units);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.lr_decay = j.value("lr_decay", c.lr_decay);
  c.value_scale = j.value("value_scale", c.value_scale);
  return c;
}

namespace {

nn::Tensor truncated_normal_init(std::size_t rows, std::size_t cols,
                                 double sigma, nn::Rng& rng) {
  nn::Tensor t(rows, cols);
  for (double& x : t.v) x = rng.truncated_normal(sigma);
  return t;
}

nn::Tensor fan_in_uniform_init(std::size_t rows, std::size_t cols,
                               nn::Rng& rng) {
  nn::Tensor t(rows, cols);
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  for (double& x : t.v) x = (2.0 * rng.uniform() - 1.0) * bound;
  return t;
}

}  // namespace

QNetwork::QNetwork(int n_states, int n_actions, const CqlConfig& cfg,
                   nn::Rng init_rng, std::string name_prefix)
    : n_states_(n_states),
      n_actions_(n_actions),
      hidden_layers_(cfg.hidden_layers),
      value_scale_(cfg.value_scale) {
  // Unit-scale embedding rows so states are distinguishable from the first
  // update; the MLP layers use fan-in scaling.
  params_.add(name_prefix + "embed",
              truncated_normal_init(n_states, cfg.state_embed_dim, 1.0,
                                    init_rng));
  int in_dim = cfg.state_embed_dim;
  for (int l = 0; l < cfg.hidden_layers; ++l) {
    const std::string base = name_prefix + "fc" + std::to_string(l);
    params_.add(base + ".w",
                fan_in_uniform_init(in_dim, cfg.hidden_units, init_rng));
    params_.add(base + ".b", nn::Tensor(1, cfg.hidden_units));
    in_dim = cfg.hidden_units;
  }
  params_.add(name_prefix + "head.w",
              fan_in_uniform_init(in_dim, n_actions, init_rng));
  params_.add(name_prefix + "head.b", nn::Tensor(1, n_actions));
}

nn::NodeId QNetwork::forward(nn::Graph& g, const std::vector<int>& states) {
  nn::NodeId x = g.gather_rows(g.param(params_.at(0)), states);
  for (int l = 0; l < hidden_layers_; ++l) {
    nn::NodeId w = g.param(params_.at(1 + 2 * l));
    nn::NodeId b = g.param(params_.at(2 + 2 * l));
    x = g.relu(g.add_bias(g.matmul(x, w), b));
  }
  nn::NodeId hw = g.param(params_.at(1 + 2 * hidden_layers_));
  nn::NodeId hb = g.param(params_.at(2 + 2 * hidden_layers_));
  // The scale factor lets episode-sized Q values emerge from unit-sized
  // head activations, which shortens the optimizer's transit to the value
  // range by the same factor.
  return g.scale(g.add_bias(g.matmul(x, hw), hb), value_scale_);
}

std::vector<double> QNetwork::qvalues(int state) {
  nn::Graph g;
  const nn::NodeId out = forward(g, {state});
  return g.value(out).v;
}

void QNetwork::copy_from(const QNetwork& other) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    params_.at(i).value = other.params_.at(i).value;
  }
}

void QNetwork::soft_update_from(const QNetwork& online, double rate) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    std::vector<double>& t = params_.at(i).value.v;
    const std::vector<double>& o = online.params_.at(i).value.v;
    for (std::size_t j = 0; j < t.size(); ++j) {
      t[j] = (1.0 - rate) * t[j] + rate * o[j];
    }
  }
}

TwinQFunction::TwinQFunction(int n_states, int n_actions, CqlConfig cfg,
                             std::uint64_t seed)
    : n_states_(n_states),
      n_actions_(n_actions),
      cfg_(cfg),
      q1_(n_states, n_actions, cfg, nn::Rng::fork(seed, 1), "q1."),
      q2_(n_states, n_actions, cfg, nn::Rng::fork(seed, 2), "q2."),
      target1_(n_states, n_actions, cfg, nn::Rng::fork(seed, 1), "t1."),
      target2_(n_states, n_actions, cfg, nn::Rng::fork(seed, 2), "t2.") {
  cfg_.validate();
  target1_.copy_from(q1_);
  target2_.copy_from(q2_);
}

std::vector<double> TwinQFunction::twin_min_qvalues(int state) {
  std::vector<double> v1 = q1_.qvalues(state);
  const std::vector<double> v2 = q2_.qvalues(state);
  for (std::size_t i = 0; i < v1.size(); ++i) v1[i] = std::min(v1[i], v2[i]);
  return v1;
}

int TwinQFunction::greedy_action(int state) {
  const std::vector<double> q = twin_min_qvalues(state);
  return static_cast<int>(std::max_element(q.begin(), q.end()) - q.begin());
}

double TwinQFunction::value_estimate(int state) {
  const std::vector<double> q = twin_min_qvalues(state);
  return *std::max_element(q.begin(), q.end());
}

void TwinQFunction::soft_update_targets(double rate) {
  target1_.soft_update_from(q1_, rate);
  target2_.soft_update_from(q2_, rate);
}

void TwinQFunction::save(const std::string& path,
                         const nlohmann::json& extra_meta) const {
  nlohmann::json meta = {{"kind", "cql"},
                         {"n_states", n_states_},
                         {"n_actions", n_actions_},
                         {"config", cfg_.to_json()}};
  for (auto it = extra_meta.begin(); it != extra_meta.end(); ++it) {
    meta[it.key()] = it.value();
  }
  nn::save_checkpoint({&q1_.params(), &q2_.params(), &target1_.params(),
                       &target2_.params()},
                      path, meta.dump());
}

TwinQFunction TwinQFunction::load(const std::string& path,
                                  nlohmann::json* meta_out) {
  const nn::LoadedCheckpoint ckpt = nn::load_checkpoint(path);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(ckpt.metadata_json);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("bad checkpoint metadata: ") + e.what());
  }
  if (meta.value("kind", std::string{}) != "cql") {
    throw SchemaError("checkpoint is not a cql checkpoint: " + path);
  }
  TwinQFunction twinq(meta.at("n_states").get<int>(),
                      meta.at("n_actions").get<int>(),
                      CqlConfig::from_json(meta.at("config")), /*seed=*/0);
  ckpt.restore_into({&twinq.q1_.params(), &twinq.q2_.params(),
                     &twinq.target1_.params(), &twinq.target2_.params()});
  if (meta_out != nullptr) *meta_out = meta;
  return twinq;
}

CqlBatch all_transitions(const OfflineDataset& ds) {
  CqlBatch batch;
  for (const Trajectory& traj : ds.trajectories) {
    const int t_end = traj.length();
    for (int t = 0; t < t_end; ++t) {
      batch.s.push_back(traj.states[t]);
      batch.a.push_back(traj.actions[t]);
      batch.r.push_back(traj.rewards[t]);
      batch.s2.push_back(traj.states[t + 1]);
      batch.done.push_back(t == t_end - 1 ? 1 : 0);
    }
  }
  return batch;
}

nn::NodeId build_cql_loss(nn::Graph& g, const CqlBatch& batch,
                          TwinQFunction& twinq, const CqlConfig& cfg) {
  const std::size_t n = batch.size();
  if (n == 0) throw Error("cql loss needs a non-empty batch");

  // Bootstrap targets, evaluated without gradients on a scratch graph:
  // the action is the online twin-min argmax at s', the value is the
  // smaller of the two target networks there.
  std::vector<double> y(n);
  {
    nn::Graph eval;
    const nn::NodeId q1n = twinq.q1().forward(eval, batch.s2);
    const nn::NodeId q2n = twinq.q2().forward(eval, batch.s2);
    const nn::NodeId t1n = twinq.target1().forward(eval, batch.s2);
    const nn::NodeId t2n = twinq.target2().forward(eval, batch.s2);
    const nn::Tensor& q1v = eval.value(q1n);
    const nn::Tensor& q2v = eval.value(q2n);
    const nn::Tensor& t1v = eval.value(t1n);
    const nn::Tensor& t2v = eval.value(t2n);
    const int n_actions = twinq.n_actions();
    for (std::size_t i = 0; i < n; ++i) {
      if (batch.done[i]) {
        y[i] = batch.r[i];
        continue;
      }
      int best = 0;
      double best_q = -std::numeric_limits<double>::infinity();
      for (int a = 0; a < n_actions; ++a) {
        const double q = std::min(q1v.at(i, a), q2v.at(i, a));
        if (q > best_q) {
          best_q = q;
          best = a;
        }
      }
      y[i] = batch.r[i] +
             cfg.gamma * std::min(t1v.at(i, best), t2v.at(i, best));
    }
  }

  const nn::NodeId y_node = g.input(nn::Tensor::column(y));
  nn::NodeId loss{};
  bool first = true;
  for (QNetwork* net : {&twinq.q1(), &twinq.q2()}) {
    const nn::NodeId q_all = net->forward(g, batch.s);
    const nn::NodeId q_taken = g.select_per_row(q_all, batch.a);
    const nn::NodeId diff = g.sub(q_taken, y_node);
    const nn::NodeId bellman = g.scale(g.mean(g.mul(diff, diff)), 0.5);
    nn::NodeId net_loss = bellman;
    if (cfg.alpha != 0.0) {
      const nn::NodeId lse = g.mean(g.logsumexp_rows(q_all));
      const nn::NodeId data_q = g.mean(q_taken);
      net_loss = g.add(net_loss, g.scale(g.sub(lse, data_q), cfg.alpha));
    }
    loss = first ? net_loss : g.add(loss, net_loss);
    first = false;
  }
  return loss;
}

double cql_loss(const CqlBatch& batch, TwinQFunction& twinq,
                const CqlConfig& cfg) {
  nn::Graph g;
  return g.value(build_cql_loss(g, batch, twinq, cfg)).v[0];
}

TwinQFunction train_cql(
    const OfflineDataset& ds, const CqlConfig& cfg, std::uint64_t seed,
    const std::function<void(int step, TwinQFunction&)>& callback,
    int callback_every) {
  cfg.validate();
  if (ds.trajectories.empty()) throw Error("train_cql: empty dataset");
  const CqlBatch all = all_transitions(ds);
  const std::size_t n = all.size();

  TwinQFunction twinq(ds.env_spec.n_states, ds.env_spec.n_actions, cfg, seed);
  nn::AdamConfig adam_cfg{cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2,
                          1e-8};
  nn::Adam opt1(twinq.q1().params(), adam_cfg);
  nn::Adam opt2(twinq.q2().params(), adam_cfg);
  nn::Rng batch_rng = nn::Rng::fork(seed, 3);

  nn::Graph g;
  for (int step = 1; step <= cfg.n_training_steps; ++step) {
    if (cfg.lr_decay) {
      // Full rate for the first 70%, then linear to zero so the final
      // checkpoint settles instead of orbiting the fixed point.
      const double frac = static_cast<double>(step - 1) / cfg.n_training_steps;
      const double scale = std::min(1.0, (1.0 - frac) / 0.3);
      opt1.set_lr(cfg.learning_rate * scale);
      opt2.set_lr(cfg.learning_rate * scale);
    }
    CqlBatch batch;
    for (int i = 0; i < cfg.batch_size; ++i) {
      const std::size_t j = batch_rng.below(n);
      batch.s.push_back(all.s[j]);
      batch.a.push_back(all.a[j]);
      batch.r.push_back(all.r[j]);
      batch.s2.push_back(all.s2[j]);
      batch.done.push_back(all.done[j]);
    }

    g.clear();
    const nn::NodeId loss = build_cql_loss(g, batch, twinq, cfg);
    const double loss_v = g.value(loss).v[0];
    if (!std::isfinite(loss_v) || std::abs(loss_v) > 1e9) {
      std::string where = "loss";
      if (auto bad = g.find_non_finite()) {
        where = bad->op + " (node " + std::to_string(bad->node) + ")";
      }
      throw DivergenceError("cql training diverged at step " +
                            std::to_string(step) + ", first bad op: " + where);
    }
    twinq.q1().params().zero_grad();
    twinq.q2().params().zero_grad();
    g.backward(loss);
    opt1.step();
    opt2.step();
    twinq.soft_update_targets(cfg.target_update_rate);

    if (callback && callback_every > 0 &&
        (step % callback_every == 0 || step == cfg.n_training_steps)) {
      callback(step, twinq);
    }
  }
  return twinq;
}

double value_estimate(TwinQFunction& twinq, const Env& env, int state) {
  if (env.is_terminal(state)) return 0.0;
  return twinq.value_estimate(state);
}

ValueFn make_value_fn(TwinQFunction& twinq, const Env& env) {
  std::shared_ptr<Env> owned = env.clone();
  TwinQFunction* tq = &twinq;
  return [tq, owned](int state) {
    return owned->is_terminal(state) ? 0.0 : tq->value_estimate(state);
  };
}

double policy_rollout_return(const Env& env,
                             const std::function<int(int)>& policy,
                             std::uint64_t seed) {
  std::unique_ptr<Env> sim = env.clone();
  int s = sim->reset(seed);
  double total = 0.0;
  while (sim->episode_active()) {
    const StepResult r = sim->step(policy(s));
    total += r.reward;
    s = r.next_state;
  }
  return total;
}

double greedy_rollout(TwinQFunction& twinq, const Env& env,
                      std::uint64_t seed) {
  return policy_rollout_return(
      env, [&twinq](int s) { return twinq.greedy_action(s); }, seed);
}

double TabularQ::max_q(int s) const {
  double best = q[s * n_actions];
  for (int a = 1; a < n_actions; ++a) best = std::max(best, at(s, a));
  return best;
}

int TabularQ::greedy_action(int s) const {
  int best = 0;
  for (int a = 1; a < n_actions; ++a) {
    if (at(s, a) > at(s, best)) best = a;
  }
  return best;
}

TabularQ train_cql_tabular(const OfflineDataset& ds,
                           const TabularQConfig& cfg) {
  const CqlBatch batch = all_transitions(ds);
  const std::size_t n = batch.size();
  if (n == 0) throw Error("train_cql_tabular: empty dataset");

  const int n_states = ds.env_spec.n_states;
  const int n_actions = ds.env_spec.n_actions;
  TabularQ table{n_states, n_actions,
                 std::vector<double>(n_states * n_actions, 0.0)};
  std::vector<double> target = table.q;
  std::vector<double> grad(table.q.size());
  std::vector<double> softmax(n_actions);
  const double inv_n = 1.0 / static_cast<double>(n);

  for (int step = 0; step < cfg.n_training_steps; ++step) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const int s = batch.s[i];
      const int a = batch.a[i];
      double y = batch.r[i];
      if (!batch.done[i]) {
        const int s2 = batch.s2[i];
        double best = target[s2 * n_actions];
        for (int b = 1; b < n_actions; ++b) {
          best = std::max(best, target[s2 * n_actions + b]);
        }
        y += cfg.gamma * best;
      }
      grad[s * n_actions + a] += (table.at(s, a) - y) * inv_n;
      if (cfg.alpha != 0.0) {
        double mx = table.at(s, 0);
        for (int b = 1; b < n_actions; ++b) mx = std::max(mx, table.at(s, b));
        double denom = 0.0;
        for (int b = 0; b < n_actions; ++b) {
          softmax[b] = std::exp(table.at(s, b) - mx);
          denom += softmax[b];
        }
        for (int b = 0; b < n_actions; ++b) {
          grad[s * n_actions + b] += cfg.alpha * inv_n * softmax[b] / denom;
        }
        grad[s * n_actions + a] -= cfg.alpha * inv_n;
      }
    }
    for (std::size_t i = 0; i < table.q.size(); ++i) {
      table.q[i] -= cfg.learning_rate * grad[i];
      if (!std::isfinite(table.q[i])) {
        throw DivergenceError("tabular cql diverged at step " +
                              std::to_string(step));
      }
      target[i] = (1.0 - cfg.target_update_rate) * target[i] +
                  cfg.target_update_rate * table.q[i];
    }
  }
  return table;
}

ValueFn make_value_fn(const TabularQ& table, const Env& env) {
  std::shared_ptr<Env> owned = env.clone();
  TabularQ copy = table;
  return [copy = std::move(copy), owned](int state) {
    return owned->is_terminal(state) ? 0.0 : copy.max_q(state);
  };
}

double mean_dataset_q(const TabularQ& table, const OfflineDataset& ds) {
  const CqlBatch batch = all_transitions(ds);
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    total += table.at(batch.s[i], batch.a[i]);
  }
  return total / static_cast<double>(batch.size());
}

}  // namespace qdt
