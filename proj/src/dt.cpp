#include "qdt/dt.hpp"

#include <algorithm>
#include <cmath>

#include "qdt/checkpoint.hpp"
#include "qdt/errors.hpp"
#include "qdt/optim.hpp"
#include "qdt/relabel.hpp"

namespace qdt {

void DtConfig::validate() const {
  if (n_layers < 1 || n_heads < 1 || embed_dim < 1) {
    throw Error("model dimensions must be >= 1");
  }
  if (embed_dim % n_heads != 0) {
    throw Error("embed_dim must be divisible by n_heads");
  }
  if (context_length < 1) throw Error("context_length must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) throw Error("dropout must be in [0, 1)");
  if (batch_size < 1 || n_training_steps < 1) {
    throw Error("batch_size and n_training_steps must be >= 1");
  }
}

nlohmann::json DtConfig::to_json() const {
  return {{"n_layers", n_layers},
          {"n_heads", n_heads},
          {"embed_dim", embed_dim},
          {"context_length", context_length},
          {"rtg_conditioning", rtg_conditioning},
          {"rtg_scale", rtg_scale},
          {"dropout", dropout},
          {"learning_rate", learning_rate},
          {"weight_decay", weight_decay},
          {"batch_size", batch_size},
          {"n_training_steps", n_training_steps},
          {"adam_beta1", adam_beta1},
          {"adam_beta2", adam_beta2}};
}

DtConfig DtConfig::from_json(const nlohmann::json& j) {
  DtConfig c;
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.context_length = j.value("context_length", c.context_length);
  c.rtg_conditioning = j.value("rtg_conditioning", c.rtg_conditioning);
  c.rtg_scale = j.value("rtg_scale", c.rtg_scale);
  c.dropout = j.value("dropout", c.dropout);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.n_training_steps = j.value("n_training_steps", c.n_training_steps);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  return c;
}

TokenWindow make_window(const Trajectory& traj, int t, int k, int n_states,
                        int n_actions) {
  if (t < 0 || t >= traj.length()) throw Error("make_window: t out of range");
  TokenWindow w;
  const int lo = std::max(0, t - k + 1);
  w.n_pad = k - (t - lo + 1);
  w.rtgs.assign(k, 0.0);
  w.states.assign(k, n_states);
  w.actions.assign(k - 1, n_actions);
  w.timesteps.assign(k, 0);
  w.targets.assign(k, -1);

  const std::vector<double> rtgs = window_rtg(traj, t, k);
  for (int j = w.n_pad; j < k; ++j) {
    const int tau = lo + (j - w.n_pad);
    w.rtgs[j] = rtgs[j - w.n_pad];
    w.states[j] = traj.states[tau];
    w.timesteps[j] = tau;
    w.targets[j] = traj.actions[tau];
    if (j < k - 1) w.actions[j] = traj.actions[tau];
  }
  return w;
}

namespace {

nn::Tensor trunc_normal(std::size_t rows, std::size_t cols, nn::Rng& rng) {
  nn::Tensor t(rows, cols);
  for (double& x : t.v) x = rng.truncated_normal(0.02);
  return t;
}

nn::Tensor ones(std::size_t rows, std::size_t cols) {
  nn::Tensor t(rows, cols);
  t.fill(1.0);
  return t;
}

}  // namespace

DtModel::DtModel(int n_states, int n_actions, int episode_cap, DtConfig cfg,
                 std::uint64_t seed)
    : n_states_(n_states),
      n_actions_(n_actions),
      episode_cap_(episode_cap),
      cfg_(cfg) {
  cfg_.validate();
  nn::Rng rng = nn::Rng::fork(seed, 10);
  const int d = cfg_.embed_dim;
  // +1 rows for the padding ids.
  params_.add("embed.state", trunc_normal(n_states + 1, d, rng));
  params_.add("embed.action", trunc_normal(n_actions + 1, d, rng));
  params_.add("embed.rtg.w", trunc_normal(1, d, rng));
  params_.add("embed.rtg.b", nn::Tensor(1, d));
  params_.add("embed.time", trunc_normal(episode_cap + 1, d, rng));
  for (int l = 0; l < cfg_.n_layers; ++l) {
    const std::string base = "block" + std::to_string(l);
    params_.add(base + ".ln1.g", ones(1, d));
    params_.add(base + ".ln1.b", nn::Tensor(1, d));
    params_.add(base + ".attn.qkv.w", trunc_normal(d, 3 * d, rng)).decay =
        true;
    params_.add(base + ".attn.qkv.b", nn::Tensor(1, 3 * d));
    params_.add(base + ".attn.proj.w", trunc_normal(d, d, rng)).decay = true;
    params_.add(base + ".attn.proj.b", nn::Tensor(1, d));
    params_.add(base + ".ln2.g", ones(1, d));
    params_.add(base + ".ln2.b", nn::Tensor(1, d));
    params_.add(base + ".mlp.fc1.w", trunc_normal(d, 4 * d, rng)).decay =
        true;
    params_.add(base + ".mlp.fc1.b", nn::Tensor(1, 4 * d));
    params_.add(base + ".mlp.fc2.w", trunc_normal(4 * d, d, rng)).decay =
        true;
    params_.add(base + ".mlp.fc2.b", nn::Tensor(1, d));
  }
  params_.add("lnf.g", ones(1, d));
  params_.add("lnf.b", nn::Tensor(1, d));
  params_.add("head.w", trunc_normal(d, n_actions, rng)).decay = true;
  params_.add("head.b", nn::Tensor(1, n_actions));
}

nn::NodeId DtModel::forward(nn::Graph& g, const std::vector<TokenWindow>& batch,
                            bool train, nn::Rng* dropout_rng) {
  const int k = cfg_.context_length;
  const int seq = 3 * k - 1;
  const std::size_t b = batch.size();
  if (b == 0) throw Error("dt forward: empty batch");
  nn::Rng unused_rng(0);
  nn::Rng& drng = dropout_rng != nullptr ? *dropout_rng : unused_rng;

  std::vector<double> rtg_vals;
  std::vector<int> state_ids, action_ids, token_times;
  std::vector<int> rtg_dst, state_dst, action_dst;
  std::vector<int> first_valid(b);
  std::vector<int> state_token_rows;
  rtg_vals.reserve(b * k);
  for (std::size_t i = 0; i < b; ++i) {
    const TokenWindow& w = batch[i];
    if (static_cast<int>(w.rtgs.size()) != k ||
        static_cast<int>(w.states.size()) != k ||
        static_cast<int>(w.actions.size()) != k - 1) {
      throw Error("dt forward: window does not match context_length");
    }
    first_valid[i] = 3 * w.n_pad;
    const int base = static_cast<int>(i) * seq;
    for (int j = 0; j < k; ++j) {
      // Scaled so return-sized numbers and the unit-scale embeddings start
      // out commensurate.
      rtg_vals.push_back(w.rtgs[j] * cfg_.rtg_scale);
      rtg_dst.push_back(base + 3 * j);
      state_ids.push_back(w.states[j]);
      state_dst.push_back(base + 3 * j + 1);
      state_token_rows.push_back(base + 3 * j + 1);
      if (j < k - 1) {
        action_ids.push_back(w.actions[j]);
        action_dst.push_back(base + 3 * j + 2);
      }
    }
    // Every token of a triple shares that triple's timestep embedding.
    for (int p = 0; p < seq; ++p) token_times.push_back(w.timesteps[p / 3]);
  }
  const std::size_t n_rows = b * seq;

  const nn::NodeId rtg_emb =
      g.add_bias(g.matmul(g.input(nn::Tensor::column(rtg_vals)),
                          g.param(params_.get("embed.rtg.w"))),
                 g.param(params_.get("embed.rtg.b")));
  const nn::NodeId state_emb =
      g.gather_rows(g.param(params_.get("embed.state")), state_ids);
  nn::NodeId x = g.add(g.scatter_rows(rtg_emb, rtg_dst, n_rows),
                       g.scatter_rows(state_emb, state_dst, n_rows));
  if (k > 1) {
    const nn::NodeId action_emb =
        g.gather_rows(g.param(params_.get("embed.action")), action_ids);
    x = g.add(x, g.scatter_rows(action_emb, action_dst, n_rows));
  }
  x = g.add(x, g.gather_rows(g.param(params_.get("embed.time")), token_times));
  x = g.dropout(x, cfg_.dropout, train, drng);

  for (int l = 0; l < cfg_.n_layers; ++l) {
    const std::string base = "block" + std::to_string(l);
    nn::NodeId h = g.layer_norm(x, g.param(params_.get(base + ".ln1.g")),
                                g.param(params_.get(base + ".ln1.b")));
    nn::NodeId qkv = g.add_bias(
        g.matmul(h, g.param(params_.get(base + ".attn.qkv.w"))),
        g.param(params_.get(base + ".attn.qkv.b")));
    nn::NodeId attn =
        g.causal_self_attention(qkv, b, seq, cfg_.n_heads, first_valid);
    nn::NodeId proj = g.add_bias(
        g.matmul(attn, g.param(params_.get(base + ".attn.proj.w"))),
        g.param(params_.get(base + ".attn.proj.b")));
    x = g.add(x, g.dropout(proj, cfg_.dropout, train, drng));

    nn::NodeId h2 = g.layer_norm(x, g.param(params_.get(base + ".ln2.g")),
                                 g.param(params_.get(base + ".ln2.b")));
    nn::NodeId fc1 = g.relu(g.add_bias(
        g.matmul(h2, g.param(params_.get(base + ".mlp.fc1.w"))),
        g.param(params_.get(base + ".mlp.fc1.b"))));
    nn::NodeId fc2 = g.add_bias(
        g.matmul(fc1, g.param(params_.get(base + ".mlp.fc2.w"))),
        g.param(params_.get(base + ".mlp.fc2.b")));
    x = g.add(x, g.dropout(fc2, cfg_.dropout, train, drng));
  }

  x = g.layer_norm(x, g.param(params_.get("lnf.g")),
                   g.param(params_.get("lnf.b")));
  const nn::NodeId at_states = g.gather_rows(x, state_token_rows);
  return g.add_bias(g.matmul(at_states, g.param(params_.get("head.w"))),
                    g.param(params_.get("head.b")));
}

int DtModel::act(const std::vector<HistoryTriple>& history, double current_rtg,
                 int current_state, int current_timestep) {
  const int k = cfg_.context_length;
  TokenWindow w;
  w.rtgs.assign(k, 0.0);
  w.states.assign(k, n_states_);
  w.actions.assign(k - 1, n_actions_);
  w.timesteps.assign(k, 0);
  w.targets.assign(k, -1);

  const int n_hist = std::min<int>(k - 1, static_cast<int>(history.size()));
  w.n_pad = k - 1 - n_hist;
  for (int j = 0; j < n_hist; ++j) {
    const HistoryTriple& h =
        history[history.size() - static_cast<std::size_t>(n_hist - j)];
    const int slot = w.n_pad + j;
    w.rtgs[slot] = h.rtg;
    w.states[slot] = h.state;
    w.actions[slot] = h.action;
    w.timesteps[slot] = std::min(h.timestep, episode_cap_);
  }
  w.rtgs[k - 1] = current_rtg;
  w.states[k - 1] = current_state;
  w.timesteps[k - 1] = std::min(current_timestep, episode_cap_);

  nn::Graph g;
  const nn::NodeId logits = forward(g, {w}, /*train=*/false, nullptr);
  const nn::Tensor& t = g.value(logits);
  const std::size_t row = static_cast<std::size_t>(k - 1);
  int best = 0;
  for (int a = 1; a < n_actions_; ++a) {
    if (t.at(row, a) > t.at(row, best)) best = a;
  }
  return best;
}

void DtModel::save(const std::string& path,
                   const nlohmann::json& extra_meta) const {
  nlohmann::json meta = {{"kind", "dt"},
                         {"n_states", n_states_},
                         {"n_actions", n_actions_},
                         {"episode_cap", episode_cap_},
                         {"config", cfg_.to_json()}};
  for (auto it = extra_meta.begin(); it != extra_meta.end(); ++it) {
    meta[it.key()] = it.value();
  }
  nn::save_checkpoint(params_, path, meta.dump());
}

DtModel DtModel::load(const std::string& path, nlohmann::json* meta_out) {
  const nn::LoadedCheckpoint ckpt = nn::load_checkpoint(path);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(ckpt.metadata_json);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("bad checkpoint metadata: ") + e.what());
  }
  if (meta.value("kind", std::string{}) != "dt") {
    throw SchemaError("checkpoint is not a dt checkpoint: " + path);
  }
  DtModel model(meta.at("n_states").get<int>(), meta.at("n_actions").get<int>(),
                meta.at("episode_cap").get<int>(),
                DtConfig::from_json(meta.at("config")), /*seed=*/0);
  ckpt.restore_into(model.params_);
  if (meta_out != nullptr) *meta_out = meta;
  return model;
}

DtModel train_dt(const OfflineDataset& ds, const DtConfig& cfg,
                 std::uint64_t seed,
                 const std::function<void(int step, DtModel&)>& callback,
                 int callback_every) {
  cfg.validate();
  if (ds.trajectories.empty()) throw Error("train_dt: empty dataset");
  // (trajectory, t) index over every position with a target action.
  std::vector<std::pair<int, int>> positions;
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
    const Trajectory& traj = ds.trajectories[i];
    traj.validate();
    if (traj.rtg.empty()) {
      throw Error("train_dt: trajectory " + std::to_string(i) +
                  " has no return-to-go values");
    }
    for (int t = 0; t < traj.length(); ++t) {
      positions.emplace_back(static_cast<int>(i), t);
    }
  }

  DtModel model(ds.env_spec.n_states, ds.env_spec.n_actions,
                ds.env_spec.episode_cap, cfg, seed);
  nn::Adam opt(model.params(), {cfg.learning_rate, cfg.adam_beta1,
                                cfg.adam_beta2, 1e-8, cfg.weight_decay});
  nn::Rng sample_rng = nn::Rng::fork(seed, 11);
  nn::Rng dropout_rng = nn::Rng::fork(seed, 12);

  const int k = cfg.context_length;
  nn::Graph g;
  std::vector<TokenWindow> batch(cfg.batch_size);
  for (int step = 1; step <= cfg.n_training_steps; ++step) {
    std::vector<int> targets;
    std::vector<double> weights;
    for (int i = 0; i < cfg.batch_size; ++i) {
      const auto [ti, t] = positions[sample_rng.below(positions.size())];
      batch[i] = make_window(ds.trajectories[ti], t, k, ds.env_spec.n_states,
                             ds.env_spec.n_actions);
      for (int j = 0; j < k; ++j) {
        targets.push_back(batch[i].targets[j]);
        weights.push_back(batch[i].targets[j] >= 0 ? 1.0 : 0.0);
      }
    }

    g.clear();
    const nn::NodeId logits = model.forward(g, batch, /*train=*/true,
                                            &dropout_rng);
    const nn::NodeId loss = g.softmax_cross_entropy(logits, targets, weights);
    const double loss_v = g.value(loss).v[0];
    if (!std::isfinite(loss_v) || std::abs(loss_v) > 1e9) {
      std::string where = "loss";
      if (auto bad = g.find_non_finite()) {
        where = bad->op + " (node " + std::to_string(bad->node) + ")";
      }
      throw DivergenceError("dt training diverged at step " +
                            std::to_string(step) + ", first bad op: " + where);
    }
    model.params().zero_grad();
    g.backward(loss);
    opt.step();

    if (callback && callback_every > 0 &&
        (step % callback_every == 0 || step == cfg.n_training_steps)) {
      callback(step, model);
    }
  }
  return model;
}

double greedy_accuracy(DtModel& model, const OfflineDataset& ds) {
  const int k = model.config().context_length;
  long correct = 0;
  long total = 0;
  nn::Graph g;
  for (const Trajectory& traj : ds.trajectories) {
    for (int t = 0; t < traj.length(); ++t) {
      const TokenWindow w = make_window(traj, t, k, model.n_states(),
                                        model.n_actions());
      g.clear();
      const nn::NodeId logits = model.forward(g, {w}, false, nullptr);
      const nn::Tensor& v = g.value(logits);
      const std::size_t row = static_cast<std::size_t>(k - 1);
      int best = 0;
      for (int a = 1; a < model.n_actions(); ++a) {
        if (v.at(row, a) > v.at(row, best)) best = a;
      }
      correct += best == traj.actions[t] ? 1 : 0;
      ++total;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

double conditioned_rollout(DtModel& model, const Env& env, double target_rtg,
                           std::uint64_t seed) {
  std::unique_ptr<Env> sim = env.clone();
  int s = sim->reset(seed);
  double remaining = target_rtg;
  double total = 0.0;
  int t = 0;
  std::vector<DtModel::HistoryTriple> history;
  while (sim->episode_active()) {
    const int a = model.act(history, remaining, s, t);
    const StepResult r = sim->step(a);
    history.push_back({remaining, s, a, t});
    total += r.reward;
    remaining -= r.reward;
    s = r.next_state;
    ++t;
  }
  return total;
}

}  // namespace qdt
