#include "qdt/cli.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "qdt/checkpoint.hpp"
#include "qdt/cql.hpp"
#include "qdt/dataset.hpp"
#include "qdt/dt.hpp"
#include "qdt/env.hpp"
#include "qdt/errors.hpp"
#include "qdt/experiments.hpp"
#include "qdt/relabel.hpp"

namespace qdt::cli {

namespace {

std::string iso_timestamp() {
  const std::time_t now = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

// Outputs themselves stay timestamp-free so reruns are byte-identical; the
// timestamp lives only in this snapshot.
void write_snapshot(const std::string& beside_path, const nlohmann::json& cfg,
                    const std::vector<std::string>& args) {
  nlohmann::json snap = {{"config", cfg},
                         {"args", args},
                         {"timestamp", iso_timestamp()}};
  const std::string path = beside_path + ".config.json";
  std::ofstream os(path);
  if (!os) throw IoError("cannot write snapshot " + path);
  os << snap.dump(2) << "\n";
}

nlohmann::json load_config_file(const std::string& path) {
  if (path.empty()) return nlohmann::json::object();
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config file " + path);
  try {
    nlohmann::json j;
    is >> j;
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("bad config file " + path + ": " + e.what());
  }
}

// Flags the full CqlConfig surface onto a subcommand.
void add_cql_options(CLI::App* cmd, CqlConfig& cfg) {
  cmd->add_option("--alpha", cfg.alpha, "Conservative weight");
  cmd->add_option("--gamma", cfg.gamma, "Discount factor");
  cmd->add_option("--cql-lr", cfg.learning_rate, "Learning rate");
  cmd->add_option("--target-update-rate", cfg.target_update_rate,
                  "Soft target update coefficient");
  cmd->add_option("--cql-batch-size", cfg.batch_size, "Minibatch size");
  cmd->add_option("--cql-steps", cfg.n_training_steps, "Training updates");
  cmd->add_option("--state-embed-dim", cfg.state_embed_dim,
                  "State embedding dimension");
  cmd->add_option("--hidden-layers", cfg.hidden_layers, "MLP hidden layers");
  cmd->add_option("--hidden-units", cfg.hidden_units, "MLP hidden units");
}

void add_dt_options(CLI::App* cmd, DtConfig& cfg) {
  cmd->add_option("--layers", cfg.n_layers, "Transformer layers");
  cmd->add_option("--heads", cfg.n_heads, "Attention heads");
  cmd->add_option("--embed-dim", cfg.embed_dim, "Embedding dimension");
  cmd->add_option("--context", cfg.context_length, "Context length K");
  cmd->add_option("--target-rtg", cfg.rtg_conditioning,
                  "Return-to-go conditioning target at evaluation");
  cmd->add_option("--dropout", cfg.dropout, "Dropout probability");
  cmd->add_option("--dt-lr", cfg.learning_rate, "Learning rate");
  cmd->add_option("--dt-batch-size", cfg.batch_size, "Minibatch size");
  cmd->add_option("--dt-steps", cfg.n_training_steps, "Training steps");
}

int dispatch(const std::vector<std::string>& args);

}  // namespace

int run(const std::vector<std::string>& args) {
  try {
    return dispatch(args);
  } catch (const SchemaError& e) {
    std::cerr << "schema error: " << e.what() << "\n";
    return kSchemaError;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIoError;
  } catch (const DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return kDivergenceError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInternalError;
  }
}

namespace {

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{
      "qdt: conservative Q-learning, return-to-go relabelling, and decision\n"
      "transformer training on discrete toy environments.\n\n"
      "Exit codes: 0 ok, 1 internal error, 2 usage, 3 io, 4 schema, "
      "5 divergence."};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path,
                 "JSON config file (defaults < config file < flags)")
      ->expected(1);
  // Let subcommands hand unmatched flags (notably --config) back up.
  app.fallthrough();
  // Show defaults in --help.
  app.option_defaults()->always_capture_default();

  // gen-data ----------------------------------------------------------------
  auto* gen = app.add_subcommand("gen-data", "Roll out a behaviour policy");
  std::string gen_env = "simple6x6";
  std::string gen_out = "dataset.jsonl";
  std::string gen_policy = "random";
  int gen_episodes = 100;
  std::uint64_t gen_seed = 0;
  std::uint64_t gen_env_seed = 0;
  double gen_filter = 0.0;
  bool gen_do_filter = false;
  bool gen_surviving = false;
  gen->add_option("--env", gen_env, "Builtin env name or JSON spec path");
  gen->add_option("--env-seed", gen_env_seed, "Env seed (action remap)");
  gen->add_option("--episodes", gen_episodes, "Episode count");
  gen->add_option("--seed", gen_seed, "Generation seed")->envname("QDT_SEED");
  gen->add_option("--out", gen_out, "Output JSONL path");
  gen->add_option("--policy", gen_policy,
                  "Behaviour policy: random | epsilon-ramp");
  gen->add_option("--filter-max-return", gen_filter,
                  "Drop episodes with total return above this");
  gen->add_flag("--surviving", gen_surviving,
                "Generate until --episodes episodes pass the filter");

  // train-cql ---------------------------------------------------------------
  auto* tcql = app.add_subcommand("train-cql", "Train conservative twin Q");
  std::string tcql_dataset, tcql_out = "q.ckpt";
  std::uint64_t tcql_seed = 0;
  CqlConfig cql_cfg;
  tcql->add_option("--dataset", tcql_dataset, "Input dataset")->required();
  tcql->add_option("--out", tcql_out, "Checkpoint path");
  tcql->add_option("--seed", tcql_seed, "Training seed")->envname("QDT_SEED");
  add_cql_options(tcql, cql_cfg);

  // relabel -----------------------------------------------------------------
  auto* rel = app.add_subcommand(
      "relabel", "Rewrite return-to-go with a learned value function");
  std::string rel_dataset, rel_ckpt, rel_out = "relabelled.jsonl", rel_report;
  rel->add_option("--dataset", rel_dataset, "Input dataset")->required();
  rel->add_option("--q-checkpoint", rel_ckpt, "CQL checkpoint")->required();
  rel->add_option("--out", rel_out, "Output JSONL path");
  rel->add_option("--report", rel_report, "Relabel report JSON path");

  // train-dt ----------------------------------------------------------------
  auto* tdt = app.add_subcommand("train-dt", "Train the decision transformer");
  std::string tdt_dataset, tdt_out = "dt.ckpt";
  std::uint64_t tdt_seed = 0;
  bool tdt_relabelled = false;
  DtConfig dt_cfg;
  tdt->add_option("--dataset", tdt_dataset, "Input dataset")->required();
  tdt->add_option("--out", tdt_out, "Checkpoint path");
  tdt->add_option("--seed", tdt_seed, "Training seed")->envname("QDT_SEED");
  tdt->add_flag("--relabelled", tdt_relabelled,
                "Expect a relabelled dataset (the QDT path)");
  add_dt_options(tdt, dt_cfg);

  // eval --------------------------------------------------------------------
  auto* ev = app.add_subcommand("eval", "Roll out a trained agent");
  std::string ev_env, ev_q, ev_dt;
  int ev_episodes = 5;
  std::uint64_t ev_seed = 0;
  double ev_target = std::numeric_limits<double>::quiet_NaN();
  ev->add_option("--env", ev_env,
                 "Env name/path (default: the checkpoint's env)");
  ev->add_option("--q-checkpoint", ev_q, "CQL checkpoint");
  ev->add_option("--dt-checkpoint", ev_dt, "DT checkpoint");
  ev->add_option("--episodes", ev_episodes, "Evaluation episodes");
  ev->add_option("--seed", ev_seed, "Rollout seed")->envname("QDT_SEED");
  ev->add_option("--target-rtg", ev_target,
                 "Conditioning target (default: checkpoint config)");

  // experiment ----------------------------------------------------------------
  auto* ex = app.add_subcommand("experiment", "Scripted reproductions");
  std::string ex_kind;
  std::string ex_out = "results";
  int ex_seeds = -1;
  std::uint64_t ex_master = 0;
  std::vector<double> ex_xs;
  std::string ex_env = "simple6x6";
  int ex_episodes = 100;
  ex->add_option("kind", ex_kind, "table1 | delayed | topx")->required();
  ex->add_option("--out", ex_out, "Output directory");
  ex->add_option("--seeds", ex_seeds, "Seed count (default per experiment)");
  ex->add_option("--master-seed", ex_master, "Master seed")
      ->envname("QDT_SEED");
  ex->add_option("--x-list", ex_xs, "topx removal percentages");
  ex->add_option("--env", ex_env, "Base env");
  ex->add_option("--episodes", ex_episodes, "Dataset episode count");
  CqlConfig ex_cql;
  DtConfig ex_dt;
  add_cql_options(ex, ex_cql);
  add_dt_options(ex, ex_dt);

  // CLI11's vector overload wants the arguments reversed.
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(std::move(reversed));
  } catch (const CLI::CallForHelp& e) {
    app.exit(e);  // prints the right help text, including subcommand help
    return kOk;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  // Config file values override defaults, flags override the file.
  const nlohmann::json file_cfg = load_config_file(config_path);
  auto merge_cql = [&](CLI::App* cmd, CqlConfig& cfg) {
    if (!file_cfg.contains("cql")) return;
    CqlConfig from_file = CqlConfig::from_json(file_cfg["cql"]);
    CqlConfig flags = cfg;
    cfg = from_file;
    // Re-apply any flag the user actually passed.
    if (cmd->count("--alpha")) cfg.alpha = flags.alpha;
    if (cmd->count("--gamma")) cfg.gamma = flags.gamma;
    if (cmd->count("--cql-lr")) cfg.learning_rate = flags.learning_rate;
    if (cmd->count("--target-update-rate")) {
      cfg.target_update_rate = flags.target_update_rate;
    }
    if (cmd->count("--cql-batch-size")) cfg.batch_size = flags.batch_size;
    if (cmd->count("--cql-steps")) cfg.n_training_steps = flags.n_training_steps;
    if (cmd->count("--state-embed-dim")) {
      cfg.state_embed_dim = flags.state_embed_dim;
    }
    if (cmd->count("--hidden-layers")) cfg.hidden_layers = flags.hidden_layers;
    if (cmd->count("--hidden-units")) cfg.hidden_units = flags.hidden_units;
  };
  auto merge_dt = [&](CLI::App* cmd, DtConfig& cfg) {
    if (!file_cfg.contains("dt")) return;
    DtConfig from_file = DtConfig::from_json(file_cfg["dt"]);
    DtConfig flags = cfg;
    cfg = from_file;
    if (cmd->count("--layers")) cfg.n_layers = flags.n_layers;
    if (cmd->count("--heads")) cfg.n_heads = flags.n_heads;
    if (cmd->count("--embed-dim")) cfg.embed_dim = flags.embed_dim;
    if (cmd->count("--context")) cfg.context_length = flags.context_length;
    if (cmd->count("--target-rtg")) {
      cfg.rtg_conditioning = flags.rtg_conditioning;
    }
    if (cmd->count("--dropout")) cfg.dropout = flags.dropout;
    if (cmd->count("--dt-lr")) cfg.learning_rate = flags.learning_rate;
    if (cmd->count("--dt-batch-size")) cfg.batch_size = flags.batch_size;
    if (cmd->count("--dt-steps")) cfg.n_training_steps = flags.n_training_steps;
  };

  if (gen->parsed()) {
    gen_do_filter = gen->count("--filter-max-return") > 0 || gen_surviving;
    std::unique_ptr<Env> env = make_env(gen_env, gen_env_seed);
    OfflineDataset ds;
    if (gen_policy == "random") {
      if (gen_surviving) {
        ds = generate_random_filtered(*env, gen_episodes, gen_filter, gen_seed);
      } else {
        ds = generate_random(*env, gen_episodes, gen_seed);
        if (gen_do_filter) ds = filter_max_return(ds, gen_filter);
      }
    } else if (gen_policy == "epsilon-ramp") {
      const OptimalValues oracle = optimal_values(*env, 1.0);
      ds = generate_epsilon_ramp(*env, oracle, gen_episodes, gen_seed);
      if (gen_do_filter) ds = filter_max_return(ds, gen_filter);
    } else {
      throw Error("unknown policy: " + gen_policy);
    }
    save_dataset(ds, gen_out);
    const DatasetStats stats = ds.stats();
    std::cout << "episodes " << stats.n_episodes << ", steps " << stats.n_steps
              << ", returns [" << stats.min_return << ", " << stats.max_return
              << "], mean " << stats.mean_return << "\n";
    write_snapshot(gen_out,
                   {{"command", "gen-data"},
                    {"env", env->to_json()},
                    {"episodes", gen_episodes},
                    {"seed", gen_seed},
                    {"policy", gen_policy},
                    {"filtered", gen_do_filter},
                    {"filter_threshold", gen_filter}},
                   args);
    return kOk;
  }

  if (tcql->parsed()) {
    merge_cql(tcql, cql_cfg);
    const OfflineDataset ds = load_dataset(tcql_dataset);
    TwinQFunction twinq = train_cql(ds, cql_cfg, tcql_seed);
    twinq.save(tcql_out, {{"env", ds.env_json},
                          {"dataset", tcql_dataset},
                          {"seed", tcql_seed}});
    std::cout << "saved " << tcql_out << "\n";
    write_snapshot(tcql_out,
                   {{"command", "train-cql"},
                    {"dataset", tcql_dataset},
                    {"seed", tcql_seed},
                    {"cql", cql_cfg.to_json()}},
                   args);
    return kOk;
  }

  if (rel->parsed()) {
    const OfflineDataset ds = load_dataset(rel_dataset);
    nlohmann::json meta;
    TwinQFunction twinq = TwinQFunction::load(rel_ckpt, &meta);
    if (!meta.contains("env") || meta["env"] != ds.env_json) {
      throw SchemaError(
          "q-checkpoint was trained on a different env spec than the dataset");
    }
    std::unique_ptr<Env> env = env_from_json(ds.env_json);
    auto [out, report] = relabel_dataset(ds, make_value_fn(twinq, *env),
                                         rel_ckpt);
    save_dataset(out, rel_out);
    if (!rel_report.empty()) {
      std::ofstream os(rel_report);
      if (!os) throw IoError("cannot write " + rel_report);
      os << report.to_json().dump(2) << "\n";
    }
    std::cout << "replaced " << report.n_positions_replaced << " of "
              << report.n_positions_total << " positions, mean uplift "
              << report.mean_uplift << "\n";
    write_snapshot(rel_out,
                   {{"command", "relabel"},
                    {"dataset", rel_dataset},
                    {"q_checkpoint", rel_ckpt}},
                   args);
    return kOk;
  }

  if (tdt->parsed()) {
    merge_dt(tdt, dt_cfg);
    const OfflineDataset ds = load_dataset(tdt_dataset);
    if (tdt_relabelled && ds.provenance.value_fn.empty()) {
      throw SchemaError(
          "--relabelled given but the dataset has no relabelling provenance");
    }
    DtModel model = train_dt(ds, dt_cfg, tdt_seed);
    model.save(tdt_out, {{"env", ds.env_json},
                         {"dataset", tdt_dataset},
                         {"seed", tdt_seed},
                         {"relabelled", tdt_relabelled}});
    std::cout << "saved " << tdt_out << "\n";
    write_snapshot(tdt_out,
                   {{"command", "train-dt"},
                    {"dataset", tdt_dataset},
                    {"seed", tdt_seed},
                    {"relabelled", tdt_relabelled},
                    {"dt", dt_cfg.to_json()}},
                   args);
    return kOk;
  }

  if (ev->parsed()) {
    if (ev_q.empty() == ev_dt.empty()) {
      std::cerr << "eval needs exactly one of --q-checkpoint/--dt-checkpoint\n";
      return kUsageError;
    }
    nlohmann::json meta;
    double total = 0.0;
    if (!ev_q.empty()) {
      TwinQFunction twinq = TwinQFunction::load(ev_q, &meta);
      std::unique_ptr<Env> env = ev_env.empty()
                                     ? env_from_json(meta.at("env"))
                                     : make_env(ev_env);
      for (int e = 0; e < ev_episodes; ++e) {
        const double r = greedy_rollout(twinq, *env, ev_seed + e);
        std::cout << "episode " << e << ": " << r << "\n";
        total += r;
      }
    } else {
      DtModel model = DtModel::load(ev_dt, &meta);
      std::unique_ptr<Env> env = ev_env.empty()
                                     ? env_from_json(meta.at("env"))
                                     : make_env(ev_env);
      const double target = std::isnan(ev_target)
                                ? model.config().rtg_conditioning
                                : ev_target;
      for (int e = 0; e < ev_episodes; ++e) {
        const double r = conditioned_rollout(model, *env, target, ev_seed + e);
        std::cout << "episode " << e << ": " << r << "\n";
        total += r;
      }
    }
    std::cout << "mean " << total / ev_episodes << "\n";
    return kOk;
  }

  if (ex->parsed()) {
    merge_cql(ex, ex_cql);
    merge_dt(ex, ex_dt);
    PipelineConfig base;
    base.env_name = ex_env;
    base.n_episodes = ex_episodes;
    base.cql = ex_cql;
    base.dt = ex_dt;
    ExperimentResult result;
    if (ex_kind == "table1") {
      result = run_table1(ex_seeds > 0 ? ex_seeds : 10, ex_master, base);
    } else if (ex_kind == "delayed") {
      result = run_delayed(ex_seeds > 0 ? ex_seeds : 3, ex_master, base);
    } else if (ex_kind == "topx") {
      std::vector<double> xs = ex_xs.empty()
                                   ? std::vector<double>{0, 25, 50, 75, 90}
                                   : ex_xs;
      result = run_topx(xs, ex_seeds > 0 ? ex_seeds : 3, ex_master, base);
    } else {
      std::cerr << "unknown experiment: " << ex_kind << "\n";
      return kUsageError;
    }
    const auto written = emit(result, ex_out);
    for (const std::string& p : written) std::cout << "wrote " << p << "\n";
    for (const std::string& f : result.failures) {
      std::cerr << "seed failure: " << f << "\n";
    }
    write_snapshot(ex_out + "/" + result.id,
                   {{"command", "experiment"},
                    {"kind", ex_kind},
                    {"config", result.config}},
                   args);
    return result.failures.empty() ? kOk : kInternalError;
  }

  std::cerr << "no subcommand\n";
  return kUsageError;
}

}  // namespace

}  // namespace qdt::cli
