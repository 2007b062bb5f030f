#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "qdt/cql.hpp"
#include "qdt/dataset.hpp"
#include "qdt/dt.hpp"
#include "qdt/env.hpp"
#include "qdt/errors.hpp"
#include "qdt/experiments.hpp"
#include "qdt/relabel.hpp"

namespace py = pybind11;
using namespace qdt;

PYBIND11_MODULE(_qdt, m) {
  m.doc() = "Offline RL toys: conservative Q-learning, return-to-go "
            "relabelling, and a small decision transformer.";

  // Base first: translators run newest-first, so the subclasses must be
  // registered after their base to win.
  py::register_exception<Error>(m, "QdtError", PyExc_RuntimeError);
  py::register_exception<SchemaError>(m, "SchemaError", PyExc_ValueError);
  py::register_exception<DivergenceError>(m, "DivergenceError",
                                          PyExc_RuntimeError);

  py::class_<StepResult>(m, "StepResult")
      .def_readonly("next_state", &StepResult::next_state)
      .def_readonly("reward", &StepResult::reward)
      .def_readonly("done", &StepResult::done)
      .def_readonly("truncated", &StepResult::truncated);

  py::class_<EnvSpec>(m, "EnvSpec")
      .def_readonly("name", &EnvSpec::name)
      .def_readonly("n_states", &EnvSpec::n_states)
      .def_readonly("n_actions", &EnvSpec::n_actions)
      .def_readonly("episode_cap", &EnvSpec::episode_cap)
      .def_readonly("seed", &EnvSpec::seed)
      .def_property_readonly("reward_mode", [](const EnvSpec& s) {
        return to_string(s.reward_mode);
      });

  py::class_<Env>(m, "Env")
      .def("reset", &Env::reset, py::arg("seed") = 0)
      .def("step", &Env::step, py::arg("action"))
      .def("state", &Env::state)
      .def("episode_active", &Env::episode_active)
      .def("is_terminal", &Env::is_terminal, py::arg("state"))
      .def("start_state", &Env::start_state)
      .def_property_readonly("n_states", &Env::n_states)
      .def_property_readonly("n_actions", &Env::n_actions)
      .def_property_readonly("episode_cap", &Env::episode_cap)
      .def_property_readonly("spec", &Env::spec)
      .def("to_json", [](const Env& e) { return e.to_json().dump(); });

  m.def(
      "make_env",
      [](const std::string& name, std::uint64_t seed) {
        return make_env(name, seed);
      },
      py::arg("name_or_path"), py::arg("seed") = 0,
      "Builtin env name (simple6x6, simple6x6-walled, chain<N>, stitch, "
      "plus a -delayed suffix) or a path to a JSON env spec.");
  m.def(
      "env_from_json",
      [](const std::string& spec) {
        return env_from_json(nlohmann::json::parse(spec));
      },
      py::arg("spec_json"));

  py::class_<OptimalValues>(m, "OptimalValues")
      .def_readonly("v", &OptimalValues::v)
      .def_readonly("q", &OptimalValues::q)
      .def_readonly("optimal_return_from_start",
                    &OptimalValues::optimal_return_from_start)
      .def_readonly("iterations", &OptimalValues::iterations)
      .def("greedy_action", &OptimalValues::greedy_action, py::arg("state"));

  m.def("optimal_values", &optimal_values, py::arg("env"), py::arg("gamma"),
        py::arg("tol") = 1e-10, py::arg("max_iterations") = 100000);

  py::class_<Trajectory>(m, "Trajectory")
      .def(py::init<>())
      .def_readwrite("states", &Trajectory::states)
      .def_readwrite("actions", &Trajectory::actions)
      .def_readwrite("rewards", &Trajectory::rewards)
      .def_readwrite("rtg", &Trajectory::rtg)
      .def_readwrite("truncated", &Trajectory::truncated)
      .def("total_return", &Trajectory::total_return)
      .def("__len__", &Trajectory::length);

  m.def("compute_rtg", [](Trajectory t) {
    compute_rtg(t);
    return t;
  });

  py::class_<DatasetStats>(m, "DatasetStats")
      .def_readonly("n_episodes", &DatasetStats::n_episodes)
      .def_readonly("n_steps", &DatasetStats::n_steps)
      .def_readonly("max_return", &DatasetStats::max_return)
      .def_readonly("min_return", &DatasetStats::min_return)
      .def_readonly("mean_return", &DatasetStats::mean_return);

  py::class_<OfflineDataset>(m, "OfflineDataset")
      .def_readonly("trajectories", &OfflineDataset::trajectories)
      .def_readonly("env_spec", &OfflineDataset::env_spec)
      .def("stats", &OfflineDataset::stats)
      .def("env_json", [](const OfflineDataset& d) { return d.env_json.dump(); })
      .def("__len__",
           [](const OfflineDataset& d) { return d.trajectories.size(); });

  m.def("generate_random", &generate_random, py::arg("env"),
        py::arg("n_episodes"), py::arg("seed"));
  m.def("generate_random_filtered", &generate_random_filtered, py::arg("env"),
        py::arg("n_surviving"), py::arg("threshold"), py::arg("seed"));
  m.def("generate_epsilon_ramp", &generate_epsilon_ramp, py::arg("env"),
        py::arg("oracle"), py::arg("n_episodes"), py::arg("seed"));
  m.def("filter_max_return", &filter_max_return, py::arg("dataset"),
        py::arg("threshold"));
  m.def("remove_top_fraction", &remove_top_fraction, py::arg("dataset"),
        py::arg("x_percent"));
  m.def("save_dataset", &save_dataset, py::arg("dataset"), py::arg("path"));
  m.def("load_dataset", &load_dataset, py::arg("path"));

  py::class_<TrajectoryRelabelReport>(m, "TrajectoryRelabelReport")
      .def_readonly("index", &TrajectoryRelabelReport::index)
      .def_readonly("n_positions", &TrajectoryRelabelReport::n_positions)
      .def_readonly("n_replaced", &TrajectoryRelabelReport::n_replaced)
      .def_readonly("mean_uplift", &TrajectoryRelabelReport::mean_uplift)
      .def_readonly("max_uplift", &TrajectoryRelabelReport::max_uplift);

  py::class_<RelabelReport>(m, "RelabelReport")
      .def_readonly("n_positions_total", &RelabelReport::n_positions_total)
      .def_readonly("n_positions_replaced",
                    &RelabelReport::n_positions_replaced)
      .def_readonly("mean_uplift", &RelabelReport::mean_uplift)
      .def_readonly("max_uplift", &RelabelReport::max_uplift)
      .def_readonly("per_trajectory", &RelabelReport::per_trajectory)
      .def("to_json", [](const RelabelReport& r) { return r.to_json().dump(); });

  m.def("relabel_trajectory", &relabel_trajectory, py::arg("trajectory"),
        py::arg("value_fn"));
  m.def("relabel_dataset", &relabel_dataset, py::arg("dataset"),
        py::arg("value_fn"), py::arg("value_fn_id") = "");
  m.def("window_rtg", &window_rtg, py::arg("trajectory"), py::arg("t"),
        py::arg("k"));

  py::class_<CqlConfig>(m, "CqlConfig")
      .def(py::init<>())
      .def_readwrite("alpha", &CqlConfig::alpha)
      .def_readwrite("gamma", &CqlConfig::gamma)
      .def_readwrite("learning_rate", &CqlConfig::learning_rate)
      .def_readwrite("target_update_rate", &CqlConfig::target_update_rate)
      .def_readwrite("batch_size", &CqlConfig::batch_size)
      .def_readwrite("n_training_steps", &CqlConfig::n_training_steps)
      .def_readwrite("state_embed_dim", &CqlConfig::state_embed_dim)
      .def_readwrite("hidden_layers", &CqlConfig::hidden_layers)
      .def_readwrite("hidden_units", &CqlConfig::hidden_units);

  py::class_<TwinQFunction>(m, "TwinQFunction")
      .def("value_estimate", &TwinQFunction::value_estimate, py::arg("state"))
      .def("greedy_action", &TwinQFunction::greedy_action, py::arg("state"))
      .def("twin_min_qvalues", &TwinQFunction::twin_min_qvalues,
           py::arg("state"))
      .def("save",
           [](const TwinQFunction& q, const std::string& path) {
             q.save(path, nlohmann::json::object());
           })
      .def_static("load", [](const std::string& path) {
        return TwinQFunction::load(path);
      });

  m.def(
      "train_cql",
      [](const OfflineDataset& ds, const CqlConfig& cfg, std::uint64_t seed) {
        return train_cql(ds, cfg, seed);
      },
      py::arg("dataset"), py::arg("config"), py::arg("seed"),
      py::call_guard<py::gil_scoped_release>());
  m.def(
      "value_estimate",
      [](TwinQFunction& q, const Env& env, int state) {
        return value_estimate(q, env, state);
      },
      py::arg("twinq"), py::arg("env"), py::arg("state"));
  m.def(
      "make_value_fn",
      [](TwinQFunction& q, const Env& env) { return make_value_fn(q, env); },
      py::arg("twinq"), py::arg("env"), py::keep_alive<0, 1>());
  m.def("greedy_rollout", &greedy_rollout, py::arg("twinq"), py::arg("env"),
        py::arg("seed") = 0);

  py::class_<TabularQConfig>(m, "TabularQConfig")
      .def(py::init<>())
      .def_readwrite("alpha", &TabularQConfig::alpha)
      .def_readwrite("gamma", &TabularQConfig::gamma)
      .def_readwrite("learning_rate", &TabularQConfig::learning_rate)
      .def_readwrite("target_update_rate", &TabularQConfig::target_update_rate)
      .def_readwrite("n_training_steps", &TabularQConfig::n_training_steps);

  py::class_<TabularQ>(m, "TabularQ")
      .def_readonly("n_states", &TabularQ::n_states)
      .def_readonly("n_actions", &TabularQ::n_actions)
      .def("q", [](const TabularQ& t, int s, int a) { return t.at(s, a); })
      .def("max_q", &TabularQ::max_q, py::arg("state"))
      .def("greedy_action", &TabularQ::greedy_action, py::arg("state"));

  m.def("train_cql_tabular", &train_cql_tabular, py::arg("dataset"),
        py::arg("config"), py::call_guard<py::gil_scoped_release>());
  m.def(
      "tabular_value_fn",
      [](const TabularQ& t, const Env& env) { return make_value_fn(t, env); },
      py::arg("table"), py::arg("env"));

  py::class_<DtConfig>(m, "DtConfig")
      .def(py::init<>())
      .def_readwrite("n_layers", &DtConfig::n_layers)
      .def_readwrite("n_heads", &DtConfig::n_heads)
      .def_readwrite("embed_dim", &DtConfig::embed_dim)
      .def_readwrite("context_length", &DtConfig::context_length)
      .def_readwrite("rtg_conditioning", &DtConfig::rtg_conditioning)
      .def_readwrite("dropout", &DtConfig::dropout)
      .def_readwrite("learning_rate", &DtConfig::learning_rate)
      .def_readwrite("batch_size", &DtConfig::batch_size)
      .def_readwrite("n_training_steps", &DtConfig::n_training_steps);

  py::class_<DtModel>(m, "DtModel")
      .def("act",
           [](DtModel& m2, double rtg, int state, int timestep) {
             return m2.act({}, rtg, state, timestep);
           },
           py::arg("rtg"), py::arg("state"), py::arg("timestep") = 0)
      .def("save",
           [](const DtModel& m2, const std::string& path) {
             m2.save(path, nlohmann::json::object());
           })
      .def_static("load",
                  [](const std::string& path) { return DtModel::load(path); });

  m.def(
      "train_dt",
      [](const OfflineDataset& ds, const DtConfig& cfg, std::uint64_t seed) {
        return train_dt(ds, cfg, seed);
      },
      py::arg("dataset"), py::arg("config"), py::arg("seed"),
      py::call_guard<py::gil_scoped_release>());
  m.def("greedy_accuracy", &greedy_accuracy, py::arg("model"),
        py::arg("dataset"));
  m.def("conditioned_rollout", &conditioned_rollout, py::arg("model"),
        py::arg("env"), py::arg("target_rtg"), py::arg("seed") = 0,
        py::call_guard<py::gil_scoped_release>());

  py::class_<ExperimentResult>(m, "ExperimentResult")
      .def_readonly("id", &ExperimentResult::id)
      .def_readonly("n_seeds", &ExperimentResult::n_seeds)
      .def_readonly("wall_seconds", &ExperimentResult::wall_seconds)
      .def_readonly("failures", &ExperimentResult::failures)
      .def("mean", &ExperimentResult::mean, py::arg("agent"),
           py::arg("protocol"), py::arg("variant") = "")
      .def("stddev", &ExperimentResult::stddev, py::arg("agent"),
           py::arg("protocol"), py::arg("variant") = "")
      .def("to_json", [](const ExperimentResult& r) { return r.to_json().dump(); });

  py::class_<PipelineConfig>(m, "PipelineConfig")
      .def(py::init<>())
      .def_readwrite("env_name", &PipelineConfig::env_name)
      .def_readwrite("n_episodes", &PipelineConfig::n_episodes)
      .def_readwrite("filter_threshold", &PipelineConfig::filter_threshold)
      .def_readwrite("cql", &PipelineConfig::cql)
      .def_readwrite("dt", &PipelineConfig::dt)
      .def_readwrite("eval_every", &PipelineConfig::eval_every)
      .def_readwrite("eval_episodes", &PipelineConfig::eval_episodes);

  m.def("run_table1", &run_table1, py::arg("seeds") = 10,
        py::arg("master_seed") = 0, py::arg("base") = PipelineConfig{},
        py::call_guard<py::gil_scoped_release>());
  m.def("run_delayed", &run_delayed, py::arg("seeds") = 3,
        py::arg("master_seed") = 0, py::arg("base") = PipelineConfig{},
        py::call_guard<py::gil_scoped_release>());
  m.def("run_topx", &run_topx,
        py::arg("x_list") = std::vector<double>{0, 25, 50, 75, 90},
        py::arg("seeds") = 3, py::arg("master_seed") = 0,
        py::arg("base") = PipelineConfig{},
        py::call_guard<py::gil_scoped_release>());
  m.def("emit", &emit, py::arg("result"), py::arg("out_dir"));

  m.attr("__version__") = "0.1.0";
}
