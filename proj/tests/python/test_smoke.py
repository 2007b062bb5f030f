"""Smoke tests for the _qdt extension module."""

import json

import pytest

import _qdt as qdt


def test_env_basics():
    env = qdt.make_env("simple6x6", seed=3)
    assert env.n_states == 36
    assert env.n_actions == 8
    assert env.episode_cap == 50
    s = env.reset(0)
    assert s == env.start_state()
    r = env.step(0)
    assert r.reward == pytest.approx(-10.0) or r.reward == pytest.approx(90.0)

    spec = json.loads(env.to_json())
    assert spec["type"] == "grid_maze"
    clone = qdt.env_from_json(env.to_json())
    assert clone.n_states == env.n_states


def test_optimal_values_oracle():
    env = qdt.make_env("simple6x6")
    opt = qdt.optimal_values(env, 1.0)
    assert opt.optimal_return_from_start == pytest.approx(50.0)
    chain = qdt.make_env("chain10")
    assert qdt.optimal_values(chain, 1.0).optimal_return_from_start == -9.0


def test_dataset_roundtrip(tmp_path):
    env = qdt.make_env("chain6")
    ds = qdt.generate_random(env, 5, seed=1)
    assert len(ds) == 5
    path = str(tmp_path / "d.jsonl")
    qdt.save_dataset(ds, path)
    loaded = qdt.load_dataset(path)
    assert len(loaded) == 5
    assert loaded.stats().n_steps == ds.stats().n_steps
    t0 = loaded.trajectories[0]
    for i in range(len(t0)):
        assert t0.rtg[i] == pytest.approx(t0.rewards[i] + t0.rtg[i + 1])


def test_compute_rtg():
    t = qdt.Trajectory()
    t.states = [0, 0, 0, 1]
    t.actions = [0, 0, 0]
    t.rewards = [-10.0, -10.0, 100.0]
    t = qdt.compute_rtg(t)
    assert t.rtg == [80.0, 90.0, 100.0, 0.0]


def test_relabel_with_python_value_fn():
    t = qdt.Trajectory()
    t.states = [0, 1, 2]
    t.actions = [0, 0]
    t.rewards = [1.0, 1.0]
    t = qdt.compute_rtg(t)

    out, report = qdt.relabel_trajectory(t, lambda s: 5.0 if s == 1 else 0.0)
    assert out.rtg == [6.0, 1.0, 0.0]
    assert report.n_replaced == 1
    # monotone uplift
    assert all(a >= b for a, b in zip(out.rtg, t.rtg))

    assert qdt.window_rtg(out, 1, 2) == [out.rewards[0] + out.rtg[1], out.rtg[1]]


def test_tabular_cql_and_relabel_pipeline():
    env = qdt.make_env("chain6")
    ds = qdt.generate_random(env, 10, seed=2)
    cfg = qdt.TabularQConfig()
    cfg.gamma = 0.99
    cfg.learning_rate = 1.0
    cfg.n_training_steps = 4000
    table = qdt.train_cql_tabular(ds, cfg)
    assert table.greedy_action(0) == 0  # move towards the goal

    relabelled, report = qdt.relabel_dataset(ds, qdt.tabular_value_fn(table, env))
    assert report.n_positions_total == ds.stats().n_steps
    assert report.mean_uplift >= 0.0


def test_neural_cql_smoke():
    env = qdt.make_env("chain6")
    ds = qdt.generate_random(env, 10, seed=2)
    cfg = qdt.CqlConfig()
    cfg.n_training_steps = 150
    twinq = qdt.train_cql(ds, cfg, seed=0)
    v = twinq.value_estimate(0)
    assert v == pytest.approx(twinq.value_estimate(0))  # deterministic
    ret = qdt.greedy_rollout(twinq, env, 0)
    assert ret >= -4 * 6  # episode cap bound


def test_dt_smoke(tmp_path):
    env = qdt.make_env("chain6")
    ds = qdt.generate_random(env, 8, seed=3)
    cfg = qdt.DtConfig()
    cfg.n_layers = 1
    cfg.n_heads = 2
    cfg.embed_dim = 16
    cfg.batch_size = 8
    cfg.n_training_steps = 40
    model = qdt.train_dt(ds, cfg, seed=0)
    a1 = model.act(-3.0, 0)
    a2 = model.act(-3.0, 0)
    assert a1 == a2
    ret = qdt.conditioned_rollout(model, env, -5.0, seed=0)
    assert ret >= -4 * 6

    path = str(tmp_path / "dt.ckpt")
    model.save(path)
    loaded = qdt.DtModel.load(path)
    assert loaded.act(-3.0, 0) == a1
    assert qdt.greedy_accuracy(loaded, ds) == qdt.greedy_accuracy(model, ds)


def test_schema_errors_are_value_errors(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{not json\n")
    with pytest.raises(ValueError):
        qdt.load_dataset(str(bad))


def test_emit_csv(tmp_path):
    env = qdt.make_env("chain4")
    base = qdt.PipelineConfig()
    base.env_name = "chain4"
    base.n_episodes = 3
    base.cql.n_training_steps = 20
    base.dt.n_layers = 1
    base.dt.n_heads = 2
    base.dt.embed_dim = 16
    base.dt.n_training_steps = 5
    result = qdt.run_table1(seeds=1, master_seed=0, base=base)
    assert result.n_seeds == 1
    assert not result.failures
    written = qdt.emit(result, str(tmp_path))
    assert any(p.endswith("table1.csv") for p in written)
