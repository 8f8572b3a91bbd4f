import json
import math
from dataclasses import replace

import numpy as np
import pytest

from vbakf import experiments
from vbakf.errors import ConfigError, EmptyInput, ExperimentError, FilterError, LengthMismatch, UnknownPreset
from vbakf.experiments import (
    METRICS,
    PRESETS,
    RunResult,
    Sweep,
    derive_seed,
    experiment_from_dict,
    experiment_to_dict,
    preset,
    rmse,
    run_experiment,
    run_rep,
    summarize,
    window_mean,
)
from vbakf.simulator import generate


def small(name="exp1", reps=2, **kw):
    return replace(preset(name), mc_reps=reps, **kw)


def fake_result(value, idx=0, rep=0):
    return RunResult(idx, None, rep, 0, np.zeros((1, 1)), {}, {}, np.zeros((1, 1, 1)), np.zeros((1, 1, 1)),
                     np.zeros(1), np.zeros(1), {m: value for m in METRICS})


def test_rmse_examples():
    assert rmse([[1.0], [2.0]], [[1.0], [2.0]]) == 0.0
    assert rmse([0.0, 0.0], [3.0, 4.0]) == pytest.approx(math.sqrt(12.5), abs=1e-15)
    assert rmse([[3.0, 4.0]], [[0.0, 0.0]]) == 5.0


def test_rmse_permutation_invariance():
    rng = np.random.default_rng(0)
    est, tru = rng.standard_normal((30, 2)), rng.standard_normal((30, 2))
    perm = rng.permutation(30)
    assert rmse(est, tru) == pytest.approx(rmse(est[perm], tru[perm]), rel=1e-14)


def test_rmse_errors():
    with pytest.raises(LengthMismatch):
        rmse([1.0, 2.0], [1.0])
    with pytest.raises(EmptyInput):
        rmse([], [])


def test_summarize_examples():
    one = summarize([fake_result(2.5)])
    assert all(r.mean == 2.5 and r.sd == 0.0 for r in one)
    assert {r.metric for r in one} == set(METRICS)
    same = summarize([fake_result(1.5, rep=i) for i in range(4)])
    assert all(r.sd == 0.0 for r in same)
    three = summarize([fake_result(v, rep=i) for i, v in enumerate([1.0, 2.0, 3.0])])
    assert all(r.mean == 2.0 and r.sd == 1.0 for r in three)
    assert three[0].p10 == pytest.approx(1.2) and three[0].p90 == pytest.approx(2.8)
    with pytest.raises(EmptyInput):
        summarize([])


def test_summarize_groups_by_sweep_point():
    rows = summarize([fake_result(1.0, idx=1), fake_result(5.0, idx=0)])
    assert [r.mean for r in rows[:len(METRICS)]] == [5.0] * len(METRICS)


def test_preset_fields():
    assert preset("exp1").scenario.horizon == 120
    assert preset("exp1").sweep.values == (1, 2, 5, 10, 20, 50, 100)
    assert preset("exp1").mc_reps == 50
    exp2 = preset("exp2")
    assert exp2.scenario.n_sensors == 5
    assert [(s.start_k, float(s.q_true[0, 0]), float(s.r_true[0, 0])) for s in exp2.scenario.segments] == \
        [(0, 0.1, 1.0), (40, 30.0, 1.0), (80, 30.0, 60.0)]
    seg = [s for s in preset("exp3").scenario.segments if s.start_k == 50][0]
    assert (seg.end_k, seg.dropout_rate) == (100, 0.6)
    assert preset("exp3").scenario.n_sensors == 200
    for name in ("exp4a", "exp4b", "exp4c"):
        spec = preset(name)
        assert spec.scenario.n_sensors == 200 and spec.scenario.segments[0].corruption_rate == 0.3
    assert preset("exp4b").sweep.values == (0.5, 1.0, 2.0, 5.0, 10.0, 20.0)
    assert all(preset(p).hyper.n_iters == 20 for p in PRESETS)


def test_unknown_preset():
    with pytest.raises(UnknownPreset, match="exp1"):
        preset("exp9")


def test_sweep_paths_substitute_values():
    spec = preset("exp4b")
    point = spec.at(4)
    assert point.scenario.e[0, 0] == 10.0 and point.hyper.e[0, 0] == 10.0
    assert all(s.r_true[0, 0] == 5.0 for s in preset("exp4a").at(3).scenario.segments)
    with pytest.raises(ConfigError):
        Sweep("bad", ("scenario.segments.start_k",), (1,))
    with pytest.raises(ConfigError):
        replace(preset("exp1"), sweep=Sweep("n", ("scenario.n_sensors",), (2.5,)))


def test_seeds_are_derived_per_point_and_rep():
    seeds = {derive_seed(7, i, r) for i in range(5) for r in range(20)}
    assert len(seeds) == 100
    assert derive_seed(7, 1, 2) == derive_seed(7, 1, 2)
    assert derive_seed(7, 1, 2) != derive_seed(8, 1, 2)


def test_run_is_deterministic():
    spec = small("exp3", reps=1)
    a, b = run_experiment(spec), run_experiment(spec)
    assert a[0].metrics == b[0].metrics
    for key in a[0].xhat:
        assert np.array_equal(a[0].xhat[key], b[0].xhat[key])
    assert np.array_equal(a[0].er_plugin, b[0].er_plugin, equal_nan=True)


def test_exp1_shape_and_fairness():
    spec = small("exp1", reps=2)
    res = run_experiment(spec)
    assert len(res) == 14
    assert [(r.sweep_index, r.rep) for r in res] == [(i, r) for i in range(7) for r in range(2)]
    for r in res:
        assert r.horizon == 120
        assert set(r.xhat) == {"vb", "oracle", "static"}
        assert all(v >= 0 for v in r.metrics.values())
        # the truth in the result is the dataset every method consumed
        assert np.array_equal(r.x_true, generate(spec.at(r.sweep_index).scenario, r.seed).x_true)


def test_editing_one_sweep_value_leaves_others_alone():
    base = replace(preset("exp4a"), mc_reps=1)
    edited = replace(base, sweep=replace(base.sweep, values=(0.05, 0.2, 3.0, 5.0, 10.0)))
    a, b = run_experiment(base), run_experiment(edited)
    for i in (0, 1, 3, 4):
        assert a[i].seed == b[i].seed
        assert np.array_equal(a[i].xhat["vb"], b[i].xhat["vb"])
    assert not np.array_equal(a[2].xhat["vb"], b[2].xhat["vb"])


@pytest.mark.slow
def test_worker_count_does_not_change_results():
    spec = replace(preset("exp4c"), mc_reps=2)
    serial, parallel = run_experiment(spec), run_experiment(spec, workers=2)
    assert [r.metrics for r in serial] == [r.metrics for r in parallel]


def test_baselines_can_be_disabled():
    res = run_rep(small("exp2", reps=1, baselines=()), 0, 0)
    assert set(res.xhat) == {"vb"}
    assert set(res.metrics) == {"rmse_vb", "corruption_rate_rmse", "dropout_rate_rmse"}


def test_failures_carry_rep_context(monkeypatch):
    def broken(*args, **kw):
        raise FilterError("numerical failure", k=12, iteration=3)

    monkeypatch.setattr(experiments, "vb_trace", broken)
    spec = small("exp1", reps=1)
    with pytest.raises(ExperimentError, match="k=12") as info:
        run_rep(spec, 2, 1)
    assert (info.value.sweep_index, info.value.rep) == (2, 1)
    assert info.value.seed == derive_seed(spec.root_seed, 2, 1)


def test_json_round_trip():
    for name in PRESETS:
        spec = preset(name)
        doc = json.loads(json.dumps(experiment_to_dict(spec)))
        assert experiment_to_dict(experiment_from_dict(doc)) == experiment_to_dict(spec)


def test_json_defaults_and_rejections():
    doc = experiment_to_dict(preset("exp2"))
    minimal = experiment_from_dict({"scenario": doc["scenario"]})
    assert minimal.mc_reps == 20 and minimal.hyper.n_iters == 20 and minimal.sweep is None
    with pytest.raises(ConfigError, match="unknown"):
        experiment_from_dict({**doc, "mc_rep": 3})
    with pytest.raises(ConfigError, match="unknown"):
        experiment_from_dict({**doc, "hyper": {"n_iter": 3}})
    with pytest.raises(ConfigError):
        experiment_from_dict({**doc, "mc_reps": 0})
    with pytest.raises(ConfigError):
        experiment_from_dict({**doc, "baselines": ["kalman"]})


def test_window_mean():
    assert window_mean(np.arange(10.0), 2, 5) == 3.0
    with pytest.raises(EmptyInput):
        window_mean(np.arange(3.0), 5, 9)
