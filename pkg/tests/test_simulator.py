import json

import numpy as np
import pytest

from vbakf.errors import ConfigError
from vbakf.experiments import preset
from vbakf.simulator import (
    RegimeSegment,
    ScenarioConfig,
    config_hash,
    generate,
    regime_at,
    scenario_from_dict,
    scenario_to_dict,
    schedule,
    single_regime,
    with_segments,
)


def scalar(n=5, t=120, **kw):
    return single_regime(1, 1, q=kw.pop("q", 0.1), r=kw.pop("r", 1.0), n_sensors=n, horizon=t, **kw)


def test_generate_is_deterministic():
    cfg = scalar(dropout_rate=0.3, corruption_rate=0.2)
    a, b = generate(cfg, 42), generate(cfg, 42)
    for name in ("x_true", "gamma"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert np.array_equal(a.y, b.y, equal_nan=True)
    assert np.array_equal(a.corruption_mask_for_evaluation(), b.corruption_mask_for_evaluation())


def test_different_seeds_differ():
    cfg = scalar(dropout_rate=0.5)
    for s in range(10):
        assert not np.array_equal(generate(cfg, s).gamma, generate(cfg, s + 1000).gamma)


def test_adding_sensors_keeps_existing_draws():
    small, big = generate(scalar(n=3, dropout_rate=0.2, corruption_rate=0.2), 9), \
        generate(scalar(n=8, dropout_rate=0.2, corruption_rate=0.2), 9)
    assert np.array_equal(small.x_true, big.x_true)
    assert np.array_equal(small.gamma, big.gamma[:3])
    assert np.array_equal(small.y, big.y[:3], equal_nan=True)


def test_zero_dropout_gives_full_mask():
    d = generate(scalar(n=7), 1)
    assert d.gamma.all()
    assert np.isfinite(d.y).all()


def test_dropped_readings_are_absent():
    d = generate(scalar(n=20, dropout_rate=0.4), 3)
    assert np.isnan(d.y[~d.gamma]).all()
    assert np.isfinite(d.y[d.gamma]).all()
    i, k = np.argwhere(~d.gamma)[0]
    assert d.observation(i, k) is None


def test_clean_noise_variance_matches_r():
    cfg = scalar(n=100, t=200, r=2.5)
    d = generate(cfg, 5)
    resid = d.y[:, :, 0] - d.x_true[None, :, 0]
    assert resid.var() == pytest.approx(2.5, rel=0.05)


def test_exp3_window_dropout_fraction():
    cfg = preset("exp3").scenario
    d = generate(cfg, 11)
    frac = 1.0 - d.gamma[:, 50:100].mean()
    assert abs(frac - 0.6) < 0.02


def test_masks_are_independent():
    d = generate(scalar(n=100, t=200, dropout_rate=0.4, corruption_rate=0.3), 8)
    g = d.gamma.ravel().astype(float)
    z = d.corruption_mask_for_evaluation().ravel().astype(float)
    assert abs(np.corrcoef(g, z)[0, 1]) < 0.02


def test_dimensions_are_conserved():
    cfg = single_regime(3, 2, q=0.1 * np.eye(3), r=np.eye(2), n_sensors=4, horizon=30,
                        h=np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 1.0]]))
    d = generate(cfg, 2)
    assert d.x_true.shape == (30, 3)
    assert d.y.shape == (4, 30, 2)


def test_dataset_is_immutable():
    d = generate(scalar(), 1)
    with pytest.raises(AttributeError):
        d.x_true = None
    with pytest.raises(ValueError):
        d.y[0, 0, 0] = 1.0
    assert not hasattr(d, "z_hidden")


def test_regime_lookup():
    cfg = preset("exp2").scenario
    assert regime_at(cfg, 39).q_true[0, 0] == 0.1
    assert regime_at(cfg, 40).q_true[0, 0] == 30.0
    assert regime_at(cfg, 80).r_true[0, 0] == 60.0
    with pytest.raises(ConfigError):
        regime_at(cfg, 120)
    single = scalar()
    assert all(regime_at(single, k) is single.segments[0] for k in (0, 60, 119))


def test_pulse_mode_applies_only_at_segment_start():
    cfg = ScenarioConfig(1, 1, 1.0, 1.0, 10.0, 2, 10,
                         (RegimeSegment(0, 4, 0.1, 1.0), RegimeSegment(4, 10, 30.0, 1.0)), [0.0], 1.0,
                         regime_mode="pulse")
    q = schedule(cfg).q[:, 0, 0]
    assert list(q) == [0.1] * 4 + [30.0] + [0.1] * 5


@pytest.mark.parametrize("segments", [
    (RegimeSegment(0, 50, 0.1, 1.0),),
    (RegimeSegment(0, 60, 0.1, 1.0), RegimeSegment(50, 120, 0.1, 1.0)),
    (RegimeSegment(0, 50, 0.1, 1.0), RegimeSegment(60, 120, 0.1, 1.0)),
])
def test_segments_must_partition_horizon(segments):
    with pytest.raises(ConfigError):
        with_segments(scalar(), segments)


def test_segment_validation():
    with pytest.raises(ConfigError):
        RegimeSegment(0, 10, 0.1, 1.0, dropout_rate=1.5)
    with pytest.raises(ConfigError):
        RegimeSegment(0, 10, -0.1, 1.0)
    with pytest.raises(ConfigError):
        RegimeSegment(5, 5, 0.1, 1.0)


def test_seed_range():
    with pytest.raises(ConfigError):
        generate(scalar(), -1)
    with pytest.raises(ConfigError):
        generate(scalar(), 2**64)
    generate(scalar(t=3), 2**64 - 1)


def test_json_round_trip_and_hash():
    cfg = preset("exp3").scenario
    doc = json.loads(json.dumps(scenario_to_dict(cfg)))
    back = scenario_from_dict(doc)
    assert scenario_to_dict(back) == scenario_to_dict(cfg)
    assert config_hash(doc) == config_hash(scenario_to_dict(back))
    assert config_hash(doc) != config_hash(scenario_to_dict(preset("exp2").scenario))


def test_json_unknown_keys_rejected():
    doc = scenario_to_dict(scalar())
    with pytest.raises(ConfigError, match="unknown"):
        scenario_from_dict({**doc, "typo": 1})
    doc["segments"][0]["q_ture"] = 0.1
    with pytest.raises(ConfigError, match="unknown"):
        scenario_from_dict(doc)
