"""Ground-truth trajectories and multi-sensor observations under the dual-mask model.

Each sensor reading is ``y = H x + v + (1 - z) eps`` and is delivered only
when the packet indicator ``gamma`` is one.  ``gamma`` and ``z`` are
independent Bernoulli draws with time-scheduled rates.
"""

from __future__ import annotations

import hashlib
import json
import zlib
from dataclasses import dataclass, replace
from typing import Any, Sequence

import numpy as np

from .errors import ConfigError
from .numerics import as_matrix, as_vector, cholesky, is_spd

REGIME_MODES = ("step", "pulse")


@dataclass(frozen=True)
class RegimeSegment:
    """True noise covariances and channel rates over ``[start_k, end_k)``."""

    start_k: int
    end_k: int
    q_true: np.ndarray
    r_true: np.ndarray
    dropout_rate: float = 0.0
    corruption_rate: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "q_true", as_matrix(self.q_true, "q_true"))
        object.__setattr__(self, "r_true", as_matrix(self.r_true, "r_true"))
        for name in ("dropout_rate", "corruption_rate"):
            rate = float(getattr(self, name))
            if not 0.0 <= rate <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {rate}")
            object.__setattr__(self, name, rate)
        if not 0 <= self.start_k < self.end_k:
            raise ConfigError(f"segment bounds must satisfy 0 <= start_k < end_k, got [{self.start_k}, {self.end_k})")
        if not is_spd(self.q_true):
            raise ConfigError(f"q_true of segment [{self.start_k}, {self.end_k}) is not SPD")
        if not is_spd(self.r_true):
            raise ConfigError(f"r_true of segment [{self.start_k}, {self.end_k}) is not SPD")


@dataclass(frozen=True)
class ScenarioConfig:
    """Full generative description of one simulated experiment.

    ``regime_mode="pulse"`` applies every segment after the first only at its
    own ``start_k``; all other steps fall back to the first segment.
    """

    d_x: int
    d_y: int
    f: np.ndarray
    h: np.ndarray
    e: np.ndarray
    n_sensors: int
    horizon: int
    segments: tuple[RegimeSegment, ...]
    x0_mean: np.ndarray
    x0_cov: np.ndarray
    regime_mode: str = "step"

    def __post_init__(self):
        object.__setattr__(self, "f", as_matrix(self.f, "f"))
        object.__setattr__(self, "h", as_matrix(self.h, "h"))
        object.__setattr__(self, "e", as_matrix(self.e, "e"))
        object.__setattr__(self, "x0_mean", as_vector(self.x0_mean, "x0_mean"))
        object.__setattr__(self, "x0_cov", as_matrix(self.x0_cov, "x0_cov"))
        object.__setattr__(self, "segments", tuple(self.segments))
        self.validate()

    def validate(self) -> None:
        dx, dy = self.d_x, self.d_y
        if dx < 1 or dy < 1:
            raise ConfigError("d_x and d_y must be positive")
        if self.n_sensors < 1 or self.horizon < 1:
            raise ConfigError("n_sensors and horizon must be positive")
        shapes = {"f": (self.f, (dx, dx)), "h": (self.h, (dy, dx)), "e": (self.e, (dy, dy)),
                  "x0_cov": (self.x0_cov, (dx, dx))}
        for name, (m, shape) in shapes.items():
            if m.shape != shape:
                raise ConfigError(f"{name} has shape {m.shape}, expected {shape}")
        if self.x0_mean.shape != (dx,):
            raise ConfigError(f"x0_mean has length {self.x0_mean.size}, expected {dx}")
        if not is_spd(self.e) or not is_spd(self.x0_cov):
            raise ConfigError("e and x0_cov must be SPD")
        if self.regime_mode not in REGIME_MODES:
            raise ConfigError(f"regime_mode must be one of {REGIME_MODES}, got {self.regime_mode!r}")
        if not self.segments:
            raise ConfigError("at least one regime segment is required")
        expected = 0
        for seg in self.segments:
            if seg.start_k != expected:
                raise ConfigError(f"segments must partition [0, {self.horizon}) without gaps or overlaps; "
                                  f"segment starts at {seg.start_k}, expected {expected}")
            if seg.q_true.shape != (dx, dx) or seg.r_true.shape != (dy, dy):
                raise ConfigError(f"segment [{seg.start_k}, {seg.end_k}) has covariance shapes inconsistent with d_x, d_y")
            expected = seg.end_k
        if expected != self.horizon:
            raise ConfigError(f"segments cover [0, {expected}) but horizon is {self.horizon}")


def regime_at(config: ScenarioConfig, k: int) -> RegimeSegment:
    """Regime in force at time index ``k``."""
    for seg in config.segments:
        if seg.start_k <= k < seg.end_k:
            if config.regime_mode == "pulse" and k != seg.start_k:
                return config.segments[0]
            return seg
    raise ConfigError(f"time index {k} is not covered by any segment (horizon {config.horizon})")


@dataclass(frozen=True)
class Schedule:
    """Per-step true parameters, arrays indexed by k."""

    q: np.ndarray  # (T, d_x, d_x)
    r: np.ndarray  # (T, d_y, d_y)
    dropout_rate: np.ndarray  # (T,)
    corruption_rate: np.ndarray  # (T,)


def schedule(config: ScenarioConfig) -> Schedule:
    regs = [regime_at(config, k) for k in range(config.horizon)]
    return Schedule(
        q=np.stack([s.q_true for s in regs]),
        r=np.stack([s.r_true for s in regs]),
        dropout_rate=np.array([s.dropout_rate for s in regs]),
        corruption_rate=np.array([s.corruption_rate for s in regs]),
    )


class SensorDataset:
    """Immutable simulation output.

    ``y`` has shape ``(N, T, d_y)`` with NaN marking every dropped packet, and
    ``gamma`` is the matching ``(N, T)`` reception mask.  The latent corruption
    mask is kept private and is only reachable through
    :meth:`corruption_mask_for_evaluation`.
    """

    __slots__ = ("x_true", "y", "gamma", "_z_hidden", "config", "seed")

    def __init__(self, x_true: np.ndarray, y: np.ndarray, gamma: np.ndarray, z_hidden: np.ndarray,
                 config: ScenarioConfig, seed: int):
        n, t = config.n_sensors, config.horizon
        if x_true.shape != (t, config.d_x) or y.shape != (n, t, config.d_y) or gamma.shape != (n, t):
            raise ValueError("dataset arrays do not match the scenario dimensions")
        if z_hidden.shape != (n, t):
            raise ValueError("corruption mask does not match the scenario dimensions")
        y = np.array(y, dtype=float)
        y[~gamma] = np.nan
        if not np.isfinite(y[gamma]).all():
            raise ValueError("received observations must be finite")
        for name, arr in (("x_true", np.array(x_true, dtype=float)), ("y", y),
                          ("gamma", np.array(gamma, dtype=bool)), ("_z_hidden", np.array(z_hidden, dtype=bool))):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "config", config)
        object.__setattr__(self, "seed", int(seed))

    def __setattr__(self, name, value):
        raise AttributeError("SensorDataset is immutable")

    @property
    def n_sensors(self) -> int:
        return self.config.n_sensors

    @property
    def horizon(self) -> int:
        return self.config.horizon

    def observation(self, i: int, k: int) -> np.ndarray | None:
        """Reading of sensor ``i`` at step ``k``, or None when the packet was dropped."""
        return self.y[i, k] if self.gamma[i, k] else None

    def corruption_mask_for_evaluation(self) -> np.ndarray:
        """Boolean ``(N, T)`` mask, True where the reading was clean (``z = 1``)."""
        return self._z_hidden


def _stream(seed: int, label: str, index: int = 0) -> np.random.Generator:
    # Streams are keyed by (label, index) so adding sensors leaves existing draws untouched.
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(zlib.crc32(label.encode()), index))
    return np.random.default_rng(ss)


def _check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ConfigError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def generate(config: ScenarioConfig, seed: int) -> SensorDataset:
    """Simulate one trajectory and all sensor readings; deterministic in ``(config, seed)``."""
    seed = _check_seed(seed)
    config.validate()
    t, n, dx, dy = config.horizon, config.n_sensors, config.d_x, config.d_y
    sched = schedule(config)
    q_chol = np.stack([cholesky(q) for q in sched.q])
    r_chol = np.stack([cholesky(r) for r in sched.r])
    e_chol = cholesky(config.e)

    state_rng = _stream(seed, "state")
    x_prev = config.x0_mean + cholesky(config.x0_cov) @ state_rng.standard_normal(dx)
    w = np.einsum("kij,kj->ki", q_chol, state_rng.standard_normal((t, dx)))
    x_true = np.empty((t, dx))
    for k in range(t):
        x_prev = config.f @ x_prev + w[k]
        x_true[k] = x_prev

    clean_obs = x_true @ config.h.T
    y = np.empty((n, t, dy))
    gamma = np.empty((n, t), dtype=bool)
    z = np.empty((n, t), dtype=bool)
    for i in range(n):
        gamma[i] = _stream(seed, "dropout", i).random(t) >= sched.dropout_rate
        z[i] = _stream(seed, "corruption", i).random(t) >= sched.corruption_rate
        v = np.einsum("kij,kj->ki", r_chol, _stream(seed, "obs_noise", i).standard_normal((t, dy)))
        eps = _stream(seed, "anomaly", i).standard_normal((t, dy)) @ e_chol.T
        y[i] = clean_obs + v + np.where(z[i][:, None], 0.0, eps)
    return SensorDataset(x_true, y, gamma, z, config, seed)


# --- JSON scenario files -------------------------------------------------------------

_SEGMENT_KEYS = {"start_k", "end_k", "q_true", "r_true", "dropout_rate", "corruption_rate"}
_SCENARIO_KEYS = {"d_x", "d_y", "f", "h", "e", "n_sensors", "horizon", "segments", "x0_mean", "x0_cov",
                  "regime_mode"}
_SCENARIO_REQUIRED = _SCENARIO_KEYS - {"regime_mode"}


def _check_keys(doc: Any, allowed: set[str], required: set[str], where: str) -> None:
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected a JSON object")
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}")
    missing = sorted(required - set(doc))
    if missing:
        raise ConfigError(f"{where}: missing key(s) {missing}")


def scenario_from_dict(doc: dict) -> ScenarioConfig:
    _check_keys(doc, _SCENARIO_KEYS, _SCENARIO_REQUIRED, "scenario")
    segments = []
    for j, s in enumerate(doc["segments"]):
        _check_keys(s, _SEGMENT_KEYS, {"start_k", "end_k", "q_true", "r_true"}, f"scenario.segments[{j}]")
        segments.append(RegimeSegment(**s))
    try:
        return ScenarioConfig(**{**doc, "segments": tuple(segments)})
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"scenario: {exc}") from exc


def _plain(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    return value


def scenario_to_dict(config: ScenarioConfig) -> dict:
    return {
        "d_x": config.d_x, "d_y": config.d_y,
        "f": _plain(config.f), "h": _plain(config.h), "e": _plain(config.e),
        "n_sensors": config.n_sensors, "horizon": config.horizon,
        "segments": [
            {"start_k": s.start_k, "end_k": s.end_k, "q_true": _plain(s.q_true), "r_true": _plain(s.r_true),
             "dropout_rate": s.dropout_rate, "corruption_rate": s.corruption_rate}
            for s in config.segments
        ],
        "x0_mean": _plain(config.x0_mean), "x0_cov": _plain(config.x0_cov),
        "regime_mode": config.regime_mode,
    }


def config_hash(doc: dict) -> str:
    payload = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def single_regime(d_x: int, d_y: int, *, q, r, n_sensors: int, horizon: int, e=None, f=None, h=None,
                  dropout_rate: float = 0.0, corruption_rate: float = 0.0, x0_mean=None, x0_cov=None
                  ) -> ScenarioConfig:
    """Convenience constructor for a stationary scenario."""
    return ScenarioConfig(
        d_x=d_x, d_y=d_y,
        f=np.eye(d_x) if f is None else f,
        h=np.eye(d_y, d_x) if h is None else h,
        e=10.0 * np.eye(d_y) if e is None else e,
        n_sensors=n_sensors, horizon=horizon,
        segments=(RegimeSegment(0, horizon, q, r, dropout_rate, corruption_rate),),
        x0_mean=np.zeros(d_x) if x0_mean is None else x0_mean,
        x0_cov=np.eye(d_x) if x0_cov is None else x0_cov,
    )


def with_segments(config: ScenarioConfig, segments: Sequence[RegimeSegment]) -> ScenarioConfig:
    return replace(config, segments=tuple(segments))
