"""Monte-Carlo experiment presets, per-run metrics and summary statistics.

A preset bundles a scenario, filter priors, an initial belief and an optional
one-parameter sweep.  Every (sweep point, repetition) pair draws its own
dataset from a seed derived from ``(root_seed, sweep_index, rep)``, so
editing one sweep value never changes the data seen at another.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .distributions import BetaParams, GaussianBelief, InverseWishartParams
from .errors import ConfigError, EmptyInput, ExperimentError, LengthMismatch, UnknownPreset, VbakfError
from .filtering import FUSION_METHODS, VbHyperParams, default_hyper, kalman_oracle, kalman_static, vb_trace
from .numerics import as_matrix
from .simulator import (
    RegimeSegment,
    ScenarioConfig,
    _check_keys,
    _plain,
    generate,
    scenario_from_dict,
    scenario_to_dict,
    schedule,
)

BASELINES = ("oracle", "static")
METRICS = ("rmse_vb", "rmse_oracle", "rmse_static", "corruption_rate_rmse", "dropout_rate_rmse")
PRESETS = ("exp1", "exp2", "exp3", "exp4a", "exp4b", "exp4c")
DEFAULT_SEED = 20240601


@dataclass(frozen=True)
class Sweep:
    """One named parameter swept over ``values``.

    Each entry of ``paths`` is set to the same value; paths look like
    ``scenario.n_sensors``, ``scenario.e``, ``hyper.e`` or
    ``scenario.segments.r_true`` (the last applies to every segment).
    Scalar values for matrix fields mean ``value * I``.
    """

    name: str
    paths: tuple[str, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "paths", tuple(self.paths))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if not self.paths or not self.values:
            raise ConfigError("a sweep needs at least one path and one value")
        for p in self.paths:
            _split_path(p)


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    scenario: ScenarioConfig
    hyper: VbHyperParams
    x0: GaussianBelief
    mc_reps: int = 20
    root_seed: int = DEFAULT_SEED
    baselines: tuple[str, ...] = BASELINES
    sweep: Sweep | None = None

    def __post_init__(self):
        if int(self.mc_reps) < 1:
            raise ConfigError(f"mc_reps must be at least 1, got {self.mc_reps}")
        if not 0 <= int(self.root_seed) < 2**64:
            raise ConfigError(f"root_seed must be a 64-bit unsigned integer, got {self.root_seed}")
        object.__setattr__(self, "baselines", tuple(self.baselines))
        unknown = set(self.baselines) - set(BASELINES)
        if unknown:
            raise ConfigError(f"unknown baseline(s) {sorted(unknown)}; choose from {BASELINES}")
        if self.x0.dim != self.scenario.d_x:
            raise ConfigError("x0 dimension does not match the scenario")
        if self.hyper.q_prior.dim != self.scenario.d_x or self.hyper.r_prior.dim != self.scenario.d_y:
            raise ConfigError("hyper-parameter dimensions do not match the scenario")
        if self.sweep is not None:
            for i in range(len(self.sweep.values)):
                self.at(i)

    @property
    def sweep_points(self) -> list[float | None]:
        return [None] if self.sweep is None else list(self.sweep.values)

    def at(self, sweep_index: int) -> ExperimentSpec:
        """A copy with sweep point ``sweep_index`` substituted and the sweep removed."""
        if self.sweep is None:
            if sweep_index != 0:
                raise IndexError(sweep_index)
            return self
        value = self.sweep.values[sweep_index]
        spec = replace(self, sweep=None)
        for p in self.sweep.paths:
            spec = apply_path(spec, p, value)
        return spec


@dataclass(frozen=True)
class RunResult:
    """Per-step records and per-run scalars for one repetition.

    ``xhat`` and ``p`` are keyed by method (``vb`` plus enabled baselines).
    Plug-in covariances are posterior means; NaN where the mean is undefined.
    """

    sweep_index: int
    sweep_value: float | None
    rep: int
    seed: int
    x_true: np.ndarray
    xhat: dict[str, np.ndarray]
    p: dict[str, np.ndarray]
    eq_plugin: np.ndarray
    er_plugin: np.ndarray
    dropout_est: np.ndarray
    corruption_est: np.ndarray
    metrics: dict[str, float] = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return len(self.x_true)


@dataclass(frozen=True)
class SummaryRow:
    sweep_value: float | None
    metric: str
    mean: float
    sd: float
    p10: float
    p90: float


# --- sweep paths ---------------------------------------------------------------------

_MATRIX_FIELDS = {"f", "h", "e", "x0_cov", "q_true", "r_true"}


def _split_path(path: str) -> tuple[str, ...]:
    parts = tuple(path.split("."))
    ok = (
        (len(parts) == 2 and parts[0] == "scenario" and parts[1] in ScenarioConfig.__dataclass_fields__
         and parts[1] not in ("segments", "d_x", "d_y"))
        or (len(parts) == 3 and parts[:2] == ("scenario", "segments") and parts[2] in RegimeSegment.__dataclass_fields__
            and parts[2] not in ("start_k", "end_k"))
        or (len(parts) == 2 and parts == ("hyper", "e"))
        or (len(parts) == 2 and parts == ("hyper", "n_iters"))
    )
    if not ok:
        raise ConfigError(f"unsupported sweep path {path!r}")
    return parts


def _coerce(name: str, value: float, current):
    if name in _MATRIX_FIELDS:
        m = np.asarray(current)
        return float(value) * np.eye(*m.shape) if m.shape[0] == m.shape[1] else as_matrix(value)
    if name in ("n_sensors", "horizon", "n_iters"):
        if float(value) != int(value):
            raise ConfigError(f"{name} must be an integer, got {value}")
        return int(value)
    if name == "x0_mean":
        return np.full(np.shape(current), float(value))
    return float(value)


def apply_path(spec: ExperimentSpec, path: str, value: float) -> ExperimentSpec:
    """Return a copy of ``spec`` with the field at ``path`` set to ``value``."""
    parts = _split_path(path)
    try:
        if parts[0] == "hyper":
            hyper = replace(spec.hyper, **{parts[1]: _coerce(parts[1], value, getattr(spec.hyper, parts[1]))})
            return replace(spec, hyper=hyper)
        sc = spec.scenario
        if len(parts) == 3:
            segs = tuple(replace(s, **{parts[2]: _coerce(parts[2], value, getattr(s, parts[2]))})
                         for s in sc.segments)
            return replace(spec, scenario=replace(sc, segments=segs))
        return replace(spec, scenario=replace(sc, **{parts[1]: _coerce(parts[1], value, getattr(sc, parts[1]))}))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"sweep value {value} is invalid for {path}: {exc}") from exc


# --- metrics -------------------------------------------------------------------------

def rmse(estimates: Sequence, truths: Sequence) -> float:
    """``sqrt(mean_k ||xhat_k - x_k||^2)``."""
    est = np.asarray(estimates, dtype=float)
    tru = np.asarray(truths, dtype=float)
    if len(est) != len(tru):
        raise LengthMismatch(f"{len(est)} estimates but {len(tru)} truths")
    if len(est) == 0:
        raise EmptyInput("rmse needs at least one pair")
    est = est.reshape(len(est), -1)
    tru = tru.reshape(len(tru), -1)
    if est.shape != tru.shape:
        raise LengthMismatch(f"estimate vectors have shape {est.shape[1:]}, truths {tru.shape[1:]}")
    return float(np.sqrt(np.mean(np.sum((est - tru) ** 2, axis=1))))


def derive_seed(root_seed: int, sweep_index: int, rep: int) -> int:
    ss = np.random.SeedSequence(int(root_seed), spawn_key=(int(sweep_index), int(rep)))
    return int(ss.generate_state(1, np.uint64)[0])


# --- presets -------------------------------------------------------------------------

def _scenario(n_sensors: int, segments, e: float = 10.0) -> ScenarioConfig:
    return ScenarioConfig(d_x=1, d_y=1, f=1.0, h=1.0, e=e, n_sensors=n_sensors, horizon=120,
                          segments=tuple(RegimeSegment(*s) for s in segments), x0_mean=[0.0], x0_cov=1.0)


def _x0() -> GaussianBelief:
    return GaussianBelief(np.zeros(1), np.eye(1))


def preset(name: str) -> ExperimentSpec:
    """Built-in experiment definitions (scalar random walk, ``T = 120``, 20 VI iterations)."""
    if name == "exp1":
        return ExperimentSpec("exp1", _scenario(1, [(0, 120, 0.1, 1.0)]),
                              default_hyper(1, 1, 10.0, detect_corruption=False), _x0(), mc_reps=50,
                              sweep=Sweep("n_sensors", ("scenario.n_sensors",), (1, 2, 5, 10, 20, 50, 100)))
    if name == "exp2":
        segs = [(0, 40, 0.1, 1.0), (40, 80, 30.0, 1.0), (80, 120, 30.0, 60.0)]
        return ExperimentSpec("exp2", _scenario(5, segs), default_hyper(1, 1, 10.0, detect_corruption=False),
                              _x0(), mc_reps=20)
    if name == "exp3":
        segs = [(0, 50, 0.05, 1.0, 0.05, 0.05), (50, 100, 0.05, 1.0, 0.6, 0.6), (100, 120, 0.05, 1.0, 0.05, 0.05)]
        return ExperimentSpec("exp3", _scenario(200, segs), default_hyper(1, 1, 10.0), _x0(), mc_reps=20)
    grids = {
        "exp4a": (0.05, 1.0, 10.0, Sweep("r", ("scenario.segments.r_true",), (0.05, 0.2, 1.0, 5.0, 10.0))),
        "exp4b": (0.05, 1.0, 10.0, Sweep("e", ("scenario.e", "hyper.e"), (0.5, 1.0, 2.0, 5.0, 10.0, 20.0))),
        "exp4c": (0.05, 1.0, 10.0, Sweep("q", ("scenario.segments.q_true",), (0.001, 0.01, 0.1, 1.0))),
    }
    if name in grids:
        q, r, e, sweep = grids[name]
        return ExperimentSpec(name, _scenario(200, [(0, 120, q, r, 0.0, 0.3)], e), default_hyper(1, 1, e),
                              _x0(), mc_reps=20, sweep=sweep)
    raise UnknownPreset(f"unknown preset {name!r}; valid presets: {', '.join(PRESETS)}")


# --- running -------------------------------------------------------------------------

def run_rep(spec: ExperimentSpec, sweep_index: int, rep: int) -> RunResult:
    """One repetition at one sweep point: simulate, filter, score."""
    point = spec.at(sweep_index)
    seed = derive_seed(spec.root_seed, sweep_index, rep)
    try:
        return _score(point, spec.sweep_points[sweep_index], sweep_index, rep, seed)
    except VbakfError as exc:
        raise ExperimentError(f"{type(exc).__name__}: {exc}", sweep_index=sweep_index, rep=rep, seed=seed) from exc


def _score(spec: ExperimentSpec, sweep_value, sweep_index: int, rep: int, seed: int) -> RunResult:
    sc = spec.scenario
    data = generate(sc, seed)
    trace = vb_trace(data, spec.hyper, spec.x0)
    xhat = {"vb": trace.means}
    p = {"vb": trace.covs}
    sched = schedule(sc)
    if "oracle" in spec.baselines:
        beliefs = kalman_oracle(data, sched.q, sched.r, spec.x0, fusion=spec.hyper.fusion)
        xhat["oracle"] = np.array([b.mean for b in beliefs])
        p["oracle"] = np.array([b.cov for b in beliefs])
    if "static" in spec.baselines:
        first = sc.segments[0]
        beliefs = kalman_static(data, first.q_true, first.r_true, spec.x0, fusion=spec.hyper.fusion)
        xhat["static"] = np.array([b.mean for b in beliefs])
        p["static"] = np.array([b.cov for b in beliefs])
    metrics = {f"rmse_{m}": rmse(xhat[m], data.x_true) for m in ("vb",) + BASELINES if m in xhat}
    metrics["corruption_rate_rmse"] = rmse(trace.corruption_rate_est, sched.corruption_rate)
    metrics["dropout_rate_rmse"] = rmse(trace.dropout_rate_est, sched.dropout_rate)
    return RunResult(sweep_index, sweep_value, rep, seed, np.array(data.x_true), xhat, p,
                     trace.q_mean(), trace.r_mean(), trace.dropout_rate_est, trace.corruption_rate_est, metrics)


def _run_task(args):
    return run_rep(*args)


def run_experiment(spec: ExperimentSpec, *, workers: int = 1) -> list[RunResult]:
    """All repetitions at all sweep points, ordered by ``(sweep_index, rep)``.

    ``workers > 1`` spreads repetitions over processes; results do not depend
    on the worker count.
    """
    tasks = [(spec, i, r) for i in range(len(spec.sweep_points)) for r in range(spec.mc_reps)]
    if workers <= 1:
        return [_run_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


def summarize(results: Sequence[RunResult]) -> list[SummaryRow]:
    """Mean, sample sd (n - 1; zero for one rep) and 10/90 percentiles per sweep point and metric."""
    if not results:
        raise EmptyInput("no results to summarize")
    groups: dict[int, list[RunResult]] = {}
    for res in results:
        groups.setdefault(res.sweep_index, []).append(res)
    rows = []
    for idx in sorted(groups):
        group = groups[idx]
        for metric in METRICS:
            vals = np.array([g.metrics[metric] for g in group if metric in g.metrics])
            if vals.size == 0:
                continue
            sd = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
            p10, p90 = np.percentile(vals, [10, 90])
            rows.append(SummaryRow(group[0].sweep_value, metric, float(np.mean(vals)), sd, float(p10), float(p90)))
    return rows


# --- JSON experiment files -----------------------------------------------------------

_SPEC_KEYS = {"name", "scenario", "hyper", "x0", "mc_reps", "root_seed", "baselines", "sweep"}
_HYPER_KEYS = {"q_prior", "r_prior", "rho_prior", "beta_prior", "e", "n_iters", "detect_corruption", "fusion"}


def _iw(doc, where) -> InverseWishartParams:
    _check_keys(doc, {"dof", "scale"}, {"dof", "scale"}, where)
    return InverseWishartParams(float(doc["dof"]), as_matrix(doc["scale"], f"{where}.scale"))


def _beta(doc, where) -> BetaParams:
    _check_keys(doc, {"a", "b"}, {"a", "b"}, where)
    return BetaParams(float(doc["a"]), float(doc["b"]))


def hyper_from_dict(doc: dict | None, scenario: ScenarioConfig) -> VbHyperParams:
    """Priors from JSON; omitted keys fall back to :func:`default_hyper` for the scenario."""
    doc = {} if doc is None else doc
    _check_keys(doc, _HYPER_KEYS, set(), "hyper")
    base = default_hyper(scenario.d_x, scenario.d_y, doc.get("e", scenario.e),
                         detect_corruption=bool(doc.get("detect_corruption", True)))
    fusion = doc.get("fusion", base.fusion)
    if fusion not in FUSION_METHODS:
        raise ConfigError(f"hyper.fusion must be one of {FUSION_METHODS}, got {fusion!r}")
    return replace(
        base,
        q_prior=_iw(doc["q_prior"], "hyper.q_prior") if "q_prior" in doc else base.q_prior,
        r_prior=_iw(doc["r_prior"], "hyper.r_prior") if "r_prior" in doc else base.r_prior,
        rho_prior=_beta(doc["rho_prior"], "hyper.rho_prior") if "rho_prior" in doc else base.rho_prior,
        beta_prior=_beta(doc["beta_prior"], "hyper.beta_prior") if "beta_prior" in doc else base.beta_prior,
        n_iters=int(doc.get("n_iters", base.n_iters)),
        fusion=fusion,
    )


def hyper_to_dict(h: VbHyperParams) -> dict:
    return {
        "q_prior": {"dof": h.q_prior.dof, "scale": _plain(h.q_prior.scale)},
        "r_prior": {"dof": h.r_prior.dof, "scale": _plain(h.r_prior.scale)},
        "rho_prior": {"a": h.rho_prior.a, "b": h.rho_prior.b},
        "beta_prior": {"a": h.beta_prior.a, "b": h.beta_prior.b},
        "e": _plain(h.e), "n_iters": h.n_iters, "detect_corruption": h.detect_corruption, "fusion": h.fusion,
    }


def experiment_from_dict(doc: dict) -> ExperimentSpec:
    _check_keys(doc, _SPEC_KEYS, {"scenario"}, "experiment")
    try:
        scenario = scenario_from_dict(doc["scenario"])
        hyper = hyper_from_dict(doc.get("hyper"), scenario)
        x0_doc = doc.get("x0", {"mean": _plain(scenario.x0_mean), "cov": _plain(scenario.x0_cov)})
        _check_keys(x0_doc, {"mean", "cov"}, {"mean", "cov"}, "x0")
        x0 = GaussianBelief(x0_doc["mean"], x0_doc["cov"])
        sweep = None
        if doc.get("sweep") is not None:
            _check_keys(doc["sweep"], {"name", "paths", "values"}, {"paths", "values"}, "sweep")
            sw = doc["sweep"]
            sweep = Sweep(sw.get("name", sw["paths"][0]), tuple(sw["paths"]), tuple(sw["values"]))
        return ExperimentSpec(str(doc.get("name", "custom")), scenario, hyper, x0,
                              mc_reps=int(doc.get("mc_reps", 20)),
                              root_seed=int(doc.get("root_seed", DEFAULT_SEED)),
                              baselines=tuple(doc.get("baselines", BASELINES)), sweep=sweep)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"experiment: {exc}") from exc


def experiment_to_dict(spec: ExperimentSpec) -> dict:
    out = {
        "name": spec.name,
        "scenario": scenario_to_dict(spec.scenario),
        "hyper": hyper_to_dict(spec.hyper),
        "x0": {"mean": _plain(spec.x0.mean), "cov": _plain(spec.x0.cov)},
        "mc_reps": spec.mc_reps,
        "root_seed": spec.root_seed,
        "baselines": list(spec.baselines),
    }
    if spec.sweep is not None:
        out["sweep"] = {"name": spec.sweep.name, "paths": list(spec.sweep.paths), "values": list(spec.sweep.values)}
    return out


def window_mean(series: np.ndarray, start: int, stop: int) -> float:
    """Mean of ``series[start:stop]`` (flattened)."""
    chunk = np.asarray(series, dtype=float)[start:stop]
    if chunk.size == 0:
        raise EmptyInput(f"window [{start}, {stop}) is empty")
    return float(np.mean(chunk))


__all__ = [
    "BASELINES", "DEFAULT_SEED", "METRICS", "PRESETS", "ExperimentSpec", "RunResult", "SummaryRow", "Sweep",
    "apply_path", "derive_seed", "experiment_from_dict", "experiment_to_dict", "hyper_from_dict",
    "hyper_to_dict", "preset", "rmse", "run_experiment", "run_rep", "summarize", "window_mean",
]
