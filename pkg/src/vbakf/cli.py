"""Command-line entry point: ``simulate``, ``filter`` and ``experiment``.

Exit codes: 0 on success, 1 on runtime or configuration errors, 2 on usage
errors.  Every CSV starts with a ``#`` provenance line and floats are written
in shortest round-trip form so re-parsing reproduces them exactly.
"""

from __future__ import annotations

import argparse
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .distributions import GaussianBelief
from .errors import ConfigError, VbakfError
from .experiments import (
    PRESETS,
    ExperimentSpec,
    RunResult,
    SummaryRow,
    experiment_from_dict,
    experiment_to_dict,
    hyper_from_dict,
    preset,
    run_experiment,
    summarize,
)
from .filtering import vb_trace
from .simulator import SensorDataset, _check_keys, config_hash, generate, scenario_from_dict, scenario_to_dict

TOOL = "vbakf"


class IoError(VbakfError, OSError):
    """Reading or writing a file failed."""


@dataclass(frozen=True)
class CliConfig:
    command: str
    out_dir: Path
    preset: str | None = None
    config_path: Path | None = None
    data_dir: Path | None = None
    seed: int | None = None
    mc_reps: int | None = None
    format: str = "csv"
    workers: int = 1


# --- argument parsing ----------------------------------------------------------------

def _u64(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"{text} is not a 64-bit unsigned integer")
    return value


def _positive(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=TOOL, description="Variational Bayes adaptive Kalman filtering experiments.")
    parser.add_argument("--version", action="version", version=f"{TOOL} {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="simulate one dataset from a scenario JSON file")
    sim.add_argument("--config", required=True, type=Path, help="scenario (or experiment) JSON file")
    sim.add_argument("--seed", required=True, type=_u64)
    sim.add_argument("--out-dir", required=True, type=Path)

    filt = sub.add_parser("filter", help="run the VB filter on a dataset written by 'simulate'")
    filt.add_argument("--data", required=True, type=Path, help="dataset directory")
    filt.add_argument("--config", required=True, type=Path, help="JSON with optional 'hyper' and 'x0' objects")
    filt.add_argument("--out-dir", required=True, type=Path)

    exp = sub.add_parser("experiment", help="run a preset or a custom Monte-Carlo experiment")
    src = exp.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", choices=PRESETS)
    src.add_argument("--config", type=Path, help="experiment JSON file")
    exp.add_argument("--seed", type=_u64, help="root seed (overrides the preset/config value)")
    exp.add_argument("--mc-reps", type=_positive)
    exp.add_argument("--out-dir", required=True, type=Path)
    exp.add_argument("--format", choices=("csv", "csv+md"), default="csv")
    exp.add_argument("--workers", type=_positive, default=1, help="worker processes for repetitions")
    return parser


def parse_args(argv: Sequence[str]) -> CliConfig:
    """Validate ``argv``; usage errors exit with status 2."""
    ns = build_parser().parse_args(list(argv))
    if ns.command == "simulate":
        return CliConfig("simulate", ns.out_dir, config_path=ns.config, seed=ns.seed)
    if ns.command == "filter":
        return CliConfig("filter", ns.out_dir, config_path=ns.config, data_dir=ns.data)
    return CliConfig("experiment", ns.out_dir, preset=ns.preset, config_path=ns.config, seed=ns.seed,
                     mc_reps=ns.mc_reps, format=ns.format, workers=ns.workers)


# --- formatting and files ------------------------------------------------------------

def fmt(value) -> str:
    """Shortest round-trip decimal; empty for None and NaN."""
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    if math.isnan(v):
        return ""
    return repr(v)


def _csv_text(header_comment: str, columns: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    buf.write(f"# {header_comment}\n")
    buf.write(",".join(columns) + "\n")
    for row in rows:
        buf.write(",".join(fmt(v) for v in row) + "\n")
    return buf.getvalue()


def _umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


def write_atomic(path: Path, text: str) -> None:
    """Write via a temporary file in the same directory and rename over ``path``."""
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror or exc}") from exc
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.chmod(tmp, 0o666 & ~_umask())
        os.replace(tmp, path)
    except OSError as exc:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise IoError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _prepare_out_dir(out_dir: Path) -> Path:
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create output directory {out_dir}: {exc.strerror or exc}") from exc
    if not os.access(out_dir, os.W_OK):
        raise IoError(f"output directory {out_dir} is not writable")
    return out_dir


def load_json(path: Path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror or exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None


def provenance(preset_name: str, seed, doc: dict) -> str:
    return f"{TOOL} {__version__} preset={preset_name} seed={seed} config_hash={config_hash(doc)}"


def _vec_cols(prefix: str, d: int) -> list[str]:
    return [prefix] if d == 1 else [f"{prefix}_{i}" for i in range(d)]


def _mat_cols(prefix: str, d: int) -> list[str]:
    return [prefix] if d == 1 else [f"{prefix}_{i}_{j}" for i in range(d) for j in range(d)]


# --- experiment output ---------------------------------------------------------------

def series_columns(d_x: int, d_y: int) -> list[str]:
    cols = ["sweep_value", "rep", "k"] + _vec_cols("x_true", d_x)
    for m in ("vb", "oracle", "static"):
        cols += _vec_cols(f"xhat_{m}", d_x)
        if m == "vb":
            cols += _mat_cols("p_vb", d_x)
    return cols + _mat_cols("eq_plugin", d_x) + _mat_cols("er_plugin", d_y) + ["dropout_est", "corruption_est"]


def series_rows(results: Sequence[RunResult], d_x: int, d_y: int):
    nan_x = [float("nan")] * d_x
    for res in results:
        for k in range(res.horizon):
            row = [res.sweep_value, res.rep, k, *res.x_true[k]]
            for m in ("vb", "oracle", "static"):
                row += list(res.xhat[m][k]) if m in res.xhat else nan_x
                if m == "vb":
                    row += list(res.p["vb"][k].ravel())
            row += list(res.eq_plugin[k].ravel()) + list(res.er_plugin[k].ravel())
            row += [res.dropout_est[k], res.corruption_est[k]]
            yield row


SUMMARY_COLUMNS = ("sweep_value", "metric", "mean", "sd", "p10", "p90")


def summary_markdown(title: str, rows: Sequence[SummaryRow]) -> str:
    lines = [f"# {title}", "", "| " + " | ".join(SUMMARY_COLUMNS) + " |", "|" + "---|" * len(SUMMARY_COLUMNS)]
    for r in rows:
        cells = [fmt(r.sweep_value) or "-", r.metric] + [f"{v:.6g}" for v in (r.mean, r.sd, r.p10, r.p90)]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def _experiment_spec(cfg: CliConfig) -> tuple[ExperimentSpec, str]:
    if cfg.preset is not None:
        spec, name = preset(cfg.preset), cfg.preset
    else:
        doc = load_json(cfg.config_path)
        spec = experiment_from_dict(doc)
        name = spec.name
    changes = {}
    if cfg.seed is not None:
        changes["root_seed"] = cfg.seed
    if cfg.mc_reps is not None:
        changes["mc_reps"] = cfg.mc_reps
    if changes:
        spec = replace(spec, **changes)
    return spec, name


def _run_experiment_command(cfg: CliConfig) -> None:
    spec, name = _experiment_spec(cfg)
    out = _prepare_out_dir(cfg.out_dir)
    results = run_experiment(spec, workers=cfg.workers)
    rows = summarize(results)
    header = provenance(name, spec.root_seed, experiment_to_dict(spec))
    d_x, d_y = spec.scenario.d_x, spec.scenario.d_y
    # series first; the summary lands last so its presence signals a complete run
    write_atomic(out / f"{name}_series.csv",
                 _csv_text(header, series_columns(d_x, d_y), series_rows(results, d_x, d_y)))
    if cfg.format == "csv+md":
        write_atomic(out / f"{name}_summary.md", summary_markdown(f"{name} summary", rows))
    write_atomic(out / f"{name}_summary.csv",
                 _csv_text(header, SUMMARY_COLUMNS,
                           ([r.sweep_value, r.metric, r.mean, r.sd, r.p10, r.p90] for r in rows)))


# --- simulate / filter ---------------------------------------------------------------

def _scenario_doc(doc: dict) -> dict:
    return doc["scenario"] if isinstance(doc, dict) and "scenario" in doc else doc


def write_dataset(out: Path, data: SensorDataset, header: str) -> None:
    cfg = data.config
    write_atomic(out / "scenario.json",
                 json.dumps({"scenario": scenario_to_dict(cfg), "seed": data.seed}, indent=2, sort_keys=True) + "\n")
    write_atomic(out / "truth.csv",
                 _csv_text(header, ["k"] + _vec_cols("x_true", cfg.d_x),
                           ([k, *data.x_true[k]] for k in range(cfg.horizon))))
    clean = data.corruption_mask_for_evaluation()
    ycols = _vec_cols("y", cfg.d_y)
    write_atomic(out / "observations.csv",
                 _csv_text(header, ["sensor", "k", "received", "clean"] + ycols,
                           ([i, k, bool(data.gamma[i, k]), bool(clean[i, k]), *data.y[i, k]]
                            for i in range(cfg.n_sensors) for k in range(cfg.horizon))))


def _read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror or exc}") from exc
    body = [ln for ln in lines if ln and not ln.startswith("#")]
    if not body:
        raise ConfigError(f"{path}: no header row")
    return body[0].split(","), [ln.split(",") for ln in body[1:]]


def _num(cell: str) -> float:
    return float("nan") if cell == "" else float(cell)


def read_dataset(data_dir: Path) -> SensorDataset:
    """Load a directory written by :func:`write_dataset`."""
    data_dir = Path(data_dir)
    meta = load_json(data_dir / "scenario.json")
    _check_keys(meta, {"scenario", "seed"}, {"scenario", "seed"}, str(data_dir / "scenario.json"))
    cfg = scenario_from_dict(meta["scenario"])
    n, t = cfg.n_sensors, cfg.horizon
    cols, rows = _read_csv(data_dir / "truth.csv")
    if len(rows) != t:
        raise ConfigError(f"{data_dir / 'truth.csv'}: expected {t} rows, found {len(rows)}")
    try:
        x_true = np.array([[_num(c) for c in r[1:]] for r in rows])
        cols, rows = _read_csv(data_dir / "observations.csv")
        y = np.full((n, t, cfg.d_y), np.nan)
        gamma = np.zeros((n, t), dtype=bool)
        clean = np.ones((n, t), dtype=bool)
        for line, r in enumerate(rows, start=3):
            if len(r) != len(cols):
                raise ConfigError(f"{data_dir / 'observations.csv'}:{line}: expected {len(cols)} fields")
            i, k = int(r[0]), int(r[1])
            gamma[i, k] = r[2] == "1"
            clean[i, k] = r[3] == "1"
            y[i, k] = [_num(c) for c in r[4:]]
    except (ValueError, IndexError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{data_dir}: malformed dataset: {exc}") from exc
    try:
        return SensorDataset(x_true, y, gamma, clean, cfg, int(meta["seed"]))
    except ValueError as exc:
        raise ConfigError(f"{data_dir}: inconsistent dataset: {exc}") from exc


def _run_simulate(cfg: CliConfig) -> None:
    doc = _scenario_doc(load_json(cfg.config_path))
    scenario = scenario_from_dict(doc)
    out = _prepare_out_dir(cfg.out_dir)
    data = generate(scenario, cfg.seed)
    write_dataset(out, data, provenance("simulate", cfg.seed, scenario_to_dict(scenario)))


def _run_filter(cfg: CliConfig) -> None:
    data = read_dataset(cfg.data_dir)
    doc = load_json(cfg.config_path)
    _check_keys(doc, {"hyper", "x0"}, set(), str(cfg.config_path))
    sc = data.config
    hyper = hyper_from_dict(doc.get("hyper"), sc)
    x0_doc = doc.get("x0", {"mean": sc.x0_mean.tolist(), "cov": sc.x0_cov.tolist()})
    _check_keys(x0_doc, {"mean", "cov"}, {"mean", "cov"}, "x0")
    x0 = GaussianBelief(x0_doc["mean"], x0_doc["cov"])
    out = _prepare_out_dir(cfg.out_dir)
    trace = vb_trace(data, hyper, x0)
    eq, er = trace.q_mean(), trace.r_mean()
    cols = (["k"] + _vec_cols("xhat_vb", sc.d_x) + _mat_cols("p_vb", sc.d_x) + _mat_cols("eq_plugin", sc.d_x)
            + _mat_cols("er_plugin", sc.d_y) + ["dropout_est", "corruption_est"])
    rows = ([k, *trace.means[k], *trace.covs[k].ravel(), *eq[k].ravel(), *er[k].ravel(),
             trace.dropout_rate_est[k], trace.corruption_rate_est[k]] for k in range(sc.horizon))
    header = provenance("filter", data.seed, {"scenario": scenario_to_dict(sc), "filter": doc})
    write_atomic(out / "filter.csv", _csv_text(header, cols, rows))


_COMMANDS = {"simulate": _run_simulate, "filter": _run_filter, "experiment": _run_experiment_command}


def execute(cfg: CliConfig) -> int:
    try:
        _COMMANDS[cfg.command](cfg)
    except (VbakfError, OSError) as exc:
        print(f"{TOOL}: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    try:
        cfg = parse_args(sys.argv[1:] if argv is None else argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    return execute(cfg)


if __name__ == "__main__":
    sys.exit(main())
