"""Configured experiment runs: validation, execution, artifacts and reports.

A run is described by one YAML document. Every field is checked before
any computation starts. Results are staged, and files appear in the output
directory only once the whole pipeline has succeeded.
Precedence for each field is: command-line flag, then the document, then
the built-in default.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import platform
import shutil
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__
from .demand import (
    DemandDistribution,
    MultiDemandDistribution,
    distribution_from_mapping,
    distribution_to_mapping,
)
from .diffusion import KS_LEVEL, MODES, fluctuation_compare, simulate_diffusion
from .dp import enumeration_oracle, solve_dp
from .errors import ArtifactIOError, ResourceError, ValidationError
from .fluid import solve_grid, scaled_dp_error
from .multidim import (
    hessian_det_residual,
    multi_enumeration_oracle,
    multi_sde,
    multi_sde_coefficients,
    scaled_dp_error_multi,
    solve_centers_multi,
    solve_dp_multi,
    solve_fluid_multi,
)
from .simulation import bootstrap_variance_ci, simulate

KINDS = ("dp-check", "variance-scaling", "fluid-convergence", "diffusion-compare", "multi")
VERB_KINDS = {
    "solve": "dp-check",
    "simulate": "variance-scaling",
    "fluid": "fluid-convergence",
    "diffuse": "diffusion-compare",
    "multi": "multi",
}
DEFAULT_TOLERANCES = {
    "oracle": 1e-9,
    "variance_ratio_spread": 2.0,
    "fluid_halving": 0.5,
    "variance_band": [0.85, 1.15],
    "ks_level": KS_LEVEL,
}
MANIFEST = "manifest.json"


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated run description.

    Integer instance sizes (``W``, ``T``, ``t``) are used by ``dp-check``
    and ``multi``; the scaled quantities (``start``, ``capacity``,
    ``horizon``) are multiplied by each entry of ``scale_ladder`` in the
    ladder experiments.
    """

    kind: str
    distribution: object
    W: object = None
    T: int = None
    t: int = 0
    start: float = 0.0
    capacity: object = 1.0
    horizon: float = 1.0
    scale_ladder: tuple = ()
    paths: int = 10_000
    seed: int = 0
    workers: int = 1
    grid: tuple = ()
    mode: str = "accept-prob"
    times: tuple = ()
    n_boot: int = 200
    full_paths: bool = False
    tolerances: dict = field(default_factory=dict)
    out: str = None

    def tolerance(self, name):
        return self.tolerances.get(name, DEFAULT_TOLERANCES[name])

    def to_mapping(self):
        """Plain mapping that :func:`config_from_mapping` turns back into this config."""
        doc = asdict(self)
        doc["distribution"] = distribution_to_mapping(self.distribution)
        for key in ("scale_ladder", "grid", "times"):
            doc[key] = list(doc[key])
        if isinstance(self.W, tuple):
            doc["W"] = list(self.W)
        if isinstance(self.capacity, tuple):
            doc["capacity"] = list(self.capacity)
        doc["tolerances"] = dict(self.tolerances)
        return {k: v for k, v in doc.items() if v is not None}


FIELDS = {f.name for f in ExperimentConfig.__dataclass_fields__.values()}


def _int(value, name, lo=None):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        else:
            raise ValidationError(f"{name} must be an integer, got {value!r}")
    if lo is not None and value < lo:
        raise ValidationError(f"{name} must be >= {lo}, got {value}")
    return int(value)


def _float(value, name, lo=None):
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"{name} must be a number, got {value!r}") from None
    if not np.isfinite(out) or (lo is not None and out < lo):
        raise ValidationError(f"{name} must be a finite number >= {lo}, got {value!r}")
    return out


def _int_list(value, name, lo=1):
    if isinstance(value, str):
        try:
            value = [int(v) for v in value.split(",") if v.strip()]
        except ValueError:
            raise ValidationError(f"{name} must be comma-separated integers, got {value!r}") from None
    if not isinstance(value, (list, tuple)):
        value = [value]
    return tuple(_int(v, name, lo) for v in value)


def config_from_mapping(doc, base_dir=None) -> ExperimentConfig:
    """Validate a parsed document; relative distribution paths resolve against ``base_dir``."""
    if not isinstance(doc, dict):
        raise ValidationError("configuration must be a mapping")
    if "config" in doc and "manifest_version" in doc:
        doc = doc["config"]
    unknown = set(doc) - FIELDS
    if unknown:
        raise ValidationError(f"unknown configuration keys: {sorted(unknown)}")
    kind = doc.get("kind")
    if kind not in KINDS:
        raise ValidationError(f"kind must be one of {KINDS}, got {kind!r}")
    raw = doc.get("distribution")
    if raw is None:
        raise ValidationError("a distribution is required")
    if isinstance(raw, str):
        path = Path(raw)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        try:
            raw = yaml.safe_load(path.read_text())
        except OSError as exc:
            raise ArtifactIOError(f"cannot read distribution file {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ValidationError(f"malformed distribution file {path}: {exc}") from exc
    dist = distribution_from_mapping(raw)
    multi = kind == "multi"
    if multi != isinstance(dist, MultiDemandDistribution):
        want = "a multi-resource" if multi else "a one-resource"
        raise ValidationError(f"kind {kind!r} needs {want} distribution")

    cfg = {"kind": kind, "distribution": dist}
    if "W" in doc:
        cfg["W"] = _int_list(doc["W"], "W", 0) if multi else _int(doc["W"], "W", 0)
    if "T" in doc:
        cfg["T"] = _int(doc["T"], "T", 1)
    if "t" in doc:
        cfg["t"] = _int(doc["t"], "t", 0)
    if "start" in doc:
        cfg["start"] = _float(doc["start"], "start", 0.0)
    if "capacity" in doc or multi:
        cap = doc.get("capacity", 1.0)
        if multi:
            cap = cap if isinstance(cap, (list, tuple)) else [cap] * dist.dim
            cfg["capacity"] = tuple(_float(c, "capacity", 0.0) for c in cap)
        else:
            cfg["capacity"] = _float(cap, "capacity", 0.0)
    if "horizon" in doc:
        cfg["horizon"] = _float(doc["horizon"], "horizon", 0.0)
    if "scale_ladder" in doc:
        cfg["scale_ladder"] = _int_list(doc["scale_ladder"], "scale_ladder", 1)
    for key, lo in (("paths", 1), ("workers", 1), ("n_boot", 1)):
        if key in doc:
            cfg[key] = _int(doc[key], key, lo)
    if "seed" in doc:
        seed = _int(doc["seed"], "seed", 0)
        if seed >= 2**64:
            raise ValidationError("seed must fit in 64 bits")
        cfg["seed"] = seed
    if "grid" in doc:
        cfg["grid"] = _int_list(doc["grid"], "grid", 1)
    if "mode" in doc:
        if doc["mode"] not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {doc['mode']!r}")
        cfg["mode"] = doc["mode"]
    if "times" in doc:
        times = doc["times"] if isinstance(doc["times"], list) else [doc["times"]]
        cfg["times"] = tuple(_float(v, "times", 0.0) for v in times)
    if "full_paths" in doc:
        if not isinstance(doc["full_paths"], bool):
            raise ValidationError("full_paths must be true or false")
        cfg["full_paths"] = doc["full_paths"]
    if "tolerances" in doc:
        tol = doc["tolerances"] or {}
        if not isinstance(tol, dict) or set(tol) - set(DEFAULT_TOLERANCES):
            raise ValidationError(f"tolerances may only set {sorted(DEFAULT_TOLERANCES)}")
        cfg["tolerances"] = dict(tol)
    if doc.get("out") is not None:
        cfg["out"] = str(doc["out"])
    config = ExperimentConfig(**cfg)
    _check_kind(config)
    return config


def _check_kind(c: ExperimentConfig):
    """Cross-field checks that depend on the experiment kind."""
    if c.kind == "dp-check":
        if c.W is None or c.T is None:
            raise ValidationError("dp-check needs W and T")
        if c.t > c.T:
            raise ValidationError(f"t={c.t} is past the horizon T={c.T}")
        return
    if c.kind == "multi":
        if c.W is None or c.T is None:
            raise ValidationError("multi needs W (one entry per resource) and T")
        if len(c.W) != c.distribution.dim:
            raise ValidationError(f"W has {len(c.W)} entries for {c.distribution.dim} resources")
        if c.scale_ladder and c.grid and len(c.grid) != c.distribution.dim + 1:
            raise ValidationError("grid needs one size for time and one per resource")
        if c.scale_ladder and c.distribution.dim > 3:
            raise ValidationError("the fluid ladder supports at most 3 resources")
        return
    if not c.scale_ladder:
        raise ValidationError(f"{c.kind} needs a scale_ladder")
    for n in c.scale_ladder:
        for name, value in (("start", c.start), ("capacity", c.capacity), ("horizon", c.horizon)):
            if abs(value * n - round(value * n)) > 1e-9:
                raise ValidationError(f"{name}={value} times scale {n} is not an integer")
    if c.horizon <= c.start:
        raise ValidationError("horizon must exceed start")
    if c.kind in ("fluid-convergence", "diffusion-compare"):
        if len(c.grid) != 2:
            raise ValidationError(f"{c.kind} needs grid: [nx, ny]")
        if c.capacity <= 0:
            raise ValidationError(f"{c.kind} needs a positive capacity")
    if c.kind == "diffusion-compare":
        if not isinstance(c.distribution, DemandDistribution) or not c.distribution.unit_demand:
            raise ValidationError("diffusion-compare needs a unit-demand distribution")
        if c.start != 0:
            raise ValidationError("diffusion-compare starts at time 0")
        if any(tau > c.horizon for tau in c.times):
            raise ValidationError("comparison times must lie within the horizon")


def load_config(path, overrides=None) -> ExperimentConfig:
    """Read a YAML (or JSON manifest) document and apply command-line overrides."""
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ArtifactIOError(f"cannot read configuration {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ValidationError(f"malformed configuration {path}: {exc}") from exc
    if isinstance(doc, dict) and "config" in doc and "manifest_version" in doc:
        doc = doc["config"]
    if not isinstance(doc, dict):
        raise ValidationError("configuration must be a mapping")
    doc = dict(doc)
    for key, value in (overrides or {}).items():
        if value is not None:
            doc[key] = value
    return config_from_mapping(doc, base_dir=path.parent)


# -- pipelines ------------------------------------------------------------------


@dataclass
class RunResult:
    """In-memory outcome: CSV bodies by file name, binary blobs and scalar metrics."""

    tables: dict = field(default_factory=dict)
    blobs: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)


def _csv(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                         for v in row])
    return buf.getvalue()


def _via_file(writer):
    """Capture a ``to_csv(path)`` style writer as a string."""
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "out"
        writer(path)
        return path.read_bytes()


def _ladder(c, fn):
    if c.workers > 1 and len(c.scale_ladder) > 1:
        with ThreadPoolExecutor(max_workers=c.workers) as pool:
            return list(pool.map(fn, c.scale_ladder))
    return [fn(n) for n in c.scale_ladder]


def _run_dp_check(c: ExperimentConfig) -> RunResult:
    table = solve_dp(c.distribution, c.W, c.T)
    res = RunResult()
    res.tables["value_table.csv"] = _via_file(table.to_csv).decode()
    value = float(table.values[c.t, c.W])
    res.metrics["value"] = value
    try:
        oracle = enumeration_oracle(c.distribution, c.W, c.T, c.t)
    except ResourceError:
        res.metrics["oracle"] = None
    else:
        err = abs(value - oracle)
        res.metrics.update(oracle=oracle, oracle_error=err, passed=err <= c.tolerance("oracle"))
    return res


def _run_variance(c: ExperimentConfig) -> RunResult:
    res = RunResult()
    dist = c.distribution

    def one(n):
        tn, dn, Tn = (int(round(v * n)) for v in (c.start, c.capacity, c.horizon))
        table = solve_dp(dist, dn, Tn)
        ens = simulate(dist, table, tn, dn, c.paths, c.seed)
        x = ens.terminal
        var = float(x.var(ddof=1)) if x.size > 1 else 0.0
        lo, hi = bootstrap_variance_ci(x, c.seed, c.n_boot) if var > 0 else (0.0, 0.0)
        row = {"n": n, "ratio": var / n, "ci_lo": lo / n, "ci_hi": hi / n}
        summary = _via_file(ens.write_summary_csv).decode()
        paths = _via_file(ens.write_paths_csv).decode() if c.full_paths else None
        return row, summary, paths, float(table.values[tn, dn])

    out = _ladder(c, one)
    rows = [o[0] for o in out]
    for n, (_, summary, paths, _) in zip(c.scale_ladder, out):
        res.tables[f"simulation_n{n}.csv"] = summary
        if paths is not None:
            res.tables[f"paths_n{n}.csv"] = paths
    res.tables["variance_scaling.csv"] = _csv(
        ["n", "ratio", "ci_lo", "ci_hi", "dp_value"],
        [(r["n"], r["ratio"], r["ci_lo"], r["ci_hi"], o[3]) for r, o in zip(rows, out)],
    )
    ratios = [r["ratio"] for r in rows]
    spread = max(ratios) / min(ratios) if min(ratios) > 0 else (1.0 if max(ratios) == 0 else None)
    res.metrics["ratio_spread"] = spread
    res.metrics["passed"] = spread is not None and spread < c.tolerance("variance_ratio_spread")
    return res


def _run_fluid(c: ExperimentConfig) -> RunResult:
    res = RunResult()
    dist = c.distribution
    nx, ny = c.grid
    field_ = solve_grid(dist, None, c.horizon, c.capacity, nx, ny)
    res.blobs["fluid.bin"] = _via_file(field_.to_binary)

    def one(n):
        table = solve_dp(dist, int(round(c.capacity * n)), int(round(c.horizon * n)))
        return scaled_dp_error(field_, table, n)

    errors = _ladder(c, one)
    res.tables["error_ladder.csv"] = _csv(["n", "error"], zip(c.scale_ladder, errors))
    monotone = all(b <= a for a, b in zip(errors, errors[1:]))
    res.metrics.update(
        errors=[float(e) for e in errors],
        monotone=monotone,
        passed=monotone and errors[-1] < c.tolerance("fluid_halving") * errors[0],
    )
    return res


def _run_diffusion(c: ExperimentConfig) -> RunResult:
    res = RunResult()
    dist = c.distribution
    nx, ny = c.grid
    field_ = solve_grid(dist, None, c.horizon, c.capacity, nx, ny)
    times = c.times or (c.horizon,)
    lo, hi = c.tolerance("variance_band")
    rows = []
    passed = True
    for n in c.scale_ladder:
        dn, Tn = int(round(c.capacity * n)), int(round(c.horizon * n))
        table = solve_dp(dist, dn, Tn)
        ens = simulate(dist, table, 0, dn, c.paths, c.seed, workers=c.workers)
        center, _, sde = simulate_diffusion(field_, dist, c.capacity, c.paths, c.seed,
                                            mode=c.mode, record_every=16)
        rep = fluctuation_compare(ens, sde, n, times, center=center)
        res.tables[f"fluctuations_n{n}.csv"] = _via_file(rep.to_csv).decode()
        res.tables[f"center_n{n}.csv"] = _csv(["t", "s"], zip(center.times, center.values))
        for r in rep.rows:
            ratio = r["var_empirical"] / r["var_sde"] if r["var_sde"] > 0 else None
            ok = ratio is not None and lo <= ratio <= hi and r["ks_stat"] < r["ks_crit"]
            passed = passed and ok
            rows.append((n, r["t"], ratio, r["ks_stat"], r["ks_crit"], ok))
    res.tables["diffusion_summary.csv"] = _csv(
        ["n", "t", "variance_ratio", "ks_stat", "ks_crit", "passed"], rows
    )
    res.metrics.update(
        variance_ratios=[r[2] for r in rows], ks=[float(r[3]) for r in rows], passed=passed
    )
    return res


def _run_multi(c: ExperimentConfig) -> RunResult:
    res = RunResult()
    dist = c.distribution
    table = solve_dp_multi(dist, c.W, c.T)
    res.tables["multi_value_table.csv"] = _via_file(table.to_csv).decode()
    value = float(table.values[(c.t,) + tuple(c.W)])
    res.metrics["value"] = value
    try:
        oracle = multi_enumeration_oracle(dist, c.W, c.T, c.t)
    except ResourceError:
        res.metrics["oracle"] = None
        passed = True
    else:
        res.metrics.update(oracle=oracle, oracle_error=abs(value - oracle))
        passed = abs(value - oracle) <= c.tolerance("oracle")
    if c.scale_ladder:
        caps = c.capacity
        grid = c.grid or (40,) * (dist.dim + 1)
        field_ = solve_fluid_multi(dist, None, (c.horizon,) + caps, grid)
        res.blobs["multi_fluid.bin"] = _via_file(field_.to_binary)

        def one(n):
            W = [int(round(v * n)) for v in caps]
            return scaled_dp_error_multi(field_, solve_dp_multi(dist, W, int(round(c.horizon * n))), n)

        errors = _ladder(c, one)
        res.tables["multi_error_ladder.csv"] = _csv(["n", "error"], zip(c.scale_ladder, errors))
        monotone = all(b <= a for a, b in zip(errors, errors[1:]))
        res.metrics.update(errors=[float(e) for e in errors], monotone=monotone,
                           hessian_residual=hessian_det_residual(field_))
        passed = passed and monotone
        centers = solve_centers_multi(field_, dist, caps, mode=c.mode)
        coef, _ = multi_sde_coefficients(field_, dist, centers)
        sde = multi_sde(centers, coef, (0.0, c.horizon), centers.dt, c.paths, c.seed,
                        record_every=16)
        res.tables["multi_sde_terminal.csv"] = _csv(
            ["component", "center", "var"],
            [(k + 1, centers.values[-1, k], sde.Y[:, -1, k].var(ddof=1)) for k in range(dist.dim)],
        )
    res.metrics["passed"] = bool(passed)
    return res


PIPELINES = {
    "dp-check": _run_dp_check,
    "variance-scaling": _run_variance,
    "fluid-convergence": _run_fluid,
    "diffusion-compare": _run_diffusion,
    "multi": _run_multi,
}


def execute(config: ExperimentConfig) -> RunResult:
    """Run the pipeline for ``config`` without touching the filesystem."""
    return PIPELINES[config.kind](config)


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    return value


def run(config: ExperimentConfig, out=None) -> dict:
    """Execute ``config`` and write its artifacts plus ``manifest.json`` into ``out``.

    Outputs are written to a staging directory and moved into place only
    after the pipeline succeeds, so a failed run leaves nothing behind.
    Returns the manifest.
    """
    out = Path(out or config.out or ".")
    started = time.perf_counter()
    result = execute(config)
    wall = time.perf_counter() - started
    files = {**{k: v.encode() for k, v in result.tables.items()}, **result.blobs}
    manifest = {
        "manifest_version": 1,
        "kind": config.kind,
        "config": {k: v for k, v in config.to_mapping().items() if k != "out"},
        "seed": config.seed,
        "versions": {
            "knapsack_lab": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "wall_time_s": round(wall, 3),
        "metrics": _jsonable(result.metrics),
        "outputs": {name: hashlib.sha256(data).hexdigest() for name, data in sorted(files.items())},
    }
    try:
        out.mkdir(parents=True, exist_ok=True)
        stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=out))
        try:
            for name, data in files.items():
                (stage / name).write_bytes(data)
            (stage / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
            for name in [*files, MANIFEST]:
                os.replace(stage / name, out / name)
        finally:
            shutil.rmtree(stage, ignore_errors=True)
    except OSError as exc:
        raise ArtifactIOError(f"cannot write to {out}: {exc}") from exc
    return manifest


# -- reports ----------------------------------------------------------------------


def _load_manifest(path):
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ArtifactIOError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ArtifactIOError(f"corrupt manifest {path}: {exc}") from exc
    if not isinstance(doc, dict) or not {"kind", "metrics", "config"} <= set(doc):
        raise ArtifactIOError(f"corrupt manifest {path}: missing kind, metrics or config")
    return doc


def _flatten(prefix, value):
    if isinstance(value, dict):
        for k in sorted(value):
            yield from _flatten(f"{prefix}.{k}" if prefix else k, value[k])
    elif isinstance(value, list):
        for i, v in enumerate(value):
            yield from _flatten(f"{prefix}[{i}]", v)
    else:
        yield prefix, value


def report(directory) -> list:
    """Summarise every run under ``directory`` into ``summary.csv`` and ``summary.txt``.

    A run is a directory holding ``manifest.json``: ``directory`` itself
    and/or its immediate subdirectories. The output depends only on the
    manifests, so repeated calls produce identical files.
    """
    root = Path(directory)
    if not root.is_dir():
        raise ArtifactIOError(f"{root} is not a directory")
    found = sorted(p for p in [root / MANIFEST, *root.glob(f"*/{MANIFEST}")] if p.is_file())
    if not found:
        raise ArtifactIOError(f"no {MANIFEST} under {root}")
    rows = []
    for path in found:
        doc = _load_manifest(path)
        run_name = "." if path.parent == root else path.parent.name
        metrics = doc["metrics"]
        rows.append({
            "run": run_name,
            "kind": doc["kind"],
            "seed": doc.get("seed"),
            "passed": metrics.get("passed"),
            "metrics": ";".join(f"{k}={v!r}" for k, v in _flatten("", metrics) if k != "passed"),
        })
    header = ["run", "kind", "seed", "passed", "metrics"]
    (root / "summary.csv").write_text(_csv(header, [[r[h] for h in header] for r in rows]))
    lines = [f"{len(rows)} run(s) under {root.name or root}"]
    for r in rows:
        status = {True: "PASS", False: "FAIL"}.get(r["passed"], "n/a")
        lines.append(f"{status:4}  {r['run']}  [{r['kind']}]  {r['metrics']}")
    (root / "summary.txt").write_text("\n".join(lines) + "\n")
    return rows

