"""Experiment orchestration: config ingestion, macroreplications, reports.

A run is described by a JSON config naming a target family (polyhedron,
quadratic, or portfolio), the Wasserstein radius delta, the rarity sweep
r_values, the methods to compare, and the sampling budget. Each (method, r)
cell runs ``n_macroreps`` independent pipelines on RNG streams derived from
(seed, method, r, rep), so results are reproducible regardless of how the
jobs are scheduled; the ``DRIS_WORKERS`` environment variable sets the
process count (default 1).

Reported per cell: the mean estimate of u in squared units (the convention
of the reference tables; replicate arrays keep the distance-units value),
the mean probability estimate, across-replication 95% relative errors, mean
pipeline wall time, and variance/efficiency ratios against crude MC
(VR = var_MC / var_method at equal N, ER = VR scaled by the runtime ratio).
The CLT-based relative error computed from the mean asymptotic variance is
carried in JSON rows as ``asym_relerr95`` alongside the across-replication
columns. CSV output uses the fixed header ``method,r,u_mean,u_relerr95,
p_mean,p_relerr95,time_sec,vr,er``; JSON output mirrors the rows and adds
metadata plus per-replicate arrays.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Any

import numpy as np

from . import __version__
from .errors import ConfigError, DrisError
from .estimator import MethodKind, run_crude_mc, run_dris, run_exp_twist
from .finance import OptionPosition, PortfolioSpec, build_loss_set
from .geometry import (
    ConvexTarget,
    Halfspace,
    Polyhedron,
    QuadraticSuperlevel,
    min_norm_point,
    with_rarity,
)
from .oracle import Quadrature2D
from .sampler import RngStream

_LOG = logging.getLogger(__name__)

_Z95 = 1.959963984540054
_MAX_SEED = 2**64

_RUNNERS = {
    MethodKind.DRIS: run_dris,
    MethodKind.CRUDE_MC: run_crude_mc,
    MethodKind.EXP_TWIST: run_exp_twist,
}

CSV_HEADER = ("method", "r", "u_mean", "u_relerr95", "p_mean", "p_relerr95", "time_sec", "vr", "er")

_TARGET_KEYS = {
    "polyhedron": ({"kind", "a", "b"}, set()),
    "quadratic": ({"kind", "a", "b", "c", "threshold"}, set()),
    "portfolio": (
        {"kind", "n_assets", "spot", "vol", "rate", "dt", "positions", "loss_threshold"},
        {"trading_days", "convention"},
    ),
}
_POSITION_KEYS = {"kind", "strike", "maturity", "quantity"}

_CONFIG_KEYS = {
    "target", "delta", "r_values", "methods", "n_samples", "n_macroreps", "seed",
}
_CONFIG_OPTIONAL = {"output_path", "emit_oracle"}


def _check_keys(given: dict, required: set, optional: set, what: str) -> None:
    keys = set(given)
    missing = required - keys
    unknown = keys - required - optional
    if missing:
        raise ConfigError(f"{what}: missing keys {sorted(missing)}")
    if unknown:
        raise ConfigError(f"{what}: unknown keys {sorted(unknown)}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated description of one experiment sweep."""

    target: dict
    delta: float
    r_values: tuple[float, ...]
    methods: tuple[MethodKind, ...]
    n_samples: int
    n_macroreps: int
    seed: int
    output_path: str | None = None
    emit_oracle: bool = False

    def __post_init__(self):
        object.__setattr__(self, "target", dict(self.target))
        object.__setattr__(self, "r_values", tuple(float(r) for r in self.r_values))
        try:
            object.__setattr__(self, "methods", tuple(MethodKind(m) for m in self.methods))
        except ValueError as exc:
            raise ConfigError(f"unknown method name: {exc}") from None
        if not self.delta > 0.0:
            raise ConfigError("delta must be positive")
        if not self.r_values:
            raise ConfigError("r_values must be nonempty")
        if any(r <= 0.0 for r in self.r_values):
            raise ConfigError("r_values must be positive")
        if any(b <= a for a, b in zip(self.r_values, self.r_values[1:])):
            raise ConfigError("r_values must be strictly increasing")
        if not self.methods:
            raise ConfigError("methods must be nonempty")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("methods must not repeat")
        if self.n_samples < 2:
            raise ConfigError("n_samples must be at least 2")
        if self.n_macroreps < 2:
            raise ConfigError("n_macroreps must be at least 2 (variance needs replication)")
        if not (0 <= self.seed < _MAX_SEED):
            raise ConfigError("seed must fit in 64 bits")
        kind = self.target.get("kind")
        if kind not in _TARGET_KEYS:
            raise ConfigError(f"target kind must be one of {sorted(_TARGET_KEYS)}, got {kind!r}")
        required, optional = _TARGET_KEYS[kind]
        _check_keys(self.target, required, optional, f"target[{kind}]")
        if kind == "portfolio":
            for i, pos in enumerate(self.target["positions"]):
                _check_keys(pos, _POSITION_KEYS, set(), f"positions[{i}]")
        try:
            build_target(self.target, self.r_values[0])  # fail fast on bad geometry
        except DrisError as exc:
            raise ConfigError(f"target does not define a usable set: {exc}") from exc

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        _check_keys(raw, _CONFIG_KEYS, _CONFIG_OPTIONAL, "config")
        try:
            methods = tuple(MethodKind(m) for m in raw["methods"])
        except ValueError as exc:
            raise ConfigError(f"unknown method name: {exc}") from None
        return cls(
            target=raw["target"],
            delta=float(raw["delta"]),
            r_values=raw["r_values"],
            methods=methods,
            n_samples=int(raw["n_samples"]),
            n_macroreps=int(raw["n_macroreps"]),
            seed=int(raw["seed"]),
            output_path=raw.get("output_path"),
            emit_oracle=bool(raw.get("emit_oracle", False)),
        )

    def to_dict(self) -> dict:
        return {
            "target": dict(self.target),
            "delta": self.delta,
            "r_values": list(self.r_values),
            "methods": [m.value for m in self.methods],
            "n_samples": self.n_samples,
            "n_macroreps": self.n_macroreps,
            "seed": self.seed,
            "output_path": self.output_path,
            "emit_oracle": self.emit_oracle,
        }

    def sha256(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def load_config(path: str) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    return ExperimentConfig.from_dict(raw)


def build_target(target_cfg: dict, r: float) -> ConvexTarget:
    """Concrete target at rarity r from its config description.

    Polyhedron and quadratic targets are rescaled so the min-norm distance
    equals r; the portfolio target divides the risk factor by r, so its
    min-norm distance grows proportionally to r but is not r itself.
    """
    kind = target_cfg["kind"]
    if kind == "polyhedron":
        a = np.asarray(target_cfg["a"], dtype=float)
        b = np.asarray(target_cfg["b"], dtype=float)
        if a.ndim != 2 or b.ndim != 1 or a.shape[0] != b.shape[0]:
            raise ConfigError("polyhedron needs a (m, n) matrix 'a' and length-m vector 'b'")
        base = Polyhedron(halfspaces=tuple(Halfspace(normal=row, offset=off) for row, off in zip(a, b)))
        return with_rarity(ConvexTarget(base=base), r)
    if kind == "quadratic":
        base = QuadraticSuperlevel(
            a=float(target_cfg["a"]),
            b=np.asarray(target_cfg["b"], dtype=float),
            c=np.asarray(target_cfg["c"], dtype=float),
            threshold=float(target_cfg["threshold"]),
        )
        return with_rarity(ConvexTarget(base=base), r)
    spec = PortfolioSpec(
        n_assets=int(target_cfg["n_assets"]),
        spot=float(target_cfg["spot"]),
        vol=float(target_cfg["vol"]),
        rate=float(target_cfg["rate"]),
        dt=float(target_cfg["dt"]),
        positions=tuple(
            OptionPosition(
                kind=p["kind"],
                strike=float(p["strike"]),
                maturity=float(p["maturity"]),
                quantity=float(p["quantity"]),
            )
            for p in target_cfg["positions"]
        ),
        loss_threshold=float(target_cfg["loss_threshold"]),
        trading_days=int(target_cfg.get("trading_days", 250)),
    )
    convention = target_cfg.get("convention", "sqrt_dt")
    return ConvexTarget(base=build_loss_set(spec, r, convention=convention))


@dataclass
class ReportRow:
    """Aggregated results for one (method, r) cell."""

    method: str
    r: float
    u_mean: float
    u_relerr95: float
    p_mean: float
    p_relerr95: float
    time_sec: float
    vr: float | None
    er: float | None
    x1_star: float
    asym_var_mean: float | None = None
    asym_relerr95: float | None = None
    error: str | None = None
    replicates: dict | None = None

    def to_dict(self) -> dict:
        out = {
            "method": self.method,
            "r": self.r,
            "u_mean": self.u_mean,
            "u_relerr95": self.u_relerr95,
            "p_mean": self.p_mean,
            "p_relerr95": self.p_relerr95,
            "time_sec": self.time_sec,
            "vr": self.vr,
            "er": self.er,
            "x1_star": self.x1_star,
            "asym_var_mean": self.asym_var_mean,
            "asym_relerr95": self.asym_relerr95,
            "error": self.error,
        }
        if self.replicates is not None:
            out["replicates"] = self.replicates
        return out


@dataclass
class ExperimentReport:
    rows: list[ReportRow]
    metadata: dict

    def to_dict(self) -> dict:
        return {"metadata": dict(self.metadata), "rows": [row.to_dict() for row in self.rows]}


def worker_count() -> int:
    raw = os.environ.get("DRIS_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"DRIS_WORKERS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("DRIS_WORKERS must be at least 1")
    return n


def _stream_label(method: MethodKind, r: float, rep: int) -> str:
    return f"{method.value}:r={r:.17g}:rep={rep}"


def _run_job(target_cfg: dict, delta: float, n_samples: int, seed: int, method_value: str, r: float, rep: int):
    # module-level so process pools can pickle it; failures come back as
    # strings so one bad replicate cannot kill the sweep
    method = MethodKind(method_value)
    try:
        target = build_target(target_cfg, r)
        rng = RngStream.for_label(seed, _stream_label(method, r, rep))
        result = _RUNNERS[method](target, delta, n_samples, rng)
        return method_value, r, rep, result, None
    except Exception as exc:
        return method_value, r, rep, None, f"{type(exc).__name__}: {exc}"


def _relerr(values: np.ndarray) -> float:
    mean = float(values.mean())
    if values.size < 2 or mean == 0.0:
        return float("nan")
    return _Z95 * float(values.std(ddof=1)) / abs(mean)


def _oracle_row(target: ConvexTarget, r: float, delta: float, x1_star: float) -> ReportRow:
    t0 = time.perf_counter()
    quad = Quadrature2D(target)
    u = quad.solve_u(delta)
    _, p = quad.evaluate(u)
    elapsed = time.perf_counter() - t0
    return ReportRow(
        method="ORACLE",
        r=r,
        u_mean=u * u,
        u_relerr95=0.0,
        p_mean=p,
        p_relerr95=0.0,
        time_sec=elapsed,
        vr=None,
        er=None,
        x1_star=x1_star,
        replicates={"u_hat": [u], "p_hat": [p]},
    )


def oracle_report(config: ExperimentConfig) -> ExperimentReport:
    """Quadrature reference rows for every r; targets must be 2-D."""
    rows = []
    for r in config.r_values:
        target = build_target(config.target, r)
        if target.dim != 2:
            raise ConfigError("oracle rows require a 2-D target")
        x1_star = float(np.linalg.norm(min_norm_point(target)))
        rows.append(_oracle_row(target, r, config.delta, x1_star))
    metadata = {
        "seed": config.seed,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "config_sha256": config.sha256(),
        "target_kind": config.target["kind"],
        "delta": config.delta,
        "r_values": list(config.r_values),
        "u_units": "squared_distance",
        "version": __version__,
    }
    return ExperimentReport(rows=rows, metadata=metadata)


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    """Run the full sweep and aggregate one report row per (method, r)."""
    workers = worker_count()
    jobs = [
        (config.target, config.delta, config.n_samples, config.seed, m.value, r, rep)
        for m in config.methods
        for r in config.r_values
        for rep in range(config.n_macroreps)
    ]
    outcomes: dict[tuple[str, float, int], tuple] = {}
    if workers == 1:
        for job in jobs:
            out = _run_job(*job)
            outcomes[(out[0], out[1], out[2])] = out
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for out in pool.map(_run_job, *zip(*jobs)):
                outcomes[(out[0], out[1], out[2])] = out

    x1_stars = {r: float(np.linalg.norm(min_norm_point(build_target(config.target, r)))) for r in config.r_values}

    rows: list[ReportRow] = []
    if config.emit_oracle:
        rows.extend(oracle_report(config).rows)

    cells: dict[tuple[str, float], dict] = {}
    for method in config.methods:
        for r in config.r_values:
            picks = [outcomes[(method.value, r, rep)] for rep in range(config.n_macroreps)]
            good = [p[3] for p in picks if p[4] is None]
            errors = sorted({p[4] for p in picks if p[4] is not None})
            cell: dict[str, Any] = {"errors": errors}
            if good:
                cell["u"] = np.array([g.u_hat for g in good])
                cell["p"] = np.array([g.p_hat for g in good])
                cell["asym"] = np.array([g.asym_var for g in good])
                cell["time"] = np.array([g.wall_time for g in good])
                cell["iters"] = [g.root_iterations for g in good]
                cell["jump"] = [g.crossing_jump for g in good]
            cells[(method.value, r)] = cell

    mc_present = MethodKind.CRUDE_MC in config.methods
    for method in config.methods:
        for r in config.r_values:
            cell = cells[(method.value, r)]
            error = "; ".join(cell["errors"]) or None
            if "u" not in cell:
                rows.append(
                    ReportRow(
                        method=method.value, r=r,
                        u_mean=float("nan"), u_relerr95=float("nan"),
                        p_mean=float("nan"), p_relerr95=float("nan"),
                        time_sec=float("nan"), vr=None, er=None,
                        x1_star=x1_stars[r], error=error, replicates={},
                    )
                )
                continue
            u_sq = cell["u"] ** 2
            p_vals = cell["p"]
            p_mean = float(p_vals.mean())
            time_mean = float(cell["time"].mean())
            asym_mean = float(cell["asym"].mean())

            vr = er = None
            mc_cell = cells.get((MethodKind.CRUDE_MC.value, r)) if mc_present else None
            if method is MethodKind.CRUDE_MC:
                vr = er = 1.0
            elif mc_cell is not None and "p" in mc_cell and mc_cell["p"].size >= 2 and p_vals.size >= 2:
                var_mc = float(mc_cell["p"].var(ddof=1))
                var_self = float(p_vals.var(ddof=1))
                if var_self > 0.0 and var_mc > 0.0:
                    vr = var_mc / var_self
                    er = vr * float(mc_cell["time"].mean()) / time_mean
                    mc_asym = float(mc_cell["asym"].mean())
                    if asym_mean > 0.0 and mc_asym > 0.0:
                        _LOG.debug(
                            "vr diagnostic %s r=%g: across-rep %.4g, asym-based %.4g",
                            method.value, r, vr, mc_asym / asym_mean,
                        )

            asym_rel = None
            if p_mean > 0.0 and asym_mean >= 0.0:
                asym_rel = _Z95 * float(np.sqrt(asym_mean / config.n_samples)) / p_mean

            rows.append(
                ReportRow(
                    method=method.value,
                    r=r,
                    u_mean=float(u_sq.mean()),
                    u_relerr95=_relerr(u_sq),
                    p_mean=p_mean,
                    p_relerr95=_relerr(p_vals),
                    time_sec=time_mean,
                    vr=vr,
                    er=er,
                    x1_star=x1_stars[r],
                    asym_var_mean=asym_mean,
                    asym_relerr95=asym_rel,
                    error=error,
                    replicates={
                        "u_hat": [float(v) for v in cell["u"]],
                        "p_hat": [float(v) for v in p_vals],
                        "asym_var": [float(v) for v in cell["asym"]],
                        "wall_time": [float(v) for v in cell["time"]],
                        "root_iterations": cell["iters"],
                        "crossing_jump": [float(v) for v in cell["jump"]],
                    },
                )
            )

    metadata = {
        "seed": config.seed,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "config_sha256": config.sha256(),
        "target_kind": config.target["kind"],
        "convention": config.target.get("convention", "sqrt_dt") if config.target["kind"] == "portfolio" else None,
        "delta": config.delta,
        "n_samples": config.n_samples,
        "n_macroreps": config.n_macroreps,
        "methods": [m.value for m in config.methods],
        "r_values": list(config.r_values),
        "u_units": "squared_distance",
        "workers": workers,
        "version": __version__,
    }
    return ExperimentReport(rows=rows, metadata=metadata)


def _csv_num(value: float | None) -> str:
    if value is None:
        return ""
    return f"{value:.17e}"


def csv_lines(report: ExperimentReport) -> list[str]:
    """CSV representation: the fixed header plus one line per row."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(CSV_HEADER)
    for row in report.rows:
        writer.writerow(
            [
                row.method,
                f"{row.r:.17g}",
                _csv_num(row.u_mean),
                _csv_num(row.u_relerr95),
                _csv_num(row.p_mean),
                _csv_num(row.p_relerr95),
                _csv_num(row.time_sec),
                _csv_num(row.vr),
                _csv_num(row.er),
            ]
        )
    return buf.getvalue().splitlines()


def emit_report(report: ExperimentReport, path: str, fmt: str) -> None:
    """Write the report as CSV (fixed header) or JSON (rows plus metadata)."""
    if not report.rows:
        raise ValueError("report has no rows")
    if fmt == "csv":
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(csv_lines(report)) + "\n")
    elif fmt == "json":
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=2)
            fh.write("\n")
    else:
        raise ValueError(f"format must be 'csv' or 'json', got {fmt!r}")


def load_report(path: str):
    """Parse a report written by emit_report; dict for JSON, row dicts for CSV."""
    if path.endswith(".csv"):
        with open(path, newline="", encoding="utf-8") as fh:
            return list(csv.DictReader(fh))
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def format_table(report: ExperimentReport) -> str:
    """Terminal-friendly table; dashes mark reference cells without VR/ER."""
    lines = [
        f"{'Method':8s} {'r':>6s} {'u (95% rel err)':>24s} {'p (95% rel err)':>24s}"
        f" {'Time (s)':>9s} {'VR':>12s} {'ER':>12s}"
    ]
    for row in report.rows:
        if row.error is not None and np.isnan(row.u_mean):
            lines.append(f"{row.method:8s} {row.r:6.3g} failed: {row.error}")
            continue
        is_ref = row.method in ("MC", "ORACLE")
        vr = "-" if (row.vr is None or is_ref) else f"{row.vr:,.0f}"
        er = "-" if (row.er is None or is_ref) else f"{row.er:,.0f}"
        u_part = f"{row.u_mean:.4g} ({row.u_relerr95 * 100:.3f}%)"
        p_part = f"{row.p_mean:.4g} ({row.p_relerr95 * 100:.3f}%)"
        lines.append(
            f"{row.method:8s} {row.r:6.3g} {u_part:>24s} {p_part:>24s}"
            f" {row.time_sec:9.2f} {vr:>12s} {er:>12s}"
        )
    return "\n".join(lines)
