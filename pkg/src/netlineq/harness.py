"""Experiment configuration, execution, decay fitting and spectral reports.

A config is a JSON object::

    {
      "graph": "g1.json" | {"n": ..., "edges": [...]},
      "graphs": [...], "switching": {"policy": "random", "seed": 7},
      "problem": "problem.json" | {"m": 5, "n": 10, "generator": {"seed": 3}},
      "algorithm": {"kind": "gdac", "alpha": 2, "beta": 0.1, "gamma": 20},
      "sim": {"dt": 0.0025, "steps": 20000, "record_every": 10},
      "output": "trace.csv"
    }

Exactly one of ``graph``/``graphs`` is given.  ``algorithm.auto_gamma = c``
replaces ``gamma`` by ``c`` times the certified threshold.  Relative paths
resolve against the config file's directory.  ``NETLINEQ_SEED`` overrides
every seed in the config.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .dynamics import (
    DEFAULT_DT,
    KINDS,
    AlgorithmSpec,
    SolverState,
    check_init,
    default_init,
    error_metrics,
    simulate,
)
from .graph import (
    Digraph,
    GraphError,
    GraphSequence,
    graph_from_dict,
    in_laplacian,
    is_strongly_connected,
    is_weight_balanced,
    positive_null_eigenvector,
)
from .linproblem import (
    NetworkProblem,
    ProblemError,
    generate_problem,  # noqa: F401  (part of the harness API)
    has_solution,
    nullspace_condition_holds,
    problem_from_dict,
    reference_solution,
    stack,
)
from . import spectral

CSV_COLUMNS = ("step", "t", "err_avg", "err_full", "consensus_spread", "e_norm",
               "conserved_drift", "objective_f")
SEED_ENV = "NETLINEQ_SEED"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunRecord:
    step: int
    t: float
    err_avg: float
    err_full: float
    consensus_spread: float
    e_norm: float | None
    conserved_drift: float | None
    objective_f: float


@dataclass(eq=False)
class ExperimentConfig:
    graphs: list
    problem: NetworkProblem
    kind: str
    alpha: float = 2.0
    beta: float = 0.1
    gamma: float | None = 20.0
    auto_gamma: float | None = None
    dt: float = DEFAULT_DT
    steps: int = 20000
    record_every: int = 10
    switching: dict = field(default_factory=lambda: {"policy": "fixed", "index": 0})
    output: Path | None = None
    x0: np.ndarray | None = None
    y0: np.ndarray | None = None
    raw: dict = field(default_factory=dict)

    @property
    def graph(self) -> Digraph:
        return self.graphs[0]

    def sequence(self) -> GraphSequence:
        sw = self.switching
        return GraphSequence(tuple(self.graphs), sw.get("policy", "fixed"),
                             int(sw.get("index", 0)), int(sw.get("seed", 0)))

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @property
    def context(self) -> str:
        if self.kind == "gdac_tv":
            return "time-varying"
        if self.kind in ("unbalanced_fixed_v", "dist"):
            return "unbalanced"
        return "balanced"


def _apply_seed_override(raw: dict) -> dict:
    seed = os.environ.get(SEED_ENV)
    if seed is None or seed == "":
        return raw
    try:
        seed = int(seed)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {seed!r}") from None
    raw = copy.deepcopy(raw)
    prob = raw.get("problem")
    if isinstance(prob, dict) and isinstance(prob.get("generator"), dict):
        prob["generator"]["seed"] = seed
    if isinstance(raw.get("switching"), dict) and "seed" in raw["switching"]:
        raw["switching"]["seed"] = seed
    return raw


def _read_json(path: Path, what: str):
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {what} {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        lines = text.splitlines()
        ctx = lines[exc.lineno - 1] if 0 < exc.lineno <= len(lines) else ""
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}\n    {ctx}") from exc


def _resolve(ref, base: Path, what: str):
    if isinstance(ref, str):
        return _read_json(base / ref, what)
    if isinstance(ref, dict):
        return ref
    raise ConfigError(f"{what} must be a path or an object")


def _number(section: dict, key: str, where: str, default=None, positive=True):
    val = section.get(key, default)
    if val is None:
        return None
    if isinstance(val, bool) or not isinstance(val, (int, float)) or not np.isfinite(val):
        raise ConfigError(f"{where}.{key} must be a finite number")
    if positive and not val > 0:
        raise ConfigError(f"{where}.{key} must be > 0, got {val}")
    return float(val)


def _int(section: dict, key: str, where: str, default: int, minimum: int = 1) -> int:
    val = section.get(key, default)
    if isinstance(val, bool) or not isinstance(val, int) or val < minimum:
        raise ConfigError(f"{where}.{key} must be an integer >= {minimum}")
    return val


def config_from_dict(raw: dict, base: Path | str = ".") -> ExperimentConfig:
    base = Path(base)
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw = _apply_seed_override(raw)

    if ("graph" in raw) == ("graphs" in raw):
        raise ConfigError("exactly one of 'graph' or 'graphs' is required")
    refs = [raw["graph"]] if "graph" in raw else raw["graphs"]
    if not isinstance(refs, list) or not refs:
        raise ConfigError("'graphs' must be a non-empty list")
    try:
        graphs = [graph_from_dict(_resolve(r, base, "graph")) for r in refs]
    except GraphError as exc:
        raise ConfigError(f"graph: {exc}") from exc

    if len({g.n for g in graphs}) != 1:
        raise ConfigError("all graphs must have the same node count")

    switching = raw.get("switching", {"policy": "fixed", "index": 0})
    if not isinstance(switching, dict) or switching.get("policy", "fixed") not in ("fixed", "random"):
        raise ConfigError("switching.policy must be 'fixed' or 'random'")

    if "problem" not in raw:
        raise ConfigError("'problem' is required")
    pdata = _resolve(raw["problem"], base, "problem")
    try:
        problem = problem_from_dict(pdata)
    except ProblemError as exc:
        raise ConfigError(f"problem: {exc}") from exc
    if problem.n != graphs[0].n:
        raise ConfigError(f"problem has {problem.n} agents but graph has {graphs[0].n} nodes")

    alg = raw.get("algorithm")
    if not isinstance(alg, dict):
        raise ConfigError("'algorithm' object is required")
    kind = alg.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"algorithm.kind must be one of {KINDS}")
    alpha = _number(alg, "alpha", "algorithm", 2.0)
    beta = _number(alg, "beta", "algorithm", 0.1)
    auto = _number(alg, "auto_gamma", "algorithm")
    if auto is not None and not auto > 1:
        raise ConfigError("algorithm.auto_gamma must be > 1")
    if auto is not None and "gamma" in alg:
        raise ConfigError("give either algorithm.gamma or algorithm.auto_gamma, not both")
    gamma = None if auto is not None else _number(alg, "gamma", "algorithm", 20.0)
    if kind != "gdac_tv" and len(graphs) > 1 and switching.get("policy") == "random":
        raise ConfigError(f"random switching requires kind 'gdac_tv', got {kind!r}")

    sim = raw.get("sim", {})
    if not isinstance(sim, dict):
        raise ConfigError("'sim' must be an object")
    dt = _number(sim, "dt", "sim", DEFAULT_DT)
    steps = _int(sim, "steps", "sim", 20000)
    record_every = _int(sim, "record_every", "sim", 10)
    nm = problem.n * problem.m
    x0 = y0 = None
    for key in ("x0", "y0"):
        if key in sim:
            arr = np.asarray(sim[key], dtype=float)
            if arr.shape != (nm,):
                raise ConfigError(f"sim.{key} must have length {nm}")
            if key == "x0":
                x0 = arr
            else:
                y0 = arr

    out = raw.get("output")
    return ExperimentConfig(
        graphs=graphs, problem=problem, kind=kind, alpha=alpha, beta=beta, gamma=gamma,
        auto_gamma=auto, dt=dt, steps=steps, record_every=record_every, switching=switching,
        output=None if out is None else base / out, x0=x0, y0=y0, raw=raw,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return config_from_dict(_read_json(path, "config"), path.parent)


def hypothesis_issues(cfg: ExperimentConfig) -> list[str]:
    """Convergence hypotheses that the configured instance violates."""
    issues = []
    for k, g in enumerate(cfg.graphs):
        if not is_strongly_connected(g):
            issues.append(f"graph {k} is not strongly connected")
        elif cfg.context != "unbalanced" and not is_weight_balanced(g):
            issues.append(f"graph {k} is not weight-balanced")
    if not has_solution(cfg.problem):
        issues.append("summed system has no solution")
    elif not nullspace_condition_holds(cfg.problem):
        issues.append("null-space condition null(A) in null(A_i) fails")
    return issues


def threshold(cfg: ExperimentConfig) -> float:
    """Certified gamma threshold for the configured algorithm."""
    p, a, b = cfg.problem, cfg.alpha, cfg.beta
    if cfg.context == "time-varying":
        return spectral.gamma_hat_timevarying(p, cfg.graphs, a, b)
    return spectral.certificate(p, cfg.graph, a, b, cfg.context).gamma_bar


def resolve_gamma(cfg: ExperimentConfig) -> tuple[float | None, float | None]:
    """Return ``(gamma, gamma_bar)``; ``gamma_bar`` is None if not computed."""
    if cfg.kind == "central":
        return None, None
    if cfg.auto_gamma is None:
        return cfg.gamma, None
    gbar = threshold(cfg)
    # threshold 0 certifies every positive gamma
    gamma = cfg.auto_gamma * gbar if gbar > 0 else cfg.auto_gamma
    return gamma, gbar


def _initial_state(cfg, spec) -> SolverState:
    s = default_init(cfg.problem, spec, cfg.x0)
    if cfg.y0 is not None and spec.uses_y:
        s = SolverState(s.x, cfg.y0.copy(), s.v, s.t)
        check_init(cfg.problem, spec, s)
    return s


def run_experiment(cfg: ExperimentConfig, out=None, backend=None):
    """Integrate the configured flow; returns ``(records, summary)``.

    Writes the CSV trace to ``out`` (or ``cfg.output``) when set.
    """
    for issue in hypothesis_issues(cfg):
        if "no solution" in issue:
            raise ProblemError(issue)
        if "strongly connected" in issue:
            raise GraphError(issue)
        warnings.warn(issue, stacklevel=2)

    gamma, gbar = resolve_gamma(cfg)
    spec = AlgorithmSpec(cfg.kind, cfg.alpha, cfg.beta, gamma if gamma is not None else 1.0)
    p = cfg.problem
    s0 = _initial_state(cfg, spec)
    xstar = reference_solution(p, s0.x.reshape(p.n, p.m).mean(axis=0))

    vbar = None
    if cfg.kind == "unbalanced_fixed_v":
        vbar = positive_null_eigenvector(cfg.graph)
    graph = cfg.sequence() if cfg.kind == "gdac_tv" else cfg.graph
    traj = simulate(p, graph, spec, cfg.dt, cfg.steps, cfg.record_every, s0, vbar, backend)

    ops = stack(p, in_laplacian(cfg.graph))
    records = []
    for k, step in enumerate(traj.steps):
        m = error_metrics(p, ops, traj.state(k), xstar)
        records.append(RunRecord(int(step), float(traj.times[k]), **m))

    summary = {
        "config_hash": cfg.config_hash,
        "kind": cfg.kind,
        "alpha": cfg.alpha,
        "beta": cfg.beta,
        "gamma": gamma,
        "gamma_bar": gbar,
        "steps": cfg.steps,
        "dt": cfg.dt,
        "backend": backend or kernels.BACKEND,
        "final": {c: getattr(records[-1], c) for c in CSV_COLUMNS},
        "x_star": xstar.tolist(),
    }
    try:
        slope, r2 = fit_decay_rate(records)
        summary["fit_slope"], summary["fit_r_squared"] = slope, r2
    except ValueError as exc:
        summary["fit_slope"] = summary["fit_r_squared"] = None
        summary["fit_note"] = str(exc)

    target = out if out is not None else cfg.output
    if target is not None:
        Path(target).write_text(records_to_csv(records))
        summary["output"] = str(target)
    return records, summary


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def records_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def read_csv(path) -> list[RunRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            vals = {c: (None if row[c] == "" else float(row[c])) for c in CSV_COLUMNS}
            vals["step"] = int(vals["step"])
            out.append(RunRecord(**vals))
    return out


def fit_decay_rate(records, window=(0.1, 0.9), metric="err_avg", floor=1e-13):
    """Least-squares slope of ``log(metric)`` against ``t``.

    Records at or below ``floor`` are dropped, then the first and last
    fractions outside ``window`` of the remaining records.  Returns
    ``(slope, r_squared)``.
    """
    t = np.array([r.t for r in records], dtype=float)
    e = np.array([getattr(r, metric) for r in records], dtype=float)
    keep = np.isfinite(e) & (e > floor)
    t, e = t[keep], e[keep]
    if t.size < 10:
        raise ValueError(f"need at least 10 usable records, have {t.size}")
    lo, hi = int(np.floor(window[0] * t.size)), int(np.ceil(window[1] * t.size))
    t, y = t[lo:hi], np.log(e[lo:hi])
    slope, icept = np.polyfit(t, y, 1)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum((y - (slope * t + icept)) ** 2))
    r2 = 1.0 if ss_tot <= 1e-300 else 1.0 - ss_res / ss_tot
    return float(slope), float(r2)


def spectral_report(cfg: ExperimentConfig) -> dict:
    p, a, b = cfg.problem, cfg.alpha, cfg.beta
    nullspace = nullspace_condition_holds(p)
    report = {
        "context": cfg.context,
        "has_solution": has_solution(p),
        "nullspace_condition": nullspace,
    }
    graphs = []
    for g in cfg.graphs:
        L = in_laplacian(g)
        entry = {
            "strongly_connected": is_strongly_connected(g),
            "weight_balanced": is_weight_balanced(g),
            "min_real_part": spectral.min_nonzero_real_part(L),
        }
        if entry["weight_balanced"]:
            entry["lambda2_LLt"] = spectral.lambda2_psd(L + L.T)
        if entry["strongly_connected"]:
            v = positive_null_eigenvector(g)
            LV = L @ np.diag(v)
            entry["vbar"] = v.tolist()
            entry["lambda2_LVVLt"] = spectral.lambda2_psd(LV + LV.T)
        graphs.append(entry)
    report["graphs"] = graphs

    first = graphs[0]
    report["lambda2_LLt"] = first.get("lambda2_LVVLt" if cfg.context == "unbalanced" else "lambda2_LLt")
    report["min_real_part"] = first["min_real_part"]
    if cfg.context == "unbalanced":
        report["vbar"] = first.get("vbar")

    report["lambda2_Q11"] = report["gamma_bar"] = report["central_rate_bound"] = None
    try:
        if cfg.context == "time-varying":
            cert = spectral.timevarying_certificate(p, cfg.graphs, a, b)
            report["gamma_hat"] = cert.gamma_bar
            report["gamma_per_graph"] = cert.per_graph
        else:
            cert = spectral.certificate(p, cfg.graph, a, b, cfg.context, check_nullspace=False)
        report["lambda2_Q11"] = cert.lambda2_q11
        report["gamma_bar"] = cert.gamma_bar
    except (GraphError, spectral.SpectralError) as exc:
        report["certificate_error"] = str(exc)
    if first["weight_balanced"] and first["strongly_connected"]:
        try:
            report["central_rate_bound"] = spectral.central_rate_bound(p, cfg.graph, a, b)
        except spectral.SpectralError as exc:
            report["central_rate_error"] = str(exc)
    return report


def format_report(report: dict) -> str:
    lines = [f"context: {report['context']}"]
    for key in ("has_solution", "nullspace_condition", "lambda2_LLt", "min_real_part",
                "lambda2_Q11", "gamma_bar", "gamma_hat", "central_rate_bound"):
        if key in report and report[key] is not None:
            val = report[key]
            lines.append(f"  {key:20s} {val:.6g}" if isinstance(val, float) else f"  {key:20s} {val}")
    if report.get("vbar") is not None:
        lines.append("  vbar                 " + " ".join(f"{x:.6g}" for x in report["vbar"]))
    for key in ("certificate_error", "central_rate_error"):
        if key in report:
            lines.append(f"  {key}: {report[key]}")
    return "\n".join(lines)

