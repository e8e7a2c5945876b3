"""Config-driven experiments behind the command line interface.

A config is one JSON document::

    {"name": "...", "kind": "example1" | "example2" | "dvh-dump" | "lambda-scan"
                            | "exponent-probe" | "bfgs-run",
     "parameters": {...}}

Each runner writes CSV/JSON files into an output directory and returns a
:class:`RunResult`.  CSV files start with a ``# config_hash`` comment and a
header row; floats are written with 17 significant digits.  JSON outputs
carry the same hash under ``"config_hash"``.  Nothing depends on wall-clock
time or unseeded randomness, so repeated runs are byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dose_model import PeakFamily, find_critical_points, single_peak, two_peak, validate_sigma
from .errors import (
    ConfigError,
    DvhSmoothError,
    FitFailedError,
    InsufficientDataError,
    InvalidArgumentError,
)
from .geometry import DEFAULT_REGION, Region
from .histogram import DEFAULT_QUADRATURE, QuadratureSpec, centered_peak_volume, dvh_curve, volumes_above
from .objective import ObjectiveSpec, make_f1, make_f2, objective_grad_eud, objective_grad_fd, objective_value
from .optimizer import QuasiNewtonOptions, bfgs_run, convergence_classify, newton1d_run
from .smoothness import (
    DEFAULT_PROBE_STEPS,
    SLOWDOWN_BAND,
    holder_exponent,
    lambda_distance,
    locate_lambda_1d,
    step_scaling_probe,
)

FLOAT_FMT = "%.16e"
KINDS = ("example1", "example2", "dvh-dump", "lambda-scan", "exponent-probe", "bfgs-run")
REQUIRED = {
    "example1": ("starts",),
    "example2": ("starts_left",),
    "dvh-dump": ("family", "sigmas", "h_grid"),
    "lambda-scan": ("family", "h", "which_weight", "bracket", "other_weights"),
    "exponent-probe": ("target",),
    "bfgs-run": ("objective",),
}
NAMED_FAMILIES = {"single_peak": single_peak, "two_peak": two_peak}


@dataclass
class ExperimentConfig:
    name: str
    kind: str
    parameters: dict
    base_dir: Path = Path(".")
    hash: str = ""

    @classmethod
    def from_dict(cls, doc, base_dir=".") -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("a config is a JSON object")
        unknown = set(doc) - {"name", "kind", "parameters", "description"}
        if unknown:
            raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
        name, kind = doc.get("name"), doc.get("kind")
        if not isinstance(name, str) or not name or any(c in name for c in "/\\"):
            raise ConfigError("'name' must be a non-empty string without path separators")
        if kind not in KINDS:
            raise ConfigError(f"'kind' must be one of {KINDS}, got {kind!r}")
        params = doc.get("parameters", {})
        if not isinstance(params, dict):
            raise ConfigError("'parameters' must be an object")
        missing = [k for k in REQUIRED[kind] if k not in params]
        if missing:
            raise ConfigError(f"{kind} config is missing parameters {missing}")
        canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        cfg = cls(name, kind, params, Path(base_dir), hashlib.sha256(canon.encode()).hexdigest())
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(doc, path.parent)

    @property
    def comment(self) -> str:
        return f"config_hash sha256:{self.hash} name={self.name} kind={self.kind}"

    def validate(self):
        """Build every typed object the run needs, so bad values fail early."""
        try:
            _VALIDATORS[self.kind](self)
        except ConfigError:
            raise
        except (InvalidArgumentError, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid {self.kind} parameters: {exc}") from exc


@dataclass
class RunResult:
    files: list = field(default_factory=list)
    ok: bool = True
    summary: dict = field(default_factory=dict)


# --- parameter parsing ---------------------------------------------------------------


def _family(cfg: ExperimentConfig, spec=None) -> PeakFamily:
    spec = cfg.parameters["family"] if spec is None else spec
    if isinstance(spec, str):
        if spec in NAMED_FAMILIES:
            return NAMED_FAMILIES[spec]()
        path = cfg.base_dir / spec
        if not path.is_file():
            raise ConfigError(f"family file {path} does not exist")
        return PeakFamily.from_json(path.read_text())
    return PeakFamily.from_dict(spec)


def _region(d, default=DEFAULT_REGION) -> Region:
    return default if d is None else Region.from_dict(d)


def _quad(d) -> QuadratureSpec:
    return DEFAULT_QUADRATURE if d is None else QuadratureSpec.from_dict(d)


def _grid(spec) -> np.ndarray:
    """A list of numbers or ``{"lo", "hi", "n"}`` (inclusive linspace)."""
    if isinstance(spec, dict):
        n = int(spec["n"])
        if n < 1:
            raise ConfigError("grid needs n >= 1")
        return np.linspace(float(spec["lo"]), float(spec["hi"]), n)
    arr = np.asarray(spec, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ConfigError("grid must be a non-empty list of numbers")
    return arr


def _floats(values, what) -> list:
    if not isinstance(values, list) or not values:
        raise ConfigError(f"{what} must be a non-empty list of numbers")
    return [float(v) for v in values]


def _objective(cfg: ExperimentConfig) -> ObjectiveSpec:
    doc = dict(cfg.parameters["objective"])
    if not doc.get("terms"):
        raise ConfigError("the objective needs a non-empty constraint list")
    fam = _family(cfg, doc["family"])
    doc["family"] = fam.to_dict()
    return ObjectiveSpec.from_dict(doc)


def _bfgs_starts(cfg: ExperimentConfig, m: int) -> np.ndarray:
    p = cfg.parameters
    if "starts" in p:
        starts = np.asarray(p["starts"], dtype=float)
        if starts.ndim != 2 or starts.shape[1] != m:
            raise ConfigError(f"starts must be a list of length-{m} weight vectors")
        return starts
    rs = p.get("random_starts")
    if not isinstance(rs, dict):
        raise ConfigError("bfgs-run needs 'starts' or 'random_starts' {n, seed, lo, hi}")
    rng = np.random.default_rng(int(rs.get("seed", 0)))
    return rng.uniform(float(rs["lo"]), float(rs["hi"]), size=(int(rs["n"]), m))


def _v_example(cfg):
    _floats(cfg.parameters["starts"] if cfg.kind == "example1" else cfg.parameters["starts_left"], "starts")
    if "sample" in cfg.parameters:
        _grid(cfg.parameters["sample"])
    if cfg.kind == "example2":
        make_f2(float(cfg.parameters.get("alpha_loc", 1.0)))


def _v_dvh(cfg):
    fam = _family(cfg)
    _region(cfg.parameters.get("region"))
    _quad(cfg.parameters.get("quadrature"))
    for s in cfg.parameters["sigmas"]:
        validate_sigma(fam, s)
    h = _grid(cfg.parameters["h_grid"])
    if np.any(h < 0) or np.any(np.diff(h) < 0):
        raise ConfigError("h_grid must be ascending and >= 0")


def _v_lambda(cfg):
    p = cfg.parameters
    fam = _family(cfg)
    lo, hi = _floats(p["bracket"], "bracket")
    if not hi > lo:
        raise ConfigError("bracket must satisfy lo < hi")
    if not 0 <= int(p["which_weight"]) < fam.dimension:
        raise ConfigError("which_weight out of range")
    _region(p.get("region"))
    _region(p.get("search_box"))
    _quad(p.get("quadrature"))


def _v_probe(cfg):
    p = cfg.parameters
    target = p["target"]
    if target in ("f1", "f2"):
        float(p.get("sigma_star", 0.0))
        return
    if target != "volume":
        raise ConfigError("target must be 'f1', 'f2' or 'volume'")
    fam = _family(cfg)
    validate_sigma(fam, p["sigma"])
    if not 0 <= int(p["which_weight"]) < fam.dimension:
        raise ConfigError("which_weight out of range")
    float(p["h"])
    _region(p.get("region"))
    _quad(p.get("quadrature"))


def _v_bfgs(cfg):
    spec = _objective(cfg)
    QuasiNewtonOptions.from_dict(cfg.parameters.get("options", {}))
    for s in _bfgs_starts(cfg, spec.family.dimension):
        validate_sigma(spec.family, s)


_VALIDATORS = {
    "example1": _v_example,
    "example2": _v_example,
    "dvh-dump": _v_dvh,
    "lambda-scan": _v_lambda,
    "exponent-probe": _v_probe,
    "bfgs-run": _v_bfgs,
}


# --- output helpers ----------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return FLOAT_FMT % float(v)


def csv_text(cfg: ExperimentConfig, header, rows) -> str:
    buf = io.StringIO()
    buf.write(f"# {cfg.comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def json_text(cfg: ExperimentConfig, payload: dict) -> str:
    doc = {"config_hash": f"sha256:{cfg.hash}", "name": cfg.name, "kind": cfg.kind}
    doc.update(_jsonable(payload))
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


class _Writer:
    def __init__(self, cfg, out_dir):
        self.cfg = cfg
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.files = []

    def write(self, suffix: str, text: str):
        path = self.out / f"{self.cfg.name}_{suffix}"
        path.write_text(text)
        self.files.append(str(path))

    def trace(self, suffix, trace):
        self.write(suffix, trace.to_csv(comment=self.cfg.comment, fmt=FLOAT_FMT))


def _classify(trace) -> str:
    try:
        return convergence_classify(trace)
    except InsufficientDataError:
        return "converged-at-start" if len(trace) == 1 and trace.termination == "converged" else "undetermined"


def _fit_or_error(fn):
    try:
        return fn().to_dict()
    except (FitFailedError, InsufficientDataError) as exc:
        out = {"error": str(exc)}
        fit = getattr(exc, "fit", None)
        if fit is not None:
            out["fit"] = fit.to_dict()
        return out


# --- runners --------------------------------------------------------------------------------


def _newton_kw(p):
    return {"tol": float(p.get("tol", 1e-14)), "max_iter": int(p.get("max_iter", 100))}


def run_example1(cfg: ExperimentConfig, out_dir) -> RunResult:
    p = cfg.parameters
    obj = make_f1()
    wr = _Writer(cfg, out_dir)
    runs = []
    for k, s0 in enumerate(_floats(p["starts"], "starts")):
        tr = newton1d_run(obj, s0, **_newton_kw(p))
        wr.trace(f"trace_{k}.csv", tr)
        runs.append(
            {
                "start": s0,
                "termination": tr.termination,
                "final": float(tr.final),
                "error": abs(float(tr.final) - obj.minimizer),
                "iterations": len(tr) - 1,
                "classification": _classify(tr),
            }
        )
    grid = _grid(p.get("sample", {"lo": -5.0, "hi": 20.0, "n": 251}))
    wr.write(
        "samples.csv",
        csv_text(cfg, ["sigma", "value", "first", "second"], [(s, obj.value(s), obj.first(s), obj.second(s)) for s in grid]),
    )
    expect = p.get("expect_classification", "quadratic")
    ok = all(r["termination"] == "converged" and r["classification"] in (expect, "converged-at-start") for r in runs)
    summary = {"runs": runs, "expected_classification": expect, "ok": ok}
    wr.write("summary.json", json_text(cfg, summary))
    return RunResult(wr.files, ok, summary)


def run_example2(cfg: ExperimentConfig, out_dir) -> RunResult:
    p = cfg.parameters
    obj = make_f2(float(p.get("alpha_loc", 1.0)))
    wr = _Writer(cfg, out_dir)
    left = _floats(p["starts_left"], "starts_left")
    right = _floats(p.get("starts_right", [0.5]), "starts_right")
    runs = []
    for label, starts in (("left", left), ("right", right)):
        for k, s0 in enumerate(starts):
            tr = newton1d_run(obj, s0, **_newton_kw(p))
            wr.trace(f"trace_{label}_{k}.csv", tr)
            runs.append(
                {
                    "side": label,
                    "start": s0,
                    "termination": tr.termination,
                    "final": float(tr.final),
                    "iterations": len(tr) - 1,
                    "events": [list(e) for e in tr.events],
                    "classification": _classify(tr),
                }
            )
    # the spurious fixed point at 0 and its instability
    fixed = newton1d_run(obj, 0.0, **_newton_kw(p))
    kick = float(p.get("perturbation", 1e-3))
    kicked = newton1d_run(obj, kick, **_newton_kw(p))
    wr.trace("trace_fixed_point.csv", fixed)
    wr.trace("trace_perturbed.csv", kicked)

    grid = _grid(p.get("sample", {"lo": -0.05, "hi": 0.05, "n": 101}))
    rows = []
    for s in grid:
        rows.append((s, obj.value(s), obj.first(s), obj.second(s, "left"), obj.second(s, "right")))
    wr.write("samples.csv", csv_text(cfg, ["sigma", "value", "first", "second_left", "second_right"], rows))

    fit = _fit_or_error(lambda: step_scaling_probe(obj, 0.0, left, side="left", **_newton_kw(p)))
    wr.write("step_scaling.json", json_text(cfg, {"sigma_star": 0.0, "side": "left", "starts": left, "fit": fit}))
    summary = {
        "runs": runs,
        "fixed_point": {"start": 0.0, "termination": fixed.termination, "final": float(fixed.final)},
        "perturbed": {"start": kick, "termination": kicked.termination, "final": float(kicked.final)},
        "step_scaling": fit,
    }
    ok = all(r["termination"] == "converged" for r in runs) and kicked.termination == "converged"
    summary["ok"] = ok
    wr.write("summary.json", json_text(cfg, summary))
    return RunResult(wr.files, ok, summary)


def _single_centered(fam: PeakFamily, region: Region):
    if fam.dimension != 1 or region.kind != "ball":
        return False
    return not np.any(np.asarray(fam.centers[0])) and not np.any(np.asarray(region.center))


def oracle_relative_volume(fam: PeakFamily, sigma, region: Region, h) -> np.ndarray:
    """Exact relative volume for one peak centred in a ball centred at it."""
    h = np.asarray(h, dtype=float)
    w, c = float(np.asarray(sigma, dtype=float)[0]), float(fam.offsets[0])
    with np.errstate(divide="ignore"):
        v = np.where(h > 0, centered_peak_volume(np.where(h > 0, h, 1.0), w, c), np.inf)
    return np.minimum(v / region.exact_volume, 1.0)


def run_dvh_dump(cfg: ExperimentConfig, out_dir) -> RunResult:
    p = cfg.parameters
    fam = _family(cfg)
    region = _region(p.get("region"))
    quad = _quad(p.get("quadrature"))
    h = _grid(p["h_grid"])
    wr = _Writer(cfg, out_dir)
    oracle = _single_centered(fam, region)
    curves = []
    for k, sigma in enumerate(p["sigmas"]):
        s = validate_sigma(fam, sigma)
        curve = dvh_curve(fam, s, region, h, quad)
        extra = {}
        entry = {"sigma": s}
        if oracle:
            ref = oracle_relative_volume(fam, s, region, h)
            extra["oracle"] = ref
            entry["max_oracle_error"] = float(np.max(np.abs(curve.volumes - ref)))
        wr.write(f"dvh_{k}.csv", curve.to_csv(extra, cfg.comment, FLOAT_FMT))
        box = Region.box(*region.bounds())
        cps = find_critical_points(fam, s, box, on_degenerate="skip")
        entry["critical_points"] = [c.to_dict() for c in cps if region.contains(c.location)]
        curves.append(entry)
    summary = {"region": region.to_dict(), "quadrature": quad.to_dict(), "curves": curves, "oracle": oracle}
    wr.write("summary.json", json_text(cfg, summary))
    return RunResult(wr.files, True, summary)


def _probe_rows(side, steps, d2):
    return [(side, s, v) for s, v in zip(steps, d2)]


def _volume_section(fam, base, j, region, h, quad):
    def fn(t):
        s = np.array(base, dtype=float)
        s[j] = t
        return float(volumes_above(fam, s, region, [h], quad)[0])

    return fn


def _one_sided_fits(cfg, fn, t_star, steps, background):
    fits, rows = {}, []
    for side in ("left", "right"):
        try:
            fit, st, d2 = holder_exponent(fn, t_star, side, steps, background=background, return_samples=True)
            fits[side] = fit.to_dict()
            rows += _probe_rows(side, st, d2)
        except (FitFailedError, InsufficientDataError) as exc:
            fits[side] = {"error": str(exc)}
            f = getattr(exc, "fit", None)
            if f is not None:
                fits[side]["fit"] = f.to_dict()
    return fits, rows


def run_lambda_scan(cfg: ExperimentConfig, out_dir) -> RunResult:
    p = cfg.parameters
    fam = _family(cfg)
    h, j = float(p["h"]), int(p["which_weight"])
    region = _region(p.get("region"))
    box = _region(p.get("search_box"), Region.box(*region.bounds()))
    quad = _quad(p.get("quadrature"))
    wr = _Writer(cfg, out_dir)
    lam = locate_lambda_1d(fam, h, j, tuple(p["bracket"]), p["other_weights"], p.get("which"), box)
    t_star = float(lam.sigma[j])
    payload = {"lambda_point": lam.to_dict(), "which_weight": j}
    if p.get("probe", True):
        steps = p.get("probe_steps", list(DEFAULT_PROBE_STEPS))
        fn = _volume_section(fam, lam.sigma, j, region, h, quad)
        fits, rows = _one_sided_fits(cfg, fn, t_star, steps, p.get("background"))
        payload["exponents"] = fits
        wr.write("probe.csv", csv_text(cfg, ["side", "step", "second_difference"], rows))
    wr.write("lambda.json", json_text(cfg, payload))
    return RunResult(wr.files, True, payload)


def run_exponent_probe(cfg: ExperimentConfig, out_dir) -> RunResult:
    p = cfg.parameters
    wr = _Writer(cfg, out_dir)
    steps = p.get("probe_steps", list(DEFAULT_PROBE_STEPS))
    target = p["target"]
    payload = {"target": target}
    if target in ("f1", "f2"):
        obj = make_f1() if target == "f1" else make_f2(float(p.get("alpha_loc", 1.0)))
        t_star = float(p.get("sigma_star", 0.0))
        fits, rows = _one_sided_fits(cfg, obj.value, t_star, steps, p.get("background"))
        payload["sigma_star"] = t_star
    else:
        fam = _family(cfg)
        j = int(p["which_weight"])
        s = validate_sigma(fam, p["sigma"])
        region = _region(p.get("region"))
        fn = _volume_section(fam, s, j, region, float(p["h"]), _quad(p.get("quadrature")))
        fits, rows = _one_sided_fits(cfg, fn, float(s[j]), steps, p.get("background"))
        payload.update({"sigma": s, "which_weight": j, "h": float(p["h"])})
        if p.get("lambda_distance", True):
            payload["lambda_distance"] = lambda_distance(fam, s, float(p["h"]), region)
    payload["exponents"] = fits
    wr.write("probe.csv", csv_text(cfg, ["side", "step", "second_difference"], rows))
    wr.write("exponents.json", json_text(cfg, payload))
    return RunResult(wr.files, True, payload)


def bfgs_problem(spec: ObjectiveSpec, fd_step: float = 1e-3):
    """Objective and gradient callables for :func:`bfgs_run`.

    Points where the finite-difference stencil would leave the parameter
    domain return ``inf``/``nan``, which the line search treats as too long.
    """
    eud_only = spec.eud_only

    def inside(s):
        return np.all(s > (0.0 if eud_only else 2.0 * fd_step))

    def fun(s):
        return objective_value(spec, s) if inside(s) else math.inf

    def grad(s):
        if not inside(s):
            return np.full(len(s), math.nan)
        return objective_grad_eud(spec, s) if eud_only else objective_grad_fd(spec, s, fd_step)

    return fun, grad


def lambda_monitor(spec: ObjectiveSpec):
    """Distance to Lambda over every dose-volume level of the objective."""
    dv = [(r, c.dose_level) for r, c in spec.terms if c.is_dv]

    def monitor(s):
        d = min((lambda_distance(spec.family, s, h, r) for r, h in dv), default=math.inf)
        return {"lambda_distance": d}

    return monitor


def slowdown_flag(distances, band: float = SLOWDOWN_BAND) -> bool:
    return bool(np.min(distances, initial=math.inf) < band)


def run_bfgs(cfg: ExperimentConfig, out_dir) -> RunResult:
    p = cfg.parameters
    spec = _objective(cfg)
    opts = QuasiNewtonOptions.from_dict(p.get("options", {}))
    band = float(p.get("slowdown_band", SLOWDOWN_BAND))
    fun, grad = bfgs_problem(spec, opts.fd_step)
    monitor = None if spec.eud_only else lambda_monitor(spec)
    wr = _Writer(cfg, out_dir)
    runs = []
    for k, s0 in enumerate(_bfgs_starts(cfg, spec.family.dimension)):
        tr = bfgs_run(fun, grad, s0, opts, monitor)
        wr.trace(f"trace_{k}.csv", tr)
        run = {
            "start": s0,
            "termination": tr.termination,
            "final": tr.iterates[-1],
            "value": tr.values[-1],
            "grad_norm": tr.derivative_norms[-1],
            "iterations": len(tr) - 1,
            "classification": _classify(tr),
        }
        if monitor is not None:
            dist = tr.diagnostics["lambda_distance"]
            run["lambda_distance"] = dist
            run["min_lambda_distance"] = float(np.min(dist))
            run["slowdown_flag"] = slowdown_flag(dist, band)
        runs.append(run)
    ok = all(r["termination"] == "converged" for r in runs)
    summary = {"objective": spec.to_dict(), "options": vars(opts), "slowdown_band": band, "runs": runs, "ok": ok}
    wr.write("summary.json", json_text(cfg, summary))
    return RunResult(wr.files, ok, summary)


RUNNERS = {
    "example1": run_example1,
    "example2": run_example2,
    "dvh-dump": run_dvh_dump,
    "lambda-scan": run_lambda_scan,
    "exponent-probe": run_exponent_probe,
    "bfgs-run": run_bfgs,
}


def run(cfg: ExperimentConfig, out_dir) -> RunResult:
    os.makedirs(out_dir, exist_ok=True)
    return RUNNERS[cfg.kind](cfg, out_dir)


__all__ = [
    "ExperimentConfig",
    "RunResult",
    "run",
    "run_example1",
    "run_example2",
    "run_dvh_dump",
    "run_lambda_scan",
    "run_exponent_probe",
    "run_bfgs",
    "bfgs_problem",
    "lambda_monitor",
    "slowdown_flag",
    "oracle_relative_volume",
    "DvhSmoothError",
]
