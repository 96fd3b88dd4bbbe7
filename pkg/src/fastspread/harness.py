"""Experiment configuration, amplitude threshold searches and report files.

A configuration is one JSON document with the sections ``experiment``,
``grid``, ``flow``, ``model``, ``frame``, ``time``, ``initial``, ``search``
and ``output``.  :func:`parse_config` validates it into an
:class:`ExperimentSpec`; :func:`run_experiment` executes the recipe named by
``experiment.kind`` and writes CSV diagnostics plus a JSON summary.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import diagnostics as dg
from .evolve import (
    ORIGINAL,
    PKS,
    RESCALED,
    LinearStepper,
    ModelSpec,
    SimConfig,
    run,
)
from .fields import (
    FULL,
    GridSpec,
    ParameterError,
    integrate,
    lp_norm,
    sample_gaussian,
    sample_plateau,
)
from .kernels import (
    HYPERBOLIC,
    NONE,
    SHEAR,
    FlowSpec,
    apply_kernel,
    dissipation_time,
    dissipation_time_closed_form,
    hyperbolic_dissipation_numeric,
    kernel_normalization,
    linf_envelope,
)

SIMULATE = "Simulate"
SUPPRESSION = "SuppressionThreshold"
QUENCH_SEARCH = "QuenchThreshold"
DECAY_FIT = "DecayFit3D"
SHEAR_SCALING = "ShearScaling"
DISSIPATION_CURVE = "DissipationCurve"
KERNEL_CHECK = "KernelCheck"

#: experiment kind -> allowed extra keys in the ``experiment`` section
EXPERIMENT_PARAMS = {
    SIMULATE: {},
    SUPPRESSION: {},
    QUENCH_SEARCH: {},
    DECAY_FIT: {"fit_tmin": None, "fit_tmax": None, "quantity": "l2"},
    SHEAR_SCALING: {"amplitudes": (32.0, 64.0, 128.0), "t": 1.0, "dt": 1e-3},
    DISSIPATION_CURVE: {"amplitudes": (10.0, 100.0, 1000.0), "numeric": True},
    KERNEL_CHECK: {"times": (0.25, 0.5, 1.0, 2.0), "amplitudes": (1.0, 2 * math.pi, 50.0)},
}

DECAY_STRICT_WINDOW = (-0.7, -0.35)


class ConfigError(ValueError):
    """Schema violation; the message starts with the offending key path."""


class BracketError(ValueError):
    """The search bracket does not straddle the threshold."""


class UsageError(ValueError):
    pass


# configuration -------------------------------------------------------------


@dataclass(frozen=True)
class SearchSpec:
    A_lo: float
    A_hi: float
    tolerance_rel: float = 0.1
    max_iters: int = 20

    def __post_init__(self):
        if not self.A_lo >= 0:
            raise ParameterError("A_lo must be non-negative")
        if not self.A_lo < self.A_hi:
            raise ParameterError("A_lo must be smaller than A_hi")
        if not 0 < self.tolerance_rel < 0.5:
            raise ParameterError("tolerance_rel must lie in (0, 0.5)")
        if self.max_iters < 1:
            raise ParameterError("max_iters must be >= 1")


@dataclass(frozen=True)
class InitialSpec:
    """Initial datum: a Gaussian or a flat-topped plateau, centred at 0."""

    kind: str = "gaussian"
    mass: float = 1.0
    sigma: float = 1.0
    radius: float = 1.0
    width: float = 0.5
    height: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "plateau"):
            raise ParameterError(f"unknown initial kind {self.kind!r}")

    def build(self, grid):
        if self.kind == "gaussian":
            return sample_gaussian(grid, sigma=self.sigma, mass=self.mass)
        return sample_plateau(grid, self.radius, self.width, self.height)


@dataclass(frozen=True)
class OutputSpec:
    dir: str = "out"
    snapshots: bool = False


@dataclass(frozen=True, eq=False)
class ExperimentSpec:
    kind: str
    config: SimConfig
    initial: InitialSpec = InitialSpec()
    search: SearchSpec = None
    output: OutputSpec = OutputSpec()
    params: dict = field(default_factory=dict)
    source: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in EXPERIMENT_PARAMS:
            raise UsageError(f"unknown experiment kind {self.kind!r}")
        if self.kind in (SUPPRESSION, QUENCH_SEARCH) and self.search is None:
            raise ParameterError(f"{self.kind} needs a search section")
        if self.kind in (SUPPRESSION, QUENCH_SEARCH) and self.config.frame != ORIGINAL:
            # runs at different amplitudes share one clock only in original time
            raise ParameterError("threshold searches need frame 'original'")

    @property
    def config_hash(self):
        return config_hash(self.source)


def config_hash(doc):
    text = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


_SECTIONS = ("experiment", "grid", "flow", "model", "frame", "time", "initial", "search", "output")
_GRID_KEYS = {"dim", "n", "half_length", "topology"}
_FLOW_KEYS = {"kind", "amplitude", "profile"}
_MODEL_KEYS = {"kind", "alpha"}
_TIME_KEYS = {
    "t_end", "dt_max", "c_stab", "dealias", "record_every", "snapshot_times", "mark_times",
    "fixed_dt", "adaptive_box", "max_refine", "blowup_linf_factor", "blowup_tail_limit",
}
_INITIAL_KEYS = {"kind", "mass", "sigma", "radius", "width", "height"}
_SEARCH_KEYS = {"A_lo", "A_hi", "tolerance_rel", "max_iters"}
_OUTPUT_KEYS = {"dir", "snapshots"}


def _section(doc, name, allowed, required=()):
    sec = doc.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"{name}: expected an object")
    for key in sec:
        if key not in allowed:
            raise ConfigError(f"{name}.{key}: unknown key")
    for key in required:
        if key not in sec:
            raise ConfigError(f"{name}.{key}: required")
    return sec


def _build(path, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (ParameterError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from exc


def _tuple(v):
    return tuple(v) if isinstance(v, (list, tuple)) else v


def parse_config(source):
    """Validate a JSON path, JSON text or already-loaded dict into a spec."""
    if isinstance(source, dict):
        doc = source
    else:
        text = str(source)
        try:
            if not text.lstrip().startswith("{"):
                with open(text) as fh:
                    text = fh.read()
            doc = json.loads(text)
        except OSError as exc:
            raise ConfigError(f"<file>: cannot read {source}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"<root>: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError("<root>: expected an object")
    for key in doc:
        if key not in _SECTIONS:
            raise ConfigError(f"{key}: unknown section")

    exp = doc.get("experiment", {})
    if not isinstance(exp, dict):
        raise ConfigError("experiment: expected an object")
    kind = exp.get("kind", SIMULATE)
    if kind not in EXPERIMENT_PARAMS:
        raise ConfigError(f"experiment.kind: unknown kind {kind!r}")
    defaults = EXPERIMENT_PARAMS[kind]
    exp = _section(doc, "experiment", {"kind"} | set(defaults))
    params = {k: _tuple(exp.get(k, v)) for k, v in defaults.items()}

    g = _section(doc, "grid", _GRID_KEYS, ("dim", "n", "half_length"))
    grid = _build(
        "grid", GridSpec, g["dim"], _tuple(g["n"]), _tuple(g["half_length"]), g.get("topology", FULL)
    )

    fl = _section(doc, "flow", _FLOW_KEYS)
    flow = _build(
        "flow", FlowSpec, fl.get("kind", NONE), float(fl.get("amplitude", 0.0)), grid.dim, fl.get("profile")
    )

    m = _section(doc, "model", _MODEL_KEYS, ("kind",))
    if "alpha" in m:
        a = m["alpha"]
        if not isinstance(a, (int, float)) or not 0 < a < 1:
            raise ConfigError("model.alpha: must lie in (0, 1)")
    model = _build("model", ModelSpec, m["kind"], m.get("alpha"))

    frame = doc.get("frame", ORIGINAL)
    if frame not in (ORIGINAL, RESCALED):
        raise ConfigError(f"frame: unknown frame {frame!r}")

    tm = _section(doc, "time", _TIME_KEYS, ("t_end",))
    kwargs = {k: _tuple(v) for k, v in tm.items()}
    config = _build("time", SimConfig, grid=grid, flow=flow, model=model, frame=frame, **kwargs)

    ini = _section(doc, "initial", _INITIAL_KEYS)
    initial = _build("initial", InitialSpec, **ini)

    search = None
    if "search" in doc:
        s = _section(doc, "search", _SEARCH_KEYS, ("A_lo", "A_hi"))
        search = _build("search", SearchSpec, **s)

    out = _section(doc, "output", _OUTPUT_KEYS)
    output = _build("output", OutputSpec, **out)
    return _build(
        "experiment", ExperimentSpec, kind, config, initial, search, output, params, doc
    )


# threshold search --------------------------------------------------------------


@dataclass
class Verdict:
    amplitude: float
    passed: bool
    reason: str
    t_reached: float
    sup_l2: float
    final_l2: float
    events: list = field(default_factory=list)

    def to_dict(self):
        return {
            "amplitude": self.amplitude,
            "passed": self.passed,
            "reason": self.reason,
            "t_reached": self.t_reached,
            "sup_l2": self.sup_l2,
            "final_l2": self.final_l2,
            "events": [dg.event_to_dict(e) for e in self.events],
        }


@dataclass
class SearchResult:
    A0_estimate: float
    bracket: tuple
    verdicts: list
    converged: bool
    monotone: bool

    def to_dict(self):
        return {
            "A0_estimate": self.A0_estimate,
            "bracket": list(self.bracket),
            "converged": self.converged,
            "monotone": self.monotone,
            "verdicts": [v.to_dict() for v in self.verdicts],
        }


def suppression_verdict(traj, l2_initial):
    """No blow-up or overflow up to ``t_end`` and a final l2 at most the initial one."""
    recs = traj.records
    last = recs[-1]
    sup_l2 = max(r.l2 for r in recs)
    term = traj.terminal_event
    t_end = traj.config.t_end / (traj.config.flow.amplitude if traj.config.frame == RESCALED else 1.0)
    if term is not None:
        ok, why = False, f"{term.kind} at t={term.t:.6g}: {term.detail}"
    elif last.t_original < t_end * (1 - 1e-9):
        ok, why = False, f"stopped at t={last.t_original:.6g}"
    elif not last.l2 <= l2_initial:
        ok, why = False, f"final l2 {last.l2:.6g} > initial {l2_initial:.6g}"
    else:
        ok, why = True, "no blow-up within horizon"
    return ok, why, last.t_original, sup_l2, last.l2


def quench_verdict(traj, alpha):
    """Quench observed before ``t_end``; anything else counts as not quenched."""
    recs = traj.records
    last = recs[-1]
    sup_l2 = max(r.l2 for r in recs)
    ev = next((e for e in traj.events if e.kind == dg.QUENCH), None)
    if ev is not None:
        return True, f"quenched at t={ev.t:.6g}", last.t_original, sup_l2, last.l2
    term = traj.terminal_event
    if term is not None:
        why = f"no quench before {term.kind} at t={term.t:.6g}: {term.detail}"
    else:
        why = "no quench within horizon"
    return False, why, last.t_original, sup_l2, last.l2


class AmplitudeProbe:
    """Runs one amplitude of a search and remembers every trajectory."""

    def __init__(self, spec, keep=False):
        self.spec = spec
        self.initial = spec.initial.build(spec.config.grid)
        self.l2_initial = lp_norm(self.initial, 2)
        self.keep = keep
        self.trajectories = {}

    def config_at(self, A):
        cfg = self.spec.config.with_amplitude(A)
        if self.spec.kind == QUENCH_SEARCH:
            cfg = replace(cfg, stop_on=tuple(cfg.stop_on) + (dg.QUENCH,))
        return cfg

    def __call__(self, A):
        traj = run(self.config_at(A), self.initial)
        if self.keep:
            self.trajectories[A] = traj
        if self.spec.kind == QUENCH_SEARCH:
            parts = quench_verdict(traj, self.spec.config.model.alpha)
        else:
            parts = suppression_verdict(traj, self.l2_initial)
        ok, why, t_reached, sup_l2, final_l2 = parts
        return Verdict(float(A), ok, why, t_reached, sup_l2, final_l2, list(traj.events))


def threshold_search(spec, probe=None):
    """Bisection on the amplitude for the smallest passing value.

    ``A_lo`` must fail and ``A_hi`` pass; when ``A_lo`` already passes the
    estimate is ``A_lo`` itself.  Bisection stops once the bracket width is at
    most ``tolerance_rel`` times the estimate (the bracket midpoint).
    """
    s = spec.search
    if s is None:
        raise UsageError("threshold search needs a search section")
    probe = probe or AmplitudeProbe(spec)
    verdicts = []

    def test(A):
        v = probe(A)
        verdicts.append(v)
        return v.passed

    if test(s.A_lo):
        return SearchResult(s.A_lo, (s.A_lo, s.A_lo), verdicts, True, True)
    if not test(s.A_hi):
        raise BracketError(
            f"predicate fails at A_hi={s.A_hi:g} ({verdicts[-1].reason}); bracket does not contain the threshold"
        )
    lo, hi = s.A_lo, s.A_hi
    iters = 0
    while hi - lo > s.tolerance_rel * 0.5 * (lo + hi) and iters < s.max_iters:
        mid = 0.5 * (lo + hi)
        if test(mid):
            hi = mid
        else:
            lo = mid
        iters += 1
    converged = hi - lo <= s.tolerance_rel * 0.5 * (lo + hi)
    return SearchResult(0.5 * (lo + hi), (lo, hi), verdicts, converged, _monotone(verdicts))


def _monotone(verdicts):
    ordered = sorted(verdicts, key=lambda v: v.amplitude)
    seen_pass = False
    for v in ordered:
        if v.passed:
            seen_pass = True
        elif seen_pass:
            return False
    return True


# experiments -------------------------------------------------------------------


def _fmt_amp(A):
    return f"{A:.6g}".replace(".", "p")


def _base_report(spec):
    return {"kind": spec.kind, "config_hash": spec.config_hash}


def _simulate(spec, out):
    cfg = spec.config
    if spec.output.snapshots:
        snap_dir = os.path.join(out, "snapshots")
        os.makedirs(snap_dir, exist_ok=True)
        cfg = replace(cfg, snapshot_dir=snap_dir)
    initial = spec.initial.build(cfg.grid)
    traj = run(cfg, initial)
    dg.write_records_csv(os.path.join(out, "records.csv"), traj.records)
    last = traj.records[-1]
    report = {
        "events": [dg.event_to_dict(e) for e in traj.events],
        "monitor_worst": traj.monitor_worst,
        "t_reached": last.t_original,
        "initial": dg.records_to_dicts(traj.records[:1])[0],
        "final": dg.records_to_dicts([last])[0],
        "final_grid": traj.final.field.grid.to_json(),
    }
    if cfg.flow.kind == HYPERBOLIC and cfg.flow.amplitude > 1 and cfg.model.kind == PKS:
        boot = dg.bootstrap_monitor(traj.records, dg.BootstrapSpec(traj.records[0].l2, cfg.flow.amplitude))
        report["bootstrap"] = boot.to_dict()
    return report, traj


def _search(spec, out):
    probe = AmplitudeProbe(spec, keep=True)
    result = threshold_search(spec, probe)
    worst = 0.0
    for A, traj in sorted(probe.trajectories.items()):
        dg.write_records_csv(os.path.join(out, f"records_A{_fmt_amp(A)}.csv"), traj.records)
        worst = max(worst, traj.monitor_worst)
    report = {"search": result.to_dict(), "monitor_worst": worst}
    A_hi = result.bracket[1]
    traj = probe.trajectories.get(A_hi)
    if spec.kind == SUPPRESSION and traj is not None and A_hi > 1:
        l2_0 = traj.records[0].l2
        boot = dg.bootstrap_monitor(traj.records, dg.BootstrapSpec(l2_0, A_hi))
        report["at_A_hi"] = {
            "amplitude": A_hi,
            "sup_l2_over_initial": max(r.l2 for r in traj.records) / l2_0,
            "bootstrap": boot.to_dict(),
        }
    if spec.kind == QUENCH_SEARCH and traj is not None:
        report["at_A_hi"] = {"amplitude": A_hi, "quench": _quench_summary(traj, spec.config.model.alpha)}
    return report, probe


def _quench_summary(traj, alpha):
    try:
        ev = dg.quench_detect(traj.records, alpha)
    except dg.ConsistencyError as exc:
        return {"consistent": False, "detail": str(exc)}
    return {"consistent": True, "event": None if ev is None else dg.event_to_dict(ev)}


def decay_exponent_report(records, t_min, t_max, quantity="l2"):
    slope = dg.decay_fit(records, t_min, t_max, quantity)
    lo, hi = DECAY_STRICT_WINDOW
    return {
        "exponent": slope,
        "fit_range": [t_min, t_max],
        "quantity": quantity,
        "bound_ok": slope <= hi,
        "within_strict_window": lo <= slope <= hi,
    }


def _decay(spec, out):
    cfg = spec.config
    p = spec.params
    if p["fit_tmin"] is None or p["fit_tmax"] is None:
        raise UsageError("DecayFit3D needs experiment.fit_tmin and experiment.fit_tmax")
    t_min, t_max = float(p["fit_tmin"]), float(p["fit_tmax"])
    ball_times = tuple(float(t) for t in np.geomspace(t_min, t_max, 5))
    cfg = replace(cfg, snapshot_times=tuple(sorted(set(cfg.snapshot_times) | set(ball_times))))
    initial = spec.initial.build(cfg.grid)
    traj = run(cfg, initial)
    dg.write_records_csv(os.path.join(out, "records.csv"), traj.records)
    report = {
        "events": [dg.event_to_dict(e) for e in traj.events],
        "monitor_worst": traj.monitor_worst,
        "fit": decay_exponent_report(traj.records, t_min, t_max, p["quantity"]),
    }
    balls = []
    for t in ball_times:
        try:
            f = traj.snapshot_at(t)
        except KeyError:
            continue
        mass, fits = dg.mass_in_ball(f, t**0.25)
        balls.append({"t": t, "radius": t**0.25, "mass": mass, "bound": t**-0.125,
                      "truncated": not fits})
    report["mass_in_ball"] = balls
    return report, traj


def shear_peak_ratio(grid, profile, A, initial, t=1.0, dt=1e-3):
    """``||rho(t)||_inf * A / ||rho_0||_1`` for a passive scalar in a shear flow."""
    flow = FlowSpec(SHEAR, float(A), grid.dim, profile)
    rho = LinearStepper(grid, flow, kappa=1.0, rate=float(A)).evolve(initial, t, dt)
    return float(np.abs(rho.values).max()) * A / integrate(initial)


def _shear_scaling(spec, out):
    cfg = spec.config
    p = spec.params
    grid = cfg.grid
    initial = spec.initial.build(grid)
    profile = cfg.flow.profile
    rows = []
    for A in p["amplitudes"]:
        r = shear_peak_ratio(grid, profile, float(A), initial, p["t"], p["dt"])
        rows.append({"amplitude": float(A), "ratio": r})
    rs = [row["ratio"] for row in rows]
    pairs = []
    for a, b in zip(rows, rows[1:]):
        pairs.append({
            "amplitudes": [a["amplitude"], b["amplitude"]],
            "peak_ratio": (b["ratio"] / b["amplitude"]) / (a["ratio"] / a["amplitude"]),
        })
    report = {
        "profile": profile if isinstance(profile, str) else "custom",
        "t": p["t"],
        "rows": rows,
        "variation": max(rs) / min(rs) - 1.0,
        "consecutive_peak_ratios": pairs,
    }
    _write_rows(os.path.join(out, "shear_scaling.csv"), ("amplitude", "ratio"), rows)
    return report, None


def _dissipation(spec, out):
    cfg = spec.config
    p = spec.params
    rows = []
    for A in p["amplitudes"]:
        A = float(A)
        flow = cfg.flow.with_amplitude(A)
        if flow.kind == HYPERBOLIC:
            row = {"amplitude": A, "closed_form": dissipation_time_closed_form(A, cfg.grid.dim)}
            if p["numeric"]:
                num = hyperbolic_dissipation_numeric(A, cfg.grid).tau
                row["numeric"] = num
                row["rel_gap"] = abs(num - row["closed_form"]) / row["closed_form"]
        else:
            row = {"amplitude": A, "numeric": dissipation_time(flow, cfg.grid).tau}
        rows.append(row)
    key = "closed_form" if "closed_form" in rows[0] else "numeric"
    taus = [r[key] for r in rows]
    report = {
        "rows": rows,
        "strictly_decreasing": all(b < a for a, b in zip(taus, taus[1:])),
    }
    cols = tuple(rows[0].keys())
    _write_rows(os.path.join(out, "dissipation.csv"), cols, rows)
    return report, None


def kernel_check_rows(times, amplitudes, grid=None, dim=2):
    """Normalization, envelope and semigroup defects on a small grid.

    * normalization: largest ``|integral - 1|`` over both kernel arguments,
      by adaptive cubature, at a generic point;
    * envelope: ``||S_t f||_inf / (envelope * ||f||_1)`` for a unit Gaussian;
    * semigroup: relative Linf gap between ``S_t f`` and ``S_{t/2} S_{t/2} f``.
    """
    grid = grid or GridSpec(dim, 256, 12.0)
    dim = grid.dim
    point = (0.3, -0.7, 0.2)[-dim:]
    f = sample_gaussian(grid, sigma=1.0)
    m1 = integrate(f)
    rows = []
    for t in times:
        for A in amplitudes:
            norm_err = max(abs(kernel_normalization(t, A, dim, point, over) - 1.0)
                           for over in ("source", "target"))
            full = apply_kernel(f, t, A)
            half = apply_kernel(apply_kernel(f, t / 2, A), t / 2, A)
            rows.append({
                "t": float(t),
                "A": float(A),
                "normalization_error": norm_err,
                "envelope_ratio": float(full.values.max()) / (linf_envelope(t, A, dim) * m1),
                "semigroup_error": float(np.abs(full.values - half.values).max() / np.abs(full.values).max()),
            })
    return rows


KERNEL_CHECK_COLUMNS = ("t", "A", "normalization_error", "envelope_ratio", "semigroup_error")


def _kernel_check(spec, out):
    p = spec.params
    rows = kernel_check_rows(p["times"], p["amplitudes"], spec.config.grid)
    _write_rows(os.path.join(out, "kernel_check.csv"), KERNEL_CHECK_COLUMNS, rows)
    return {
        "rows": rows,
        "max_normalization_error": max(r["normalization_error"] for r in rows),
        "max_envelope_ratio": max(r["envelope_ratio"] for r in rows),
    }, None


def _write_rows(path, columns, rows):
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for r in rows:
            fh.write(",".join(repr(float(r[c])) for c in columns) + "\n")


_RECIPES = {
    SIMULATE: _simulate,
    SUPPRESSION: _search,
    QUENCH_SEARCH: _search,
    DECAY_FIT: _decay,
    SHEAR_SCALING: _shear_scaling,
    DISSIPATION_CURVE: _dissipation,
    KERNEL_CHECK: _kernel_check,
}


def run_experiment(spec, out_dir=None):
    """Execute ``spec`` and write ``summary.json`` plus CSV files into ``out_dir``.

    Returns the summary dict.  Every summary carries the configuration hash
    and, for recipes that integrate in time, the boundary-monitor worst case.
    """
    recipe = _RECIPES.get(spec.kind)
    if recipe is None:
        raise UsageError(f"unknown experiment kind {spec.kind!r}")
    out = out_dir or spec.output.dir
    os.makedirs(out, exist_ok=True)
    body, _ = recipe(spec, out)
    report = _base_report(spec) | body
    report.setdefault("monitor_worst", None)
    dg.write_report_json(os.path.join(out, "summary.json"), report)
    return report
