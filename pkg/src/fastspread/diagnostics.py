"""Per-step diagnostics, event detectors and fits over recorded runs."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields as dc_fields

import numpy as np

from .fields import FULL, integrate, lp_norm, second_moment, spectral_forward, tail_fraction

BLOWUP = "BlowUp"
QUENCH = "Quench"
DOMAIN_OVERFLOW = "DomainOverflow"
BOOTSTRAP_VIOLATION = "BootstrapViolation"
TERMINAL_KINDS = (BLOWUP, DOMAIN_OVERFLOW)

CSV_COLUMNS = (
    "step", "t_original", "t_rescaled", "dt", "mass", "l2", "linf",
    "second_moment", "min_value", "tail_fraction",
)


class FitError(ValueError):
    pass


class ConsistencyError(RuntimeError):
    pass


@dataclass
class DiagRecord:
    step: int
    t_original: float
    t_rescaled: float
    dt: float
    mass: float
    l2: float
    linf: float
    second_moment: float
    min_value: float
    tail_fraction: float


@dataclass
class EventRecord:
    kind: str
    t: float
    detail: str = ""

    @property
    def terminal(self):
        return self.kind in TERMINAL_KINDS


def make_record(step, t_original, t_rescaled, dt, f, band=1.0):
    vals = f.values
    finite = bool(np.isfinite(vals).all())
    m2 = second_moment(f) if (f.grid.topology == FULL and finite) else math.nan
    tail = tail_fraction(spectral_forward(f), band) if finite else math.nan
    return DiagRecord(
        step=int(step),
        t_original=float(t_original),
        t_rescaled=float(t_rescaled),
        dt=float(dt),
        mass=integrate(f),
        l2=lp_norm(f, 2),
        linf=lp_norm(f, np.inf),
        second_moment=m2,
        min_value=float(vals.min()),
        tail_fraction=tail,
    )


def write_records_csv(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([r.step] + [repr(float(getattr(r, c))) for c in CSV_COLUMNS[1:]])


def read_records_csv(path):
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            kw = {c: float(row[c]) for c in CSV_COLUMNS[1:]}
            out.append(DiagRecord(step=int(row["step"]), **kw))
    return out


def _to_jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    if isinstance(x, dict):
        return {k: _to_jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_to_jsonable(v) for v in x]
    if isinstance(x, (np.floating, np.integer)):
        return _to_jsonable(x.item())
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def write_report_json(path, report):
    with open(path, "w") as fh:
        json.dump(_to_jsonable(report), fh, indent=2, sort_keys=True)
        fh.write("\n")


def event_to_dict(e):
    return {"kind": e.kind, "t": e.t, "detail": e.detail}


# event detectors -----------------------------------------------------------


def blowup_detect(records, linf_factor=1e4, tail_limit=0.1):
    """First record whose peak exploded or whose spectrum lost resolution."""
    if not records:
        return None
    base = records[0].linf
    for r in records:
        if not (math.isfinite(r.linf) and math.isfinite(r.tail_fraction)):
            return EventRecord(BLOWUP, r.t_original, "non-finite values")
        if base > 0 and r.linf > linf_factor * base:
            return EventRecord(BLOWUP, r.t_original, f"linf {r.linf:.6g} > {linf_factor:g} x initial")
        if r.tail_fraction > tail_limit:
            return EventRecord(BLOWUP, r.t_original, f"tail fraction {r.tail_fraction:.3g} > {tail_limit:g}")
    return None


def quench_detect(records, alpha, tol=1e-8):
    """First time the peak falls below ``alpha``.

    After that time the reaction is off everywhere, so the peak may not grow;
    an increase larger than ``tol`` raises :class:`ConsistencyError`.
    """
    for i, r in enumerate(records):
        if r.linf < alpha:
            prev = r.linf
            for later in records[i + 1:]:
                if later.linf > prev + tol:
                    raise ConsistencyError(
                        f"peak rose from {prev:.12g} to {later.linf:.12g} at t={later.t_original:g} after quench"
                    )
                prev = later.linf
            return EventRecord(QUENCH, r.t_original, f"linf {r.linf:.6g} < alpha {alpha:g}")
    return None


# fits ------------------------------------------------------------------------


def virial_prediction(mass):
    return 4 * mass - mass**2 / (2 * math.pi)


def virial_slope(records, window):
    """Least-squares slope of the second moment against original time."""
    t0, t1 = window
    pts = [(r.t_original, r.second_moment) for r in records if t0 <= r.t_original <= t1]
    pts = [(t, m) for t, m in pts if math.isfinite(m)]
    if len(pts) < 3:
        raise FitError(f"need at least 3 records in window, got {len(pts)}")
    t, m = np.array(pts).T
    return float(np.polyfit(t, m, 1)[0])


def decay_fit(records, t_min, t_max, quantity="l2"):
    """Slope of log(quantity) against log(t_original) over ``[t_min, t_max]``."""
    if quantity not in ("l2", "linf"):
        raise FitError(f"unknown quantity {quantity!r}")
    pts = [(r.t_original, getattr(r, quantity)) for r in records if t_min <= r.t_original <= t_max]
    if len(pts) < 2:
        raise FitError("need at least 2 records in range")
    t, q = np.array(pts).T
    if (q <= 0).any() or (t <= 0).any():
        raise FitError("non-positive values in fit range")
    if t.max() / t.min() < 10 * (1 - 1e-9):
        raise FitError("fit range must span one decade of time")
    return float(np.polyfit(np.log(t), np.log(q), 1)[0])


# bootstrap monitor --------------------------------------------------------------


@dataclass
class BootstrapSpec:
    B: float
    amplitude: float

    @property
    def window(self):
        return 10 * math.log(self.amplitude)

    def __post_init__(self):
        if not self.B > 0:
            raise ValueError("B must be positive")


@dataclass
class WindowResult:
    index: int
    start: float
    end: float
    sup_l2: float
    end_l2: float
    bound_ok: bool
    end_ok: bool

    @property
    def passed(self):
        return self.bound_ok and self.end_ok


@dataclass
class BootstrapReport:
    enabled: bool
    windows: list = field(default_factory=list)
    violation: EventRecord = None

    @property
    def passed(self):
        return self.violation is None

    def to_dict(self):
        return {
            "enabled": self.enabled,
            "passed": self.passed,
            "windows": [asdict(w) | {"passed": w.passed} for w in self.windows],
            "violation": None if self.violation is None else event_to_dict(self.violation),
        }


def _l2_at(records, t):
    ts = np.array([r.t_rescaled for r in records])
    ls = np.array([r.l2 for r in records])
    return float(np.interp(t, ts, ls))


def bootstrap_monitor(records, spec):
    """Check the two window conditions on a run recorded in rescaled time.

    For each complete window ``[kW, (k+1)W]`` with ``W = 10 log A``: the
    largest l2 in the window is at most ``2B``, and l2 at the window end is
    at most ``B``.  Window-end values between records are linearly
    interpolated.  Disabled (vacuously passing) for ``A <= 1``.
    """
    if spec.amplitude <= 1 or not records:
        return BootstrapReport(False)
    W = spec.window
    t_last = records[-1].t_rescaled
    report = BootstrapReport(True)
    k = 0
    while (k + 1) * W <= t_last * (1 + 1e-12):
        a, b = k * W, (k + 1) * W
        inside = [r.l2 for r in records if a <= r.t_rescaled <= b]
        end_l2 = _l2_at(records, b)
        sup_l2 = max(inside + [_l2_at(records, a), end_l2])
        w = WindowResult(k, a, b, sup_l2, end_l2, sup_l2 <= 2 * spec.B, end_l2 <= spec.B)
        report.windows.append(w)
        if not w.passed and report.violation is None:
            which = "sup l2 > 2B" if not w.bound_ok else "window-end l2 > B"
            report.violation = EventRecord(BOOTSTRAP_VIOLATION, b / spec.amplitude, f"window {k}: {which}")
        k += 1
    return report


def comparison_check(nonlinear_fields, passive_fields, beta, A, times):
    """Largest value of ``n - exp(beta t / A) rho`` over snapshot pairs.

    ``times`` are rescaled times of the snapshots; the two field lists are
    aligned with it.
    """
    worst = -math.inf
    for n, rho, t in zip(nonlinear_fields, passive_fields, times):
        if n.grid != rho.grid:
            raise ValueError("comparison needs snapshots on identical grids")
        bound = math.exp(beta * t / A) * rho.values
        worst = max(worst, float((n.values - bound).max()))
    return worst


def mass_in_ball(f, radius):
    """Mass inside ``|x| < radius`` and whether the ball fits in the box."""
    inside = f.grid.radius2() < radius**2
    fits = radius <= min(f.grid.half_length)
    return float(f.grid.cell_volume * f.values[np.broadcast_to(inside, f.grid.shape)].sum()), fits


def records_to_dicts(records):
    names = [f.name for f in dc_fields(DiagRecord)]
    return [{k: getattr(r, k) for k in names} for r in records]
