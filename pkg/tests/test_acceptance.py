"""Acceptance suite: one PASS/FAIL line per criterion, printed in the summary.

Expected values are closed forms or independent references; tolerances are
the ones fixed for each criterion.  Two sub-claims that cannot hold at the
prescribed settings are strict xfails (see the decisions ledger).
"""
import math
import time

import numpy as np
import pytest
from scipy.optimize import brentq

from fastspread import diagnostics as dg
from fastspread import harness as hs
from fastspread.evolve import IGNITION, PASSIVE, PKS, ModelSpec, SimConfig, run
from fastspread.fields import GridSpec, ScalarField, integrate, lp_norm, sample_gaussian, sample_plateau
from fastspread.harness import shear_peak_ratio
from fastspread.kernels import (
    FlowSpec,
    apply_kernel,
    dissipation_time_closed_form,
    hyperbolic_dissipation_numeric,
    kernel_normalization,
    linf_envelope,
)
from fastspread.oracle import fd_run, shear_factorization_check

EIGHT_PI = 8 * math.pi
ALPHA = 0.25


# 1-4: kernel identities and the solver against the kernel ------------------------


def test_c1_kernel_normalization(criterion):
    t0 = time.perf_counter()
    worst = {2: 0.0, 3: 0.0}
    for dim in (2, 3):
        point = (0.3, -0.7, 0.2)[-dim:]
        for t in (0.25, 0.5, 1.0, 2.0):
            for A in (1.0, 2 * math.pi, 50.0):
                for over in ("source", "target"):
                    err = abs(kernel_normalization(t, A, dim, point, over) - 1)
                    worst[dim] = max(worst[dim], err)
    el = time.perf_counter() - t0
    ok = worst[2] < 1e-8 and worst[3] < 1e-6 and el < 30
    criterion("1 kernel normalization", ok,
              f"2D worst {worst[2]:.2e} (<1e-8), 3D worst {worst[3]:.2e} (<1e-6), {el:.1f}s (<30s)")


def test_c2_semigroup(criterion):
    t0 = time.perf_counter()
    g = GridSpec(2, 256, 12.0)
    f = sample_gaussian(g, sigma=1.0)
    worst = 0.0
    for s, t in ((0.25, 0.25), (0.5, 1.0)):
        for A in (1.0, 10.0):
            one = apply_kernel(f, s + t, A)
            two = apply_kernel(apply_kernel(f, s, A), t, A)
            worst = max(worst, float(np.abs(two.values - one.values).max() / np.abs(one.values).max()))
    el = time.perf_counter() - t0
    criterion("2 semigroup", worst < 1e-6 and el < 30, f"worst relative Linf defect {worst:.2e} (<1e-6), {el:.1f}s (<30s)")


def test_c3_envelope(criterion):
    rng = np.random.default_rng(20240611)
    worst = 0.0
    g2 = GridSpec(2, 256, 6.0)
    for _ in range(20):
        f = ScalarField(g2, rng.random(g2.shape))
        m1 = integrate(f)
        for t in (0.5, 1.0, 2.0):
            for A in (1.0, 10.0):
                out = apply_kernel(f, t, A)
                worst = max(worst, float(out.values.max()) / (linf_envelope(t, A, 2) * m1))
    worst3 = 0.0
    g3 = GridSpec(3, 64, 4.0)
    for _ in range(3):
        f = ScalarField(g3, rng.random(g3.shape))
        m1 = integrate(f)
        for t in (0.5, 1.0, 2.0):
            for A in (1.0, 10.0):
                out = apply_kernel(f, t, A)
                worst3 = max(worst3, float(out.values.max()) / (linf_envelope(t, A, 3) * m1))
    bound = 1 + 1e-9
    criterion("3 envelope", worst <= bound and worst3 <= bound,
              f"max ||S f||_inf / (envelope ||f||_1): 2D {worst:.3e}, 3D {worst3:.3e} (<=1+1e-9)")


def test_c4_solver_matches_kernel(criterion):
    t0 = time.perf_counter()
    g = GridSpec(2, 256, 20.0)
    f = sample_gaussian(g, sigma=0.5, mass=1.0)
    parts, ok = [], True
    for A in (1.0, 10.0):
        exact = apply_kernel(f, 1.0, A)
        errs = []
        for dt in (0.05, 0.025):
            cfg = SimConfig(g, FlowSpec("hyperbolic", A), ModelSpec(PASSIVE), t_end=1.0, frame="rescaled",
                            dt_max=dt, adaptive_box=False)
            out = run(cfg, f).final.field
            errs.append(float(np.abs(out.values - exact.values).max() / exact.values.max()))
        ratio = errs[0] / errs[1]
        ok &= errs[0] < 1e-3 and 3 <= ratio <= 5
        parts.append(f"A={A:g}: err {errs[0]:.2e} (<1e-3), halving ratio {ratio:.2f} (in [3,5])")
    el = time.perf_counter() - t0
    criterion("4 solver vs kernel", ok and el < 120, "; ".join(parts) + f"; {el:.1f}s (<120s)")


# 5-7: aggregation ------------------------------------------------------------------


def _pks_free_run(mass, t_end, record_every=1, n=512, L=16.0):
    g = GridSpec(2, n, L)
    f = sample_gaussian(g, sigma=0.5, mass=mass)
    cfg = SimConfig(g, FlowSpec("none"), ModelSpec(PKS), t_end=t_end, dt_max=0.01, record_every=record_every)
    return run(cfg, f)


def test_c5_virial(criterion):
    t0 = time.perf_counter()
    parts, ok = [], True
    for M in (4 * math.pi, 8 * math.pi, 12 * math.pi):
        traj = _pks_free_run(M, 0.3)
        ev = traj.terminal_event
        # up to a blow-up event the identity is exact; fit the records before it
        t_hi = 0.3 if ev is None else ev.t
        recs = [r for r in traj.records if r.t_original < t_hi or (ev is None and r.t_original <= t_hi)]
        slope = dg.virial_slope(recs, (0.0, t_hi))
        pred = dg.virial_prediction(M)
        if abs(M - EIGHT_PI) < 1e-12:
            good = abs(slope) < 0.02 * 4 * M
            parts.append(f"M=8pi slope {slope:.4f} (|.|<{0.08 * M:.3f})")
        else:
            rel = abs(slope / pred - 1)
            good = rel < 0.02
            parts.append(f"M={M / math.pi:g}pi slope {slope:.4f} vs {pred:.4f} rel {rel:.2e} (<2%)"
                         + ("" if ev is None else f" fitted to t={t_hi:.3f}"))
        ok &= good
    el = time.perf_counter() - t0
    criterion("5 virial identity", ok and el < 300, "; ".join(parts) + f"; {el:.0f}s (<300s)")


def test_c6_dichotomy_spectral(criterion):
    sub = _pks_free_run(0.8 * EIGHT_PI, 5.0, record_every=5)
    after = [r.linf for r in sub.records if r.t_original >= 1.0]
    nonincr = all(b <= a * (1 + 1e-12) for a, b in zip(after, after[1:]))
    reached = sub.records[-1].t_original
    sub_ok = not sub.events and reached >= 5.0 * (1 - 1e-12) and nonincr
    sup = _pks_free_run(1.5 * EIGHT_PI, 2.0)
    ev = sup.terminal_event
    sup_ok = ev is not None and ev.kind == dg.BLOWUP and ev.t < 2.0
    criterion("6 dichotomy (spectral 512^2)", sub_ok and sup_ok,
              f"0.8*8pi reached t={reached:g}, events {len(sub.events)}, Linf non-increasing after t=1: {nonincr}; "
              f"1.5*8pi {ev.kind if ev else 'no event'} at t={ev.t if ev else math.nan:.4f} (<2)")


@pytest.mark.xfail(strict=True, reason="64^2 finite differences cannot resolve the collapse; see ledger")
def test_c6_dichotomy_fd_confirmation(criterion):
    g = GridSpec(2, 64, 4.0)
    f = sample_gaussian(g, sigma=0.5, mass=1.5 * EIGHT_PI)
    cfg = SimConfig(g, FlowSpec("none"), ModelSpec(PKS), t_end=2.0, record_every=10)
    traj = fd_run(cfg, f)
    ev = traj.terminal_event
    criterion("6 dichotomy (FD oracle 64^2 confirms blow-up)", ev is not None and ev.kind == dg.BLOWUP,
              f"FD event: {ev.kind + ' at t=' + format(ev.t, '.4f') if ev else 'none'}, "
              f"final Linf {traj.records[-1].linf:.4g}")


SUPPRESSION_DOC = {
    "experiment": {"kind": "SuppressionThreshold"},
    "grid": {"dim": 2, "n": 512, "half_length": 16.0},
    "flow": {"kind": "hyperbolic", "amplitude": 1.0},
    "model": {"kind": "pks"},
    "frame": "original",
    "time": {"t_end": 5.0, "dt_max": 0.02},
    "initial": {"kind": "gaussian", "mass": 1.5 * EIGHT_PI, "sigma": 0.5},
    "search": {"A_lo": 0.0, "A_hi": 20.0, "tolerance_rel": 0.4, "max_iters": 6},
}


def test_c7_suppression(criterion, tmp_path):
    t0 = time.perf_counter()
    rep = hs.run_experiment(hs.parse_config(SUPPRESSION_DOC), str(tmp_path))
    el = time.perf_counter() - t0
    s = rep["search"]
    lo, hi = s["bracket"]
    by_amp = {v["amplitude"]: v for v in s["verdicts"]}
    at = rep["at_A_hi"]
    boot = at["bootstrap"]
    ok = (
        math.isfinite(s["A0_estimate"])
        and lo < hi
        and not by_amp[lo]["passed"]
        and by_amp[hi]["passed"]
        and by_amp[hi]["t_reached"] >= 5.0 * (1 - 1e-9)
        and at["sup_l2_over_initial"] <= 2.0
        and boot["enabled"] and boot["passed"] and len(boot["windows"]) >= 1
        and el < 1200
    )
    criterion("7 suppression", ok,
              f"A0 {s['A0_estimate']:.4g} in [{lo:.4g}, {hi:.4g}], A_hi reached t={by_amp[hi]['t_reached']:g}, "
              f"sup l2/l2_0 {at['sup_l2_over_initial']:.3f} (<=2), bootstrap {len(boot['windows'])} windows "
              f"passed={boot['passed']}, {el:.0f}s (<1200s)")


# 8: 3D decay ----------------------------------------------------------------------

DECAY_DOC = {
    "experiment": {"kind": "DecayFit3D", "fit_tmin": 0.1, "fit_tmax": 1.0},
    "grid": {"dim": 3, "n": 128, "half_length": 6.0},
    "flow": {"kind": "hyperbolic", "amplitude": 10.0},
    "model": {"kind": "pks"},
    "time": {"t_end": 1.0, "dt_max": 0.01},
    "initial": {"kind": "gaussian", "mass": 1.0, "sigma": 0.5},
}


@pytest.mark.extended
def test_c8_decay_3d(criterion, tmp_path):
    rep = hs.run_experiment(hs.parse_config(DECAY_DOC), str(tmp_path))
    fit = rep["fit"]
    terminal = [e for e in rep["events"] if e["kind"] in dg.TERMINAL_KINDS]
    criterion("8 3D decay", not terminal and fit["exponent"] <= -0.35,
              f"l2 exponent {fit['exponent']:.3f} over t in [0.1, 1] (<=-0.35), "
              f"strict window [-0.7,-0.35]: {fit['within_strict_window']}")


# 9: quenching -------------------------------------------------------------------------


def _ignition_run(f, A, t_end, frame="original", **kw):
    flow = FlowSpec("hyperbolic", A) if A > 0 else FlowSpec("none")
    cfg = SimConfig(f.grid, flow, ModelSpec(IGNITION, ALPHA), t_end=t_end, frame=frame, dt_max=0.005,
                    stop_on=dg.TERMINAL_KINDS, **kw)
    return run(cfg, f)


@pytest.mark.xfail(strict=True, reason="a height-1 bump of mass 10 is below the critical size and quenches; see ledger")
def test_c9_persistence_mass_ten(criterion):
    g = GridSpec(2, 256, 32.0)  # a persisting front spreads, so leave it room
    R = brentq(lambda R: integrate(sample_plateau(g, R, 0.25, 1.0)) - 10.0, 1.0, 3.0)
    f = sample_plateau(g, R, 0.25, 1.0)
    traj = _ignition_run(f, 0.0, 10.0)
    low = min(r.linf for r in traj.records)
    criterion("9 persistence at A=0 (mass 10)", low >= ALPHA,
              f"mass {integrate(f):.3f}, min Linf over t<=10 {low:.4f} (>= alpha {ALPHA})")


def test_c9_persistence_plateau(criterion):
    g = GridSpec(2, 256, 32.0)
    f = sample_plateau(g, 2.5, 0.75, 1.0)
    traj = _ignition_run(f, 0.0, 10.0)
    low = min(r.linf for r in traj.records)
    reached = traj.records[-1].t_original
    criterion("9 persistence at A=0 (mass 19.8 plateau)", low >= ALPHA and reached >= 10 * (1 - 1e-12),
              f"mass {integrate(f):.3f}, min Linf over t<=10 {low:.4f} (>= alpha {ALPHA}), reached t={reached:g}")


QUENCH_DOC = {
    "experiment": {"kind": "QuenchThreshold"},
    "grid": {"dim": 2, "n": 256, "half_length": 16.0},
    "flow": {"kind": "hyperbolic", "amplitude": 1.0},
    "model": {"kind": "ignition", "alpha": ALPHA},
    "time": {"t_end": 3.0, "dt_max": 0.005, "max_refine": 32},
    "initial": {"kind": "plateau", "radius": 2.5, "width": 0.75, "height": 1.0},
    "search": {"A_lo": 0.0, "A_hi": 2.0},
}


def test_c9_quench_search_and_monotone_tail(criterion, tmp_path):
    spec = hs.parse_config(QUENCH_DOC)
    rep = hs.run_experiment(spec, str(tmp_path))
    s = rep["search"]
    lo, hi = s["bracket"]
    by_amp = {v["amplitude"]: v for v in s["verdicts"]}
    found = math.isfinite(s["A0_estimate"]) and lo < hi and by_amp[hi]["passed"] and not by_amp[lo]["passed"]
    # continue the A_hi run past the quench and check the peak never rises again
    f = spec.initial.build(spec.config.grid)
    traj = _ignition_run(f, hi, 3.0, max_refine=32)
    ev = dg.quench_detect(traj.records, ALPHA)
    after = [r.linf for r in traj.records if ev is not None and r.t_original >= ev.t]
    rise = max((b - a for a, b in zip(after, after[1:])), default=math.inf)
    criterion("9 quench search and post-quench peak", found and ev is not None and rise <= 1e-8,
              f"A0 {s['A0_estimate']:.4g} in [{lo:.4g}, {hi:.4g}], quench at t={ev.t if ev else math.nan:.4g}, "
              f"largest post-quench rise of Linf {rise:.2e} (<=1e-8)")


def test_c9_comparison(criterion):
    A = 2.0
    times = (0.5, 1.0, 2.0)
    g = GridSpec(2, (256, 512), (8.0, 64.0))
    f = sample_plateau(g, 2.5, 0.75, 1.0)
    runs = {}
    for kind in (IGNITION, PASSIVE):
        model = ModelSpec(kind, ALPHA if kind == IGNITION else None)
        cfg = SimConfig(g, FlowSpec("hyperbolic", A), model, t_end=2.0, frame="rescaled", dt_max=0.005,
                        adaptive_box=False, snapshot_times=times)
        runs[kind] = run(cfg, f)
    beta = ModelSpec(IGNITION, ALPHA).beta
    worst = max(
        dg.comparison_check([runs[IGNITION].snapshot_at(t)], [runs[PASSIVE].snapshot_at(t)], beta, A, [t])
        for t in times
    )
    bound = 1e-6 * lp_norm(f, np.inf)
    clean = not runs[IGNITION].events and not runs[PASSIVE].events
    criterion("9 comparison with the passive solution", clean and worst < bound,
              f"max(n - exp(beta t/A) rho) {worst:.2e} over t' in {times} (<{bound:.0e})")


# 10-12: shear and dissipation ---------------------------------------------------------


def test_c10_shear_scaling(criterion):
    g = GridSpec.channel(2, (2048, 64), 256.0)
    f = sample_gaussian(g, sigma=1.0, mass=1.0)
    amps = (32.0, 64.0, 128.0)
    var = {}
    for profile in ("sin", "const"):
        r = [shear_peak_ratio(g, profile, A, f, 1.0, 1e-3) for A in amps]
        var[profile] = max(r) / min(r) - 1
    criterion("10 shear 1/A scaling", var["sin"] < 0.25 and var["const"] >= 0.25,
              f"r(A) variation: sin {var['sin']:.3f} (<0.25), const control {var['const']:.3f} (no stabilization)")


def test_c11_shear_factorization(criterion):
    g = GridSpec.channel(2, (512, 64), 40.0)
    f = sample_gaussian(g, sigma=0.5, mass=1.0)
    errs = {A: shear_factorization_check(f, "sin", A, 0.5) for A in (4.0, 64.0)}
    criterion("11 shear factorization", max(errs.values()) < 1e-6,
              ", ".join(f"A={A:g}: {e:.2e}" for A, e in errs.items()) + " (<1e-6)")


DISSIPATION_GRIDS = {
    # contracted axis resolves the 1/sqrt(A) kernel width, stretched axis holds it at tau
    10.0: GridSpec(2, 256, 12.0),
    100.0: GridSpec(2, 256, (3.0, 24.0)),
    1000.0: GridSpec(2, (256, 512), (1.0, 80.0)),
}


def test_c12_dissipation_time(criterion):
    parts, gaps, taus = [], [], []
    for A, g in DISSIPATION_GRIDS.items():
        closed = dissipation_time_closed_form(A)
        assert closed == pytest.approx(math.asinh(A / (2 * math.pi)) / A, rel=1e-14)
        num = hyperbolic_dissipation_numeric(A, g).tau
        gaps.append(abs(num / closed - 1))
        taus.append(closed)
        parts.append(f"A={A:g}: {closed:.6g} vs {num:.6g}")
    decreasing = all(b < a for a, b in zip(taus, taus[1:]))
    criterion("12 dissipation time", max(gaps) < 0.01 and decreasing,
              "; ".join(parts) + f"; worst gap {max(gaps):.1e} (<1%), strictly decreasing: {decreasing}")
