"""Chemotactic collapse without flow: below 8 pi the density spreads, above it collapses."""
import math

from fastspread import diagnostics as dg
from fastspread.evolve import PKS, ModelSpec, SimConfig, run
from fastspread.fields import GridSpec, sample_gaussian
from fastspread.kernels import FlowSpec

g = GridSpec(2, 256, 12.0)
for factor in (0.8, 1.5):
    M = factor * 8 * math.pi
    cfg = SimConfig(g, FlowSpec("none"), ModelSpec(PKS), t_end=1.0, dt_max=0.01)
    traj = run(cfg, sample_gaussian(g, sigma=0.5, mass=M))
    t_hi = traj.terminal_event.t if traj.terminal_event else 1.0
    recs = [r for r in traj.records if r.t_original < t_hi]
    slope = dg.virial_slope(recs, (0.0, t_hi))
    print(f"M = {factor} * 8pi: events {[(e.kind, round(e.t, 4)) for e in traj.events]}")
    print(f"  second-moment slope {slope:.3f}, predicted {dg.virial_prediction(M):.3f}")
