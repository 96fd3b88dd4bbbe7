"""An ignition flame persists at rest and is quenched by a hyperbolic flow."""
from fastspread import diagnostics as dg
from fastspread.evolve import IGNITION, ModelSpec, SimConfig, run
from fastspread.fields import GridSpec, integrate, sample_plateau
from fastspread.kernels import FlowSpec

alpha = 0.25
g = GridSpec(2, 256, 32.0)
f = sample_plateau(g, radius=2.5, width=0.75, height=1.0)
print(f"plateau mass {integrate(f):.3f}")
for A in (0.0, 2.0):
    flow = FlowSpec("hyperbolic", A) if A else FlowSpec("none")
    cfg = SimConfig(g, flow, ModelSpec(IGNITION, alpha), t_end=3.0, dt_max=0.005, max_refine=32)
    traj = run(cfg, f)
    ev = dg.quench_detect(traj.records, alpha)
    low = min(r.linf for r in traj.records)
    print(f"A={A:g}: min peak {low:.4f}, quench {'at t=%.3f' % ev.t if ev else 'none'}")
