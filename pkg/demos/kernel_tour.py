"""Exact hyperbolic-flow kernel: normalization, decay envelope, dissipation time."""
import math

from fastspread.fields import GridSpec, integrate, sample_gaussian
from fastspread.kernels import (
    apply_kernel,
    dissipation_time_closed_form,
    hyperbolic_dissipation_numeric,
    kernel_normalization,
    linf_envelope,
)

for t in (0.25, 1.0, 2.0):
    err = abs(kernel_normalization(t, 2 * math.pi, 2, (0.3, -0.7)) - 1)
    print(f"t={t:<5g} |int K - 1| = {err:.1e}")

g = GridSpec(2, 256, 12.0)
f = sample_gaussian(g, sigma=1.0)
for t in (0.5, 1.0, 2.0):
    peak = apply_kernel(f, t, 10.0).max()
    print(f"t={t:<5g} peak {peak:.4e}  envelope {linf_envelope(t, 10.0, 2) * integrate(f):.4e}")

for A in (10.0, 100.0, 1000.0):
    print(f"A={A:<7g} dissipation time {dissipation_time_closed_form(A):.6f}")
print("numeric check at A=10:", hyperbolic_dissipation_numeric(10.0, g).tau)
