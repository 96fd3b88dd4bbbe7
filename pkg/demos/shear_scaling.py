"""Peak decay of a passive scalar in the shear u = sin(y): the peak scales like 1/A."""
from fastspread.fields import GridSpec, sample_gaussian
from fastspread.harness import shear_peak_ratio

g = GridSpec.channel(2, (2048, 64), 256.0)
f = sample_gaussian(g, sigma=1.0, mass=1.0)
for profile in ("sin", "const"):
    r = [shear_peak_ratio(g, profile, A, f) for A in (32.0, 64.0, 128.0)]
    print(profile, " ".join(f"{v:.4f}" for v in r), f"variation {max(r) / min(r) - 1:.3f}")
