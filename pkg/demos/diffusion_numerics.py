"""
Cosine noise schedule and forward noising
=========================================

The cumulative signal fraction abar_t falls smoothly from 1 to nearly 0.
Noised latents mix signal and unit noise so that their variance tracks
``abar_t Var(z) + (1 - abar_t)``.
"""

import numpy as np

from lge_synthlab import diffmath

sched = diffmath.cosine_schedule(T=1000)
for t in (1, 100, 250, 500, 750, 900, 1000):
    print(f"t={t:4d}  beta={sched.beta[t]:.5f}  abar={sched.alpha_bar[t]:.5f}")

rng = np.random.default_rng(3)
z = 2.0 * rng.standard_normal(10_000)
eps = rng.standard_normal(10_000)
for t in (100, 500, 900):
    zt = diffmath.forward_noise(z, t, sched, eps)
    ab = sched.alpha_bar[t]
    print(f"t={t}: var {zt.var():.3f}, predicted {ab * z.var() + 1 - ab:.3f}")

# classifier-free guidance pushes past the conditional prediction
u, c = np.zeros(3), np.ones(3)
print("guided:", diffmath.cfg_blend(u, c, w=1.5))
