"""Model evidence by adaptive tempering.

Two models explain one observation y = 0.5 with unit noise. Under a N(0, 1)
prior the evidence is N(0.5; 0, 2) in closed form, which the tempered
sampler should recover; a tighter N(0, 0.1) prior gives a second model to
compare against.

    python demos/evidence.py
"""

import math

import numpy as np

from bayesuq import MlOptions, RandomVariable, run_multilevel

HALF_LN_2PI = 0.5 * math.log(2 * math.pi)


def ln_like(theta):
    return -HALF_LN_2PI - 0.5 * (0.5 - theta[0]) ** 2


def exact_ln_z(prior_var):
    v = prior_var + 1.0
    return -0.5 * math.log(2 * math.pi * v) - 0.125 / v


for prior_var in (1.0, 0.1):
    prior = RandomVariable.gaussian([0.0], [[prior_var]])
    runs = [run_multilevel(prior, ln_like, MlOptions(raw_chain_size=500), seed) for seed in range(10)]
    z = np.array([r.ln_evidence for r in runs])
    print(f"prior variance {prior_var}: ln Z = {z.mean():.4f} +/- {z.std(ddof=1) / math.sqrt(10):.4f} "
          f"(exact {exact_ln_z(prior_var):.4f}), levels per run {len(runs[0].levels)}")
    print("  temperatures:", " ".join(f"{t:.3g}" for t in runs[0].taus))
    print(f"  posterior mean {np.mean([r.particles.mean() for r in runs]):.4f} "
          f"(exact {0.5 * prior_var / (prior_var + 1):.4f})")
