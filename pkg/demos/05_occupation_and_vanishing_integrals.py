"""
Occupation times and vanishing integrals
========================================

Two auxiliary facts behind all the limit theorems: the time ``zeta_T``
spends in a small set is small uniformly in T, and integrals of rapidly
oscillating functions of ``xi_T`` vanish.
"""

import math

import numpy as np
from scipy.integrate import quad
from scipy.special import ndtr

from difflim import drift_models as dm
from difflim.sde_engine import StepPolicy, coupled_policy, run_ensemble

eps = (0.4, 0.2, 0.1, 0.05)
sets = [(-e, e) for e in eps]

# %% occupation of [-eps, eps] up to time 1
for s in (dm.zero_drift(), dm.zero_drift(x0=1.0), dm.besq(c0=1.0, x0=1.0)):
    occ = run_ensemble(s, 1e3, 1.0, 4000, seed=3, occupation=sets).occupation.mean(axis=1)
    print(f"{s.id:22s}", "  ".join(f"{v:.4f}" for v in occ), f"  ratio {occ[-1] / occ[0]:.3f}")

# from x0 = 0 Brownian motion spends time ~ eps in [-eps, eps] only for
# eps >> sqrt(t); the exact curve is int_0^1 (2 Phi(eps/sqrt s) - 1) ds
exact = [quad(lambda u: 2 * ndtr(e / math.sqrt(u)) - 1, 0, 1)[0] for e in eps]
print(f"{'exact, x0=0':22s}", "  ".join(f"{v:.4f}" for v in exact))

# %% sup_t |int_0^t sin(xi sqrt T) ds|
s = dm.oscillatory_beta1()
ladder = (1e2, 1e3, 1e4)
policy = coupled_policy(StepPolicy(), s, ladder, 1.0)
for T in ladder:
    ens = run_ensemble(s, T, 1.0, 2000, step_policy=policy, seed=5,
                       residual=lambda T, x: np.sin(np.asarray(x) * math.sqrt(T)), sup_abs=("q_int",))
    print(f"T={T:6.0f}  E sup|int sin| = {ens.sup_abs['q_int'].mean():.4f}")
