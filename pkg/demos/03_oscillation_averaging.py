"""
Averaging a fast oscillation
============================

Brownian motion with the functional ``g_T(x) = 1 + sin(x sqrt T)``.  The
occupation integral ``int_0^t g_T(W) ds`` forgets the sine as T grows and
tends to the deterministic value t.
"""

import math

import numpy as np

from difflim import drift_models as dm
from difflim.scale import build_scale, check_A4
from difflim.sde_engine import StepPolicy, coupled_policy, run_ensemble

s = dm.oscillatory_beta1()
ladder = (1e2, 1e3, 1e4)
policy = coupled_policy(StepPolicy(), s, ladder, 1.0)

sd = []
for T in ladder:
    b = run_ensemble(s, T, 1.0, 2000, step_policy=policy, seed=7, statistics=("beta1",)).at("beta1", 1.0)
    a4 = check_A4(build_scale(s.drift, T, 5.0), s, 5.0)
    sd.append(b.std(ddof=1))
    print(f"T={T:6.0f}  mean={b.mean():.4f}  sd={sd[-1]:.4f}  A4={a4:.5f}  2/sqrt(T)={2 / math.sqrt(T):.5f}")

# A4 is exactly 2/sqrt(T); the spread of beta1(1) shrinks at the same rate
print("log-log slope of sd:", np.polyfit(np.log(ladder), np.log(sd), 1)[0])
