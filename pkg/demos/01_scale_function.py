"""
The scale function of a stiff drift
===================================

For ``a_T(x) = c0 T x / (1 + x^2 T)`` the derivative of the scale function is
``(1 + x^2 T)^(-c0)``.  We tabulate it numerically and see how close we get,
then look at the residuals that decide whether ``xi_T^2`` has a limit.
"""

import numpy as np

from difflim import drift_models as dm
from difflim.scale import build_scale, check_A3, scale_inverse

s = dm.besq(c0=1.0)

# %% tabulate f_T and compare f_T' with the closed form
for T in (1e2, 1e3, 1e4):
    tab = build_scale(s.drift, T, 5.0)
    exact = (1 + tab.grid**2 * T) ** -1.0
    err = np.max(np.abs(tab.fprime / exact - 1))
    print(f"T={T:8.0f}  nodes={tab.grid.size:6d}  max rel err f'={err:.1e}  f(5)={tab.f[-1]:.5f}")

# f_T(5) tends to 0: the scale function flattens out as T grows,
# so xi_T itself has no interesting limit, but xi_T^2 does.

# %% inverse of the scale function
tab = build_scale(s.drift, 1e3, 5.0)
x = np.array([-3.0, -0.2, 0.0, 0.05, 1.7])
print("phi_T(f_T(x)) - x:", scale_inverse(tab, tab.f_at(x)) - x)

# %% residuals q1 and q2 of the transformed drift and diffusion
print("\nsup f'|int q/f'| on |x| <= 5")
for T in (1e2, 1e3, 1e4):
    tab = build_scale(s.drift, T, 5.0)
    a3_q1 = check_A3(tab, lambda v: dm.residual_q1(s, T, v), 5.0)
    a3_q2 = check_A3(tab, lambda v: dm.residual_q2(s, T, v), 5.0)
    print(f"T={T:8.0f}  q1: {a3_q1:.5f}  (1/sqrt T = {T**-0.5:.5f})  q2: {a3_q2:.1e}")
