"""Optimal CRRA wealth and two-fund holdings along a simulated MMM path."""

import numpy as np

from longrun.models import MmmModel, TimeGrid, simulate_gp
from longrun.strategy import Preferences, build_value_function, two_fund_holdings

model = MmmModel(0.1828, 0.0520)
vf = build_value_function(Preferences(gamma=3.0, delta=0.02, epsilon=1.0, chi=1, horizon=30.0), model, 1.0)
print(f"lambda = {vf.lam:.6g}")

path = simulate_gp(model, TimeGrid(0.0, 30.0, 30), 1, seed=5)
print(f"{'t':>4} {'V_gp':>8} {'V*':>8} {'GP units':>9} {'GP share':>9} {'C*':>8}")
for t, v in zip(path.times[::5], path.values[0, ::5]):
    wealth = float(vf(t, v))
    units, _ = two_fund_holdings(vf, t, v)
    print(f"{t:4.0f} {v:8.3f} {wealth:8.4f} {units:9.4f} {units * v / wealth:9.3f} {float(vf.consumption(t, v)):8.4f}")
