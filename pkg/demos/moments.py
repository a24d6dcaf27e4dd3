"""Power moments of the MMM GP: closed form, series and Monte Carlo side by side."""

from longrun.models import MmmModel
from longrun.pricing import PowerMomentQuery, gp_power_moment, gp_power_moment_mc

model = MmmModel(0.1828, 0.0520)

print(f"{'gamma':>6} {'T':>4} {'closed form':>14} {'series':>14} {'monte carlo':>14} {'se':>9}")
for gamma in (2.0, 3.0, 5.0):
    for horizon in (1.0, 10.0, 50.0):
        q = PowerMomentQuery.from_gamma(model, gamma, 0.0, 1.0, horizon)
        mc = gp_power_moment_mc(q, 100_000, seed=1)
        print(f"{gamma:6.1f} {horizon:4.0f} {gp_power_moment(q, 'closed_form'):14.10f} "
              f"{gp_power_moment(q, 'series'):14.10f} {mc.mean:14.10f} {mc.standard_error:9.2e}")
