"""
A small Monte Carlo comparison
==============================

Every run draws a new trajectory from its own random substream, so the
table is reproducible and does not depend on the number of workers.
"""

from vbsmooth.simbench import CwnaScenario, monte_carlo, default_roster

s = CwnaScenario.time_invariant(K=300, mc_runs=4, seed=5)
res = monte_carlo(s, default_roster(s, max_iterations=20))

print(f"{'algorithm':10s} {'ARMSE':>14s} {'E_R':>14s} {'E_Q':>14s}")
for row in res.summary:
    def cell(m, sd):
        return "-" if m is None else f"{m:.3f} ± {sd:.3f}"
    print(f"{row.algorithm:10s} {cell(row.rmse_mean, row.rmse_std):>14s} "
          f"{cell(row.e_r_mean, row.e_r_std):>14s} {cell(row.e_q_mean, row.e_q_std):>14s}")

# per-run records keep failures too; none are expected here
print("failed runs:", sum(r.n_failed for r in res.summary))
