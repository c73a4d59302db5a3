"""
EM, R-only and diagonal variants
================================

On a record with constant but unknown noise, compare the VB smoother with
the EM smoother, the VB smoother that estimates only R, and the diagonal
VB smoother.  EM's log-likelihood never decreases across iterations.
"""

import numpy as np

from vbsmooth.baselines import EmConfig, em_smooth, vbs_r, vbs_rq_diagonal
from vbsmooth.simbench import (
    CwnaScenario, build_cwna_model, covariance_schedule, matrix_error, nominal_priors, rmse, simulate,
)
from vbsmooth.vbsmoother import VbConfig, vb_smooth

s = CwnaScenario.time_invariant(K=1000)
model, Q0, R0 = build_cwna_model(s)
truth = covariance_schedule(s, Q0, R0)
x, y = simulate(model, truth, seed=2)
priors = nominal_priors(Q0, R0)
cfg = VbConfig(max_iterations=50, convergence_tol=None)
C = model.C[0]

em = em_smooth(model, y, Q0, R0, EmConfig(max_iterations=50, convergence_tol=None))
print("EM log-likelihood, first and last:", round(em.loglik[0], 2), round(em.loglik[-1], 2))
print("smallest step:", np.diff(em.loglik).min())

full = vb_smooth(model, y, priors, cfg)
r_only = vbs_r(model, y, priors.r_prior, cfg, Q0)
diag = vbs_rq_diagonal(model, y, priors, cfg)

rows = [("vbs-rq", full.state.mean, full.r_hat, full.q_hat),
        ("ems-rq", em.state.mean, np.broadcast_to(em.r_hat, truth.R.shape), np.broadcast_to(em.q_hat, truth.Q.shape)),
        ("vbs-r", r_only.state.mean, r_only.r_hat, None),
        ("vbs-rq-d", diag.state.mean, diag.r_hat, diag.q_hat)]
for name, m, r_hat, q_hat in rows:
    e_q = "" if q_hat is None else f"  E_Q {matrix_error(q_hat, truth.Q):.3f}"
    print(f"{name:9s} RMSE {rmse(m, x, C):.3f}  E_R {matrix_error(r_hat, truth.R):.3f}{e_q}")

print("diagonal R estimate:\n", np.round(diag.r_hat[0], 3))
