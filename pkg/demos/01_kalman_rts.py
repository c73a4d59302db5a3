"""
Kalman filter and RTS smoother
==============================

Filter and smooth a small random-walk model, then check the smoothed
marginals against the dense joint-Gaussian posterior.
"""

import numpy as np

from vbsmooth.lgss import LgssModel, NoiseSchedule, batch_posterior_oracle, smooth
from vbsmooth.matstat import GaussianParams

# a 1-d random walk observed in noise, 8 steps
K = 7
model = LgssModel(np.eye(1), np.eye(1), GaussianParams([0.0], [[4.0]]), K=K)
noise = NoiseSchedule.constant([[0.5]], [[2.0]], K)

rng = np.random.default_rng(0)
x = np.cumsum(rng.normal(scale=np.sqrt(0.5), size=K + 1))
y = (x + rng.normal(scale=np.sqrt(2.0), size=K + 1))[:, None]

fr, sm = smooth(model, noise, y)
print("filtered  :", np.round(fr.m_filt[:, 0], 3))
print("smoothed  :", np.round(sm.mean[:, 0], 3))
print("truth     :", np.round(x, 3))

# the smoother uses every measurement, so its variances are never larger
print("P filtered:", np.round(fr.P_filt[:, 0, 0], 3))
print("P smoothed:", np.round(sm.cov[:, 0, 0], 3))

# same answer from brute-force conditioning of the stacked trajectory
oracle = batch_posterior_oracle(model, noise, y)
print("max |smoother - dense posterior| =", np.abs(sm.mean - oracle.mean).max())
print("log-likelihood (innovations) =", fr.loglik, " dense =", oracle.loglik)
