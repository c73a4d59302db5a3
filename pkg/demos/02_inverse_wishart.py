"""
Inverse-Wishart factors and the Beta-Bartlett discount
======================================================

The noise covariances are tracked through inverse-Wishart factors.  A
discount factor below one forgets old data; the mean-preserving forward
prediction widens the factor without moving its mean.
"""

import numpy as np

from vbsmooth.covdyn import DofPredictionMode, bb_predict, bb_smooth
from vbsmooth.matstat import InverseWishartParams, iw_log_pdf, iw_mean, iw_mean_inverse_inv, iw_mode

R0 = np.array([[10.0, 2.0], [2.0, 10.0]])
p = InverseWishartParams(7.0, R0)  # dof = 2d + 3: weakest prior with a mean

print("mean             ", iw_mean(p).array.tolist())
print("E[R^-1]^-1       ", iw_mean_inverse_inv(p).array.tolist())
print("mode             ", iw_mode(p).array.tolist())
print("log density at R0", iw_log_pdf(p, R0))

# predict forward ten steps with lambda = 0.9
q = InverseWishartParams(40.0, 33.0 * R0)
for _ in range(10):
    q = bb_predict(q, 0.9)
print("after 10 predictions: dof", round(q.dof, 3), " mean", np.round(iw_mean(q).array, 6).tolist())

# the additive recursion keeps adding dof while shrinking the scale
r = InverseWishartParams(40.0, 33.0 * R0)
for _ in range(10):
    r = bb_predict(r, 0.9, DofPredictionMode.ADDITIVE)
print("verbatim recursion: dof", round(r.dof, 3), " mean", np.round(iw_mean(r).array, 3).tolist())

# backward smoothing blends a filtered factor with the next smoothed one
a = InverseWishartParams(30.0, 20.0 * R0)
b = InverseWishartParams(30.0, 40.0 * R0)
print("smoothed mean", np.round(iw_mean(bb_smooth(a, b, 0.5)).array, 3).tolist())
