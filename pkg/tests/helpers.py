import numpy as np

from vbsmooth.lgss import LgssModel, NoiseSchedule
from vbsmooth.matstat import GaussianParams


def random_spd(rng, d, floor=0.2):
    a = rng.normal(size=(d, d))
    return a @ a.T / d + floor * np.eye(d)


def random_problem(rng, K, nx, ny, time_varying=True):
    """Random model, PD noise schedule and measurements."""
    if time_varying:
        A = rng.normal(scale=0.7, size=(K, nx, nx))
        C = rng.normal(size=(K + 1, ny, nx))
        Q = np.array([random_spd(rng, nx) for _ in range(K)]).reshape(K, nx, nx)
        R = np.stack([random_spd(rng, ny) for _ in range(K + 1)])
    else:
        A = np.broadcast_to(rng.normal(scale=0.7, size=(nx, nx)), (K, nx, nx))
        C = np.broadcast_to(rng.normal(size=(ny, nx)), (K + 1, ny, nx))
        Q = np.broadcast_to(random_spd(rng, nx), (K, nx, nx))
        R = np.broadcast_to(random_spd(rng, ny), (K + 1, ny, ny))
    model = LgssModel(A, C, GaussianParams(rng.normal(size=nx), random_spd(rng, nx)), K=K)
    noise = NoiseSchedule(Q, R)
    ys = rng.normal(size=(K + 1, ny)) * 2.0
    return model, noise, ys


def scalar_model(K, a=1.0, c=1.0, m0=0.0, p0=1.0):
    return LgssModel(np.full((K, 1, 1), a), np.full((K + 1, 1, 1), c), GaussianParams([m0], [[p0]]), K=K)
