"""Small smooth nonlinear models shared by several test modules."""
import numpy as np

from beliefplan.filter import DynamicsModel, ObservationModel


def smooth_models(rng, n, m, p, tau=0.1):
    M = rng.standard_normal((n, n)) / np.sqrt(n)
    B = rng.standard_normal((n, m))
    C = rng.standard_normal((p, n)) / np.sqrt(n)
    Gq = 0.3 * rng.standard_normal((n, n))
    dw = rng.uniform(0.2, 1.0, p)

    def f(s, a):
        return np.tanh(s @ M.T) + a @ B.T

    def q(s, a):
        scale = 1.0 + 0.1 * np.sin(np.sum(s, axis=-1))[..., None, None]
        return scale * Gq

    def w(s):
        return np.sin(s @ C.T) + 0.5 * (s @ C.T)

    def W(s, a):
        d = dw * (1.0 + 0.5 * np.cos(np.sum(s, axis=-1)))[..., None] + 0.05 * np.sum(a * a, axis=-1)[..., None]
        return d[..., :, None] * np.eye(p)

    return DynamicsModel(f, q, tau), ObservationModel(w, W)
