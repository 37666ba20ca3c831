"""Central finite-difference helpers shared by the gradient tests."""
import numpy as np

H = 1e-6
TOL = 1e-4
SEEDS = (0, 1, 2, 3, 4)


def numeric_grad(f, x, h=H):
    """d f / d x by central differences; ``x`` is perturbed in place and restored."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, n, floor=1e-4):
    """Norm-wise relative error. Below ``floor`` the comparison becomes absolute,
    so gradients that vanish by construction (a conv bias under train-mode
    batch norm) are not judged on finite-difference round-off."""
    a, n = np.asarray(a, float), np.asarray(n, float)
    denom = max(np.linalg.norm(a) + np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / denom)
