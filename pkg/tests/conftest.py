import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def naive_dft(u):
    """O(n^2) forward transform, independent of numpy.fft."""
    n = len(u)
    j = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(j, j) / n) @ u


def toy_window(solver_name: str, m: int = 3, seed: int = 0):
    """16-point toy problem: a reference window that the uncorrected solver misses."""
    from hybrid_pde.burgers import BurgersParams, BurgersSolver, ForcingParams
    from hybrid_pde.core import Grid1D
    from hybrid_pde.correction import CorrectorSpec, rollout
    from hybrid_pde.ks import KSSolver
    from hybrid_pde.training import Window

    r = np.random.default_rng(seed)
    if solver_name == "burgers":
        g = Grid1D(16, 2 * np.pi)
        fp = ForcingParams.random(r, length=g.length)
        solver = BurgersSolver(g, BurgersParams(nu=0.1, dt=0.01, cfl=0.5), forcing=fp)
        u0 = np.sin(g.x) + 0.3 * np.cos(2 * g.x + 0.4)
    else:
        g = Grid1D(16, 2 * np.pi * 1.5)
        solver = KSSolver(g, dt=0.05, scheme="etdrk2")
        u0 = np.cos(2 * np.pi * g.x / g.length) + 0.5 * np.sin(4 * np.pi * g.x / g.length)
    states = rollout(u0, m, solver, CorrectorSpec()).states.copy()
    states[1:] += 0.05 * r.standard_normal(states[1:].shape)
    return Window(states, solver, 0)


def toy_params(seed: int = 0, last_scale: float = 1.0):
    from hybrid_pde.network import init_params, layer_specs

    return init_params(layer_specs([2, 6, 6, 1], 5), np.random.default_rng(seed),
                       features=("u", "x"), last_scale=last_scale)


def fd_gradient(loss, theta, h=1e-6):
    g = np.zeros_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (loss(theta + e) - loss(theta - e)) / (2 * h)
    return g
