"""Reference trajectories filtered from fine simulations onto a coarse grid."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .burgers import BurgersParams, BurgersSolver, ForcingParams
from .core import Grid1D, RngStream, Trajectory
from .correction import CorrectorSpec, rollout
from .ks import KSSolver, random_ks_ic

log = logging.getLogger(__name__)


@dataclass
class Reference:
    """A coarse reference trajectory and the coarse solver it pairs with."""

    trajectory: Trajectory
    solver: object
    start_index: int = 0


def mean_pool(u: np.ndarray, n_coarse: int) -> np.ndarray:
    """Average over the coarse cell centred on each coarse node.

    Coarse node ``i`` sits on fine node ``r*i`` (``r = n/n_coarse``); its cell
    spans fine nodes ``r*i - r/2 .. r*i + r/2`` with half weight on the two
    shared end nodes (for odd ``r`` the window is ``r`` full-weight nodes).
    Every fine node carries total weight one, so the spatial mean is kept.
    """
    u = np.asarray(u, dtype=float)
    n = u.shape[-1]
    if n % n_coarse:
        raise ValueError(f"{n} points do not pool evenly onto {n_coarse}")
    r = n // n_coarse
    if r == 1:
        return u.copy()
    if r % 2:
        offsets, weights = range(-(r // 2), r // 2 + 1), [1.0] * r
    else:
        offsets = range(-(r // 2), r // 2 + 1)
        weights = [0.5] + [1.0] * (r - 1) + [0.5]
    acc = np.zeros_like(u)
    for o, w in zip(offsets, weights):
        acc = acc + w * np.roll(u, -o, axis=-1)
    return acc[..., ::r] / r


def spectral_truncate(u: np.ndarray, n_coarse: int) -> np.ndarray:
    """Keep modes ``|m| < n_coarse/2`` and resample on the coarse grid.

    The coarse Nyquist slot is set to zero.
    """
    u = np.asarray(u, dtype=float)
    n = u.shape[-1]
    if n % n_coarse:
        raise ValueError(f"{n} points do not divide onto {n_coarse}")
    if n == n_coarse:
        return u.copy()
    spec = np.fft.fft(u, axis=-1)
    half = n_coarse // 2
    out = np.zeros((*u.shape[:-1], n_coarse), dtype=complex)
    out[..., :half] = spec[..., :half]
    out[..., half + 1:] = spec[..., n - half + 1:]
    return np.fft.ifft(out, axis=-1).real * (n_coarse / n)


def restrict(solver, u: np.ndarray, n_coarse: int) -> np.ndarray:
    if getattr(solver, "name", "") == "ks":
        return spectral_truncate(u, n_coarse)
    return mean_pool(u, n_coarse)


def make_dataset(fine_solvers: Sequence, coarse_solvers: Sequence, initial_states: Sequence,
                 dt_fine: float, dt_coarse: float, steps: int,
                 restrict_fn: Optional[Callable] = None) -> list[Reference]:
    """Run each fine solver and filter its states onto the paired coarse grid.

    ``steps`` counts coarse steps; the fine run takes ``dt_coarse/dt_fine``
    sub-steps per coarse step. A trajectory that blows up is dropped.
    """
    ratio = dt_coarse / dt_fine
    if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
        raise ValueError("dt_coarse must be a positive multiple of dt_fine")
    ratio = int(round(ratio))
    refs = []
    for i, (fine, coarse, u0) in enumerate(zip(fine_solvers, coarse_solvers, initial_states)):
        n_coarse = coarse.grid.n
        fine_run = rollout(u0, steps * ratio, fine, CorrectorSpec(), dt=dt_fine, stride=ratio)
        if fine_run.blew_up:
            log.warning("reference trajectory %d blew up at step %d; dropped", i, fine_run.blowup_step)
            continue
        if restrict_fn is None:
            states = restrict(fine, fine_run.states, n_coarse)
        else:
            states = restrict_fn(fine_run.states, n_coarse)
        times = np.arange(len(states)) * dt_coarse
        refs.append(Reference(Trajectory(coarse.grid, times, states, meta={"index": i}), coarse))
    return refs


def random_burgers_ic(grid: Grid1D, rng: np.random.Generator, terms: int = 3,
                      amplitude: float = 0.5, max_wavenumber: int = 3) -> np.ndarray:
    """Sum of ``terms`` sinusoids with integer wavenumbers and uniform amplitudes."""
    amps = rng.uniform(-amplitude, amplitude, terms)
    ells = rng.integers(1, max_wavenumber + 1, terms)
    phases = rng.uniform(0.0, 2.0 * np.pi, terms)
    x = grid.x
    return sum(a * np.sin(2 * np.pi * l * x / grid.length + p) for a, l, p in zip(amps, ells, phases))


def burgers_references(n_traj: int, steps: int, seed: int = 0, n_fine: int = 512, n_coarse: int = 64,
                       length: float = 16.0, nu: float = 0.2, dt: float = 1e-3,
                       forcing_terms: int = 5, start_index: int = 0) -> list[Reference]:
    """Forced Burgers references (fine ``n_fine``, mean-pooled to ``n_coarse``).

    Trajectory ``i`` draws its forcing and initial condition from the
    generator keyed by ``(seed, i)``.
    """
    fine_grid, coarse_grid = Grid1D(n_fine, length), Grid1D(n_coarse, length)
    p = BurgersParams(nu=nu, dt=dt)
    fines, coarses, ics = [], [], []
    for i in range(n_traj):
        g = RngStream(seed, 0, (i,)).generator()
        fp = ForcingParams.random(g, length=length, terms=forcing_terms)
        fines.append(BurgersSolver(fine_grid, p, forcing=fp))
        coarses.append(BurgersSolver(coarse_grid, p, forcing=fp))
        ics.append(random_burgers_ic(fine_grid, g))
    refs = make_dataset(fines, coarses, ics, dt, dt, steps)
    for r in refs:
        r.start_index = start_index
    return refs


def ks_references(n_traj: int, steps: int, seed: int = 0, length: float = 2 * np.pi * 6.4,
                  n_fine: int = 64, n_coarse: int = 64, dt_fine: float = 0.01, dt_coarse: float = 0.5,
                  coarse_scheme: str = "etd1", warmup_steps: int = 2000) -> list[Reference]:
    """KS references from an ETDRK2 run at ``dt_fine``, strided to ``dt_coarse``."""
    fine_grid, coarse_grid = Grid1D(n_fine, length), Grid1D(n_coarse, length)
    fine = KSSolver(fine_grid, dt=dt_fine, scheme="etdrk2")
    coarse = KSSolver(coarse_grid, dt=dt_coarse, scheme=coarse_scheme)
    ics = [random_ks_ic(fine_grid, RngStream(seed, 0, (i,)), warmup_steps=warmup_steps, warmup_dt=dt_fine)
           for i in range(n_traj)]
    return make_dataset([fine] * n_traj, [coarse] * n_traj, ics, dt_fine, dt_coarse, steps)
