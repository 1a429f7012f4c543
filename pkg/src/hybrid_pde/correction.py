"""Correction sources and the injection topologies of a hybrid step.

A hybrid step combines one solver step ``T`` with a corrector ``G``:

=============  ===========================================
mode           next state
=============  ===========================================
NO_MODEL       ``T(u)``
DIRECT         ``T(u) + G(T(u))``
PRE_CORRECT    ``T(u + G(u))``
SCALED         ``T(u) + dt * G(T(u))``
INDIRECT       ``T(u)`` with ``G(u)`` added to the right-hand side
=============  ===========================================

Solvers are any object with ``step(u, dt=None, t=0.0, extra_rhs=None,
log=None)`` and a ``dt`` attribute (:class:`~hybrid_pde.burgers.BurgersSolver`,
:class:`~hybrid_pde.ks.KSSolver`, the diffusion toy).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import autodiff as ad
from .core import Blowup, RngStream, Trajectory, is_blown_up


class InjectionMode(str, enum.Enum):
    NO_MODEL = "no_model"
    DIRECT = "direct"
    PRE_CORRECT = "pre_correct"
    SCALED = "scaled"
    INDIRECT = "indirect"

    @classmethod
    def parse(cls, name) -> "InjectionMode":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("-", "_")
        aliases = {"nomodel": "no_model", "none": "no_model", "precorrect": "pre_correct",
                   "sitl": "direct", "sitl_star": "pre_correct", "csm": "scaled", "inc": "indirect"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown injection mode {name!r}") from None


CORRECTED_MODES = (
    InjectionMode.DIRECT,
    InjectionMode.PRE_CORRECT,
    InjectionMode.SCALED,
    InjectionMode.INDIRECT,
)


@dataclass(frozen=True)
class Zero:
    pass


@dataclass(frozen=True)
class GaussianNoise:
    """i.i.d. ``N(0, eps^2)`` per point, redrawn per step index."""

    eps: float
    rng: RngStream = field(default_factory=lambda: RngStream(0))

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError("noise eps must be non-negative")


@dataclass(frozen=True)
class Neural:
    """A network corrector; ``params`` is a :class:`~hybrid_pde.network.NeuralParams`.

    ``theta`` optionally overrides the flat parameter vector (a tape
    variable during training).
    """

    params: object
    theta: object = None


@dataclass(frozen=True)
class Constant:
    """A fixed correction field (broadcast over the state)."""

    value: np.ndarray


Source = Union[Zero, GaussianNoise, Neural, Constant]


@dataclass(frozen=True)
class CorrectorSpec:
    source: Source = field(default_factory=Zero)
    mode: InjectionMode = InjectionMode.NO_MODEL

    def __post_init__(self):
        object.__setattr__(self, "mode", InjectionMode.parse(self.mode))


def corrector_eval(spec: CorrectorSpec, u, step_index: int = 0, grid=None):
    """Evaluate the correction field for state ``u`` at ``step_index``."""
    src = spec.source
    shape = np.shape(ad.value(u))
    if isinstance(src, Zero):
        return np.zeros(shape)
    if isinstance(src, GaussianNoise):
        if src.eps == 0:
            return np.zeros(shape)
        return src.eps * src.rng.at(step_index).normal(shape)
    if isinstance(src, Constant):
        return np.broadcast_to(np.asarray(src.value, dtype=float), shape).copy()
    if isinstance(src, Neural):
        from .network import net_forward

        return net_forward(src.params, u, src.theta)
    raise TypeError(f"unsupported corrector source {type(src).__name__}")


def step_size(solver, dt: Optional[float]) -> float:
    return float(solver.dt if dt is None else dt)


def hybrid_step(u, solver, spec: CorrectorSpec, dt: Optional[float] = None, t: float = 0.0,
                step_index: int = 0, log=None):
    """One solver step combined with the correction according to ``spec.mode``."""
    mode = spec.mode
    if mode is InjectionMode.NO_MODEL:
        return solver.step(u, dt, t, None, log)
    if mode is InjectionMode.DIRECT:
        u_star = solver.step(u, dt, t, None, log)
        return u_star + corrector_eval(spec, u_star, step_index)
    if mode is InjectionMode.SCALED:
        u_star = solver.step(u, dt, t, None, log)
        return u_star + step_size(solver, dt) * corrector_eval(spec, u_star, step_index)
    if mode is InjectionMode.PRE_CORRECT:
        return solver.step(u + corrector_eval(spec, u, step_index), dt, t, None, log)
    if mode is InjectionMode.INDIRECT:
        return solver.step(u, dt, t, corrector_eval(spec, u, step_index), log)
    raise ValueError(f"unsupported mode {mode}")


def rollout(u0, steps: int, solver, spec: CorrectorSpec, dt: Optional[float] = None,
            start_index: int = 0, stride: int = 1) -> Trajectory:
    """Autoregressive hybrid rollout.

    Step ``i`` (global index ``start_index + i``) starts at time
    ``(start_index + i) * dt``, so chained rollouts compose exactly. On
    blowup the states recorded so far are returned with ``blowup_step``
    set to the global index of the failing step plus one.
    """
    if steps < 0 or stride < 1:
        raise ValueError("steps must be >= 0 and stride >= 1")
    h = step_size(solver, dt)
    u = np.array(u0, dtype=float)
    times = [start_index * h]
    states = [u.copy()]
    grid = solver.grid
    for i in range(steps):
        idx = start_index + i
        try:
            u = hybrid_step(u, solver, spec, dt, idx * h, idx)
        except Blowup:
            return Trajectory(grid, times, states, blowup_step=idx + 1)
        if is_blown_up(u):
            return Trajectory(grid, times, states, blowup_step=idx + 1)
        if (i + 1) % stride == 0:
            times.append((idx + 1) * h)
            states.append(u.copy())
    return Trajectory(grid, times, states)
