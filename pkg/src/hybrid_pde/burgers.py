"""WENO5 finite-difference solver for the viscous, forced Burgers equation.

    u_t + (u^2/2)_x = nu u_xx + source

Global Lax-Friedrichs splitting with ``alpha = max|u|``, Jiang-Shu WENO5
reconstruction of both split fluxes, a conservative flux difference,
second-order central diffusion and forward Euler in time. All spatial
operators act along the last axis and go through :mod:`hybrid_pde.autodiff`
so they can be recorded on a tape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import ConstantLog
from .core import Blowup, Grid1D

GAMMA = (0.1, 0.6, 0.3)
EPS_WENO = 1e-12
SPEED_FLOOR = 1e-8


class NoRoot(RuntimeError):
    """Characteristic relation could not be bracketed (characteristics crossed)."""


@dataclass(frozen=True)
class BurgersParams:
    """Physical and numerical parameters.

    ``cfl=None`` selects fixed steps of ``dt``; otherwise each requested step
    is split into sub-steps obeying ``dt_sub <= cfl * dx / max|u|``.
    """

    nu: float = 0.0
    dt: float = 1e-3
    cfl: float | None = None
    dt_max: float = 1e-2
    eps_weno: float = EPS_WENO
    gamma: tuple[float, float, float] = GAMMA

    def __post_init__(self):
        if self.nu < 0:
            raise ValueError("viscosity must be non-negative")
        if self.cfl is not None and not 0 < self.cfl <= 1:
            raise ValueError("cfl must lie in (0, 1]")
        if not self.eps_weno > 0:
            raise ValueError("eps_weno must be positive")
        if min(self.gamma) <= 0 or abs(sum(self.gamma) - 1.0) > 1e-12:
            raise ValueError("linear weights must be positive and sum to 1")


@dataclass(frozen=True)
class ForcingParams:
    """Sum of travelling sinusoids ``A sin(omega t + 2 pi l x / L + phi)``."""

    amplitudes: tuple[float, ...]
    frequencies: tuple[float, ...]
    wavenumbers: tuple[int, ...]
    phases: tuple[float, ...]
    length: float

    def __post_init__(self):
        sizes = {len(self.amplitudes), len(self.frequencies), len(self.wavenumbers), len(self.phases)}
        if len(sizes) != 1:
            raise ValueError("forcing terms must have matching lengths")
        if any(int(l) != l or l < 1 for l in self.wavenumbers):
            raise ValueError("forcing wavenumbers must be positive integers")

    @classmethod
    def random(cls, rng: np.random.Generator, length: float = 16.0, terms: int = 5,
               amplitude: float = 0.5, frequency: float = 0.4, max_wavenumber: int = 3):
        # frequencies drawn from the symmetric interval [-0.4, 0.4]
        return cls(
            amplitudes=tuple(rng.uniform(-amplitude, amplitude, terms)),
            frequencies=tuple(rng.uniform(-frequency, frequency, terms)),
            wavenumbers=tuple(int(v) for v in rng.integers(1, max_wavenumber + 1, terms)),
            phases=tuple(rng.uniform(0.0, 2 * np.pi, terms)),
            length=length,
        )

    def to_dict(self) -> dict:
        return {k: list(getattr(self, k)) for k in ("amplitudes", "frequencies", "wavenumbers", "phases")} | {
            "length": self.length}


def forcing_eval(fp: ForcingParams | None, t: float, grid: Grid1D) -> np.ndarray:
    out = np.zeros(grid.n)
    if fp is None:
        return out
    x = grid.x
    for a, w, l, phi in zip(fp.amplitudes, fp.frequencies, fp.wavenumbers, fp.phases):
        out += a * np.sin(w * t + 2 * np.pi * l * x / fp.length + phi)
    return out


def flux_split(u, alpha):
    f = 0.5 * (u * u)
    return 0.5 * (f + alpha * u), 0.5 * (f - alpha * u)


def smoothness_indicators(fm2, fm1, f0, fp1, fp2):
    """Jiang-Shu indicators of the three candidate stencils around ``f0``."""
    b0 = (13.0 / 12.0) * _sq(fm2 - 2.0 * fm1 + f0) + 0.25 * _sq(fm2 - 4.0 * fm1 + 3.0 * f0)
    b1 = (13.0 / 12.0) * _sq(fm1 - 2.0 * f0 + fp1) + 0.25 * _sq(fm1 - fp1)
    b2 = (13.0 / 12.0) * _sq(f0 - 2.0 * fp1 + fp2) + 0.25 * _sq(3.0 * f0 - 4.0 * fp1 + fp2)
    return b0, b1, b2


def weno_weights(betas, gamma=GAMMA, eps: float = EPS_WENO):
    raw = [g / _sq(eps + b) for g, b in zip(gamma, betas)]
    total = raw[0] + raw[1] + raw[2]
    return tuple(w / total for w in raw)


def candidate_fluxes(fm2, fm1, f0, fp1, fp2):
    q0 = (1.0 / 3.0) * fm2 - (7.0 / 6.0) * fm1 + (11.0 / 6.0) * f0
    q1 = -(1.0 / 6.0) * fm1 + (5.0 / 6.0) * f0 + (1.0 / 3.0) * fp1
    q2 = (1.0 / 3.0) * f0 + (5.0 / 6.0) * fp1 - (1.0 / 6.0) * fp2
    return q0, q1, q2


def _weno_side(stencil, gamma, eps):
    betas = smoothness_indicators(*stencil)
    w = weno_weights(betas, gamma, eps)
    q = candidate_fluxes(*stencil)
    return w[0] * q[0] + w[1] * q[1] + w[2] * q[2]


def weno_reconstruct(fp, fm, gamma=GAMMA, eps: float = EPS_WENO):
    """Interface flux at ``x_{i+1/2}`` for every ``i``.

    ``fp`` uses the upwind stencil ``f_{i-2} .. f_{i+2}``; ``fm`` uses the same
    formulas on the stencil reflected about the interface, ``f_{i+3} .. f_{i-1}``.
    """
    plus = _weno_side(
        (ad.roll(fp, 2), ad.roll(fp, 1), fp, ad.roll(fp, -1), ad.roll(fp, -2)), gamma, eps)
    minus = _weno_side(
        (ad.roll(fm, -3), ad.roll(fm, -2), ad.roll(fm, -1), fm, ad.roll(fm, 1)), gamma, eps)
    return plus + minus


def max_speed(u) -> np.ndarray:
    """``max|u|`` per field, kept as a broadcastable ``(..., 1)`` array."""
    return np.max(np.abs(ad.value(u)), axis=-1, keepdims=True)


def convective_term(u, dx: float, p: BurgersParams = BurgersParams(), alpha=None):
    """``-(F_{i+1/2} - F_{i-1/2}) / dx`` with ``alpha`` frozen (not differentiated)."""
    if alpha is None:
        alpha = max_speed(u)
    fplus, fminus = flux_split(u, alpha)
    flux = weno_reconstruct(fplus, fminus, p.gamma, p.eps_weno)
    return -(flux - ad.roll(flux, 1)) * (1.0 / dx)


def diffusion_term(u, dx: float, nu: float):
    return (nu / (dx * dx)) * (ad.roll(u, -1) - 2.0 * u + ad.roll(u, 1))


def rhs_burgers(u, p: BurgersParams, source, dx: float, alpha=None):
    out = convective_term(u, dx, p, alpha)
    if p.nu:
        out = out + diffusion_term(u, dx, p.nu)
    if source is not None:
        out = out + source
    return out


def step_euler(u, dt: float, p: BurgersParams, dx: float, source=None, extra_rhs=None, alpha=None):
    rate = rhs_burgers(u, p, source, dx, alpha)
    if extra_rhs is not None:
        rate = rate + extra_rhs
    out = u + dt * rate
    if not np.all(np.isfinite(ad.value(out))):
        raise Blowup(-1, "non-finite state after Euler step")
    return out


def adaptive_dt(u, p: BurgersParams, dx: float) -> float:
    speed = max(float(np.max(np.abs(ad.value(u)))), SPEED_FLOOR)
    cfl = 1.0 if p.cfl is None else p.cfl
    return min(cfl * dx / speed, p.dt_max)


def _take(log: ConstantLog | None, compute):
    return compute() if log is None else log.take(compute)


@dataclass
class BurgersSolver:
    """Forward-Euler WENO5 Burgers stepper.

    ``source_fn(u, t)`` adds a state-dependent source (e.g. ``beta u^2``)
    on top of the external ``forcing``.
    """

    grid: Grid1D
    params: BurgersParams = field(default_factory=BurgersParams)
    forcing: ForcingParams | None = None
    source_fn: Callable | None = None

    name = "burgers"

    @property
    def dt(self) -> float:
        return self.params.dt

    def source(self, u, t: float):
        s = None
        if self.forcing is not None:
            s = forcing_eval(self.forcing, t, self.grid)
        if self.source_fn is not None:
            extra = self.source_fn(u, t)
            s = extra if s is None else extra + s
        return s

    def rhs(self, u, t: float = 0.0, alpha=None):
        return rhs_burgers(u, self.params, self.source(u, t), self.grid.dx, alpha)

    def step(self, u, dt: float | None = None, t: float = 0.0, extra_rhs=None,
             log: ConstantLog | None = None):
        """Advance by ``dt``; with CFL control this may take several sub-steps.

        ``extra_rhs`` is held constant over the sub-steps and forcing is
        evaluated at each sub-step's start time.
        """
        dt = self.params.dt if dt is None else dt
        dx = self.grid.dx
        if self.params.cfl is None:
            alpha = _take(log, lambda: max_speed(u))
            return step_euler(u, dt, self.params, dx, self.source(u, t), extra_rhs, alpha)
        elapsed = 0.0
        while elapsed < dt:
            h = _take(log, lambda: min(adaptive_dt(u, self.params, dx), dt - elapsed))
            if dt - elapsed - h < 1e-14 * dt:
                h = dt - elapsed
            alpha = _take(log, lambda: max_speed(u))
            u = step_euler(u, h, self.params, dx, self.source(u, t + elapsed), extra_rhs, alpha)
            elapsed += h
        return u

    def advance_to(self, u, t0: float, t1: float):
        """Integrate from ``t0`` to ``t1`` with CFL-limited steps; returns ``(u, steps)``."""
        dx = self.grid.dx
        t, steps = t0, 0
        while t < t1 - 1e-14 * max(1.0, abs(t1)):
            h = min(adaptive_dt(u, self.params, dx), t1 - t)
            u = step_euler(u, h, self.params, dx, self.source(u, t))
            t += h
            steps += 1
        return u, steps


def _sq(x):
    return x * x


# --- analytical oracles -------------------------------------------------------------


class SineIC:
    """``h0(x) = sin(2 pi x / L)`` with its closed-form antiderivative."""

    def __init__(self, length: float = 2.0):
        self.length = length
        self.bound = 1.0

    def __call__(self, x):
        return np.sin(2 * np.pi * np.asarray(x) / self.length)

    def antiderivative(self, y):
        return -self.length / (2 * np.pi) * np.cos(2 * np.pi * np.asarray(y) / self.length)


_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def oracle_hopf_lax(h0, x, t: float, scan: int = 4096, golden_iters: int = 40):
    """Entropy solution of ``u_t + u u_x = 0`` via the Hopf-Lax minimization.

    The minimizer ``y*`` of ``F(y) + (x - y)^2 / (2t)`` is located by a dense
    scan of ``|x - y| <= t max|h0|`` followed by golden-section refinement and
    a bisection polish of ``h0(y) = (x - y) / t``; the velocity is
    ``(x - y*) / t``. ``h0`` must provide ``antiderivative`` and ``bound``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if t < 1e-8:
        return h0(x)
    F = h0.antiderivative
    reach = t * h0.bound * (1.0 + 1e-3)
    offsets = np.linspace(-reach, reach, scan)
    ys = x[:, None] + offsets[None, :]
    obj = F(ys) + (x[:, None] - ys) ** 2 / (2 * t)
    best = np.argmin(obj, axis=1)
    h = offsets[1] - offsets[0]
    y_best = ys[np.arange(len(x)), best]
    lo, hi = y_best - h, y_best + h

    def objective(y):
        return F(y) + (x - y) ** 2 / (2 * t)

    a, b = lo.copy(), hi.copy()
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = objective(c), objective(d)
    for _ in range(golden_iters):
        left = fc < fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        c_next = np.where(left, b - _GOLDEN * (b - a), d)
        d_next = np.where(left, c, a + _GOLDEN * (b - a))
        fc_next = np.where(left, objective(c_next), fd)
        fd_next = np.where(left, fc, objective(d_next))
        c, d, fc, fd = c_next, d_next, fc_next, fd_next
    y_star = 0.5 * (a + b)

    # first-order condition g(y) = h0(y) - (x - y)/t, increasing through the minimum
    def g(y):
        return h0(y) - (x - y) / t

    ga, gb = g(a), g(b)
    ok = (ga <= 0) & (gb >= 0)
    if np.any(ok):
        aa, bb = a.copy(), b.copy()
        for _ in range(60):
            mid = 0.5 * (aa + bb)
            gm = g(mid)
            aa = np.where(gm <= 0, mid, aa)
            bb = np.where(gm <= 0, bb, mid)
        y_star = np.where(ok, 0.5 * (aa + bb), y_star)
    return (x - y_star) / t


def characteristic_foot(x, t: float, beta: float = -2.0, h0=None, scan: int = 1024):
    """Foot ``y`` of the characteristic through ``(x, t)`` for ``u_t + u u_x = beta u^2``.

    Solves ``y - ln(1 - beta t h0(y)) / beta = x`` by locating a sign change on
    a ``scan``-point grid and bisecting it. Default ``h0`` is ``sin(2 pi x)``.
    """
    h0 = SineIC(1.0) if h0 is None else h0
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if t == 0:
        return x.copy()
    yy = np.linspace(0.0, 1.0, scan)
    denom = 1.0 - beta * t * h0(yy)
    if np.any(denom <= 0):
        raise NoRoot("1 - beta t h0 vanishes: characteristics left the valid branch")
    reach = float(np.max(np.abs(np.log(denom) / beta))) * 1.05 + 1e-12

    def g(y):
        return y - np.log(1.0 - beta * t * h0(y)) / beta - x

    offsets = np.linspace(-reach, reach, scan)
    ys = x[:, None] + offsets[None, :]
    gs = ys - np.log(1.0 - beta * t * h0(ys)) / beta - x[:, None]
    sign_change = (gs[:, :-1] <= 0) & (gs[:, 1:] > 0)
    if np.any(sign_change.sum(axis=1) != 1):
        raise NoRoot("implicit characteristic relation has no unique bracketed root")
    idx = np.argmax(sign_change, axis=1)
    rows = np.arange(len(x))
    lo, hi = ys[rows, idx], ys[rows, idx + 1]
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        below = g(mid) <= 0
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def characteristic_residual(x, y, t: float, beta: float = -2.0, h0=None):
    h0 = SineIC(1.0) if h0 is None else h0
    return y - np.log(1.0 - beta * t * h0(y)) / beta - x


def oracle_quadratic_source(x, t: float, beta: float = -2.0, h0=None, scan: int = 1024):
    """Exact ``u(x, t) = h0(y) / (1 - beta t h0(y))`` along the characteristic foot ``y``."""
    h0 = SineIC(1.0) if h0 is None else h0
    y = characteristic_foot(x, t, beta, h0, scan)
    hy = h0(y)
    return hy / (1.0 - beta * t * hy)
