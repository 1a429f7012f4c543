"""Fourier pseudo-spectral Kuramoto-Sivashinsky solver.

    u_t + u u_x + u_xx + u_xxxx = s(x, t)

on a periodic domain. In Fourier space the linear part is diagonal with
symbol ``L(k) = k^2 - k^4`` and the nonlinear part is ``-(ik/2) F{u^2}``.
Time stepping uses exponential time differencing (ETD1 or ETDRK2). The
solver steps take and return *physical* fields so that the correction
module can treat both solvers alike; the transforms are routed through
:mod:`hybrid_pde.autodiff` so a step can run on a tape.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .core import (
    BLOWUP_LIMIT,
    Blowup,
    Grid1D,
    RngStream,
    Trajectory,
    fft_inverse,
    wavenumbers,
)

SERIES_THRESHOLD = 1e-4
SCHEMES = ("etd1", "etdrk2")


def linear_symbol(k):
    """Real symbol of the linear KS operator, ``-((ik)^2 + (ik)^4) = k^2 - k^4``."""
    k = np.asarray(k, dtype=float)
    return k * k - k ** 4


def derivative_multiplier(grid: Grid1D) -> np.ndarray:
    """``-(i k)/2`` per mode, with the Nyquist slot set to zero.

    The Nyquist coefficient of a real field is real and its ``+-N/2``
    partners coincide, so an odd-order derivative there cannot be
    represented by a real field. Zeroing it keeps every step Hermitian.
    """
    k = wavenumbers(grid).copy()
    k[grid.n // 2] = 0.0
    return -0.5j * k


def dealias_mask(grid: Grid1D) -> np.ndarray:
    """Two-thirds rule: keep modes with ``|m| < n/3``."""
    m = np.abs(np.fft.fftfreq(grid.n, d=1.0 / grid.n))
    return (m < grid.n / 3.0).astype(float)


@dataclass(frozen=True)
class KsEtdCoefficients:
    """Per-mode ETD tables for one step size.

    ``phi1 = (e^{L dt} - 1)/L`` and ``phi2 = (e^{L dt} - 1 - L dt)/(L^2 dt)``;
    both carry the factor ``dt`` (they tend to ``dt`` and ``dt/2`` as L -> 0).
    """

    grid: Grid1D
    dt: float
    k: np.ndarray
    lin: np.ndarray
    exp_lin: np.ndarray
    phi1: np.ndarray
    phi2: np.ndarray
    nl_multiplier: np.ndarray
    mask: Optional[np.ndarray] = None


def phi_functions(z: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """``(dt*phi1(z), dt*phi2(z))`` with a 4-term series below ``|z| < 1e-4``."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < SERIES_THRESHOLD
    zs = np.where(small, z, 0.0)
    zd = np.where(small, 1.0, z)
    em1 = np.expm1(zd)
    phi1 = np.where(small, 1.0 + zs / 2 + zs ** 2 / 6 + zs ** 3 / 24, em1 / zd)
    phi2 = np.where(
        small, 0.5 + zs / 6 + zs ** 2 / 24 + zs ** 3 / 120, (em1 - zd) / (zd * zd)
    )
    return dt * phi1, dt * phi2


def build_etd_coefficients(grid: Grid1D, dt: float, dealias: bool = False) -> KsEtdCoefficients:
    if not dt > 0:
        raise ValueError("dt must be positive")
    k = wavenumbers(grid)
    lin = linear_symbol(k)
    z = lin * dt
    phi1, phi2 = phi_functions(z, dt)
    return KsEtdCoefficients(
        grid=grid,
        dt=float(dt),
        k=k,
        lin=lin,
        exp_lin=np.exp(z),
        phi1=phi1,
        phi2=phi2,
        nl_multiplier=derivative_multiplier(grid),
        mask=dealias_mask(grid) if dealias else None,
    )


def nonlinear_term(u_hat, c: KsEtdCoefficients):
    """``N(u_hat) = -(ik/2) F{u^2}``, optionally two-thirds dealiased."""
    if c.mask is not None:
        u_hat = u_hat * c.mask
    u = ad.real(ad.ifft(u_hat))
    n_hat = ad.fft(u * u) * c.nl_multiplier
    if c.mask is not None:
        n_hat = n_hat * c.mask
    return n_hat


def _guard(u_hat):
    v = ad.value(u_hat)
    if not np.all(np.isfinite(v)):
        raise Blowup(-1, "non-finite spectrum")
    return u_hat


def step_etd1(u_hat, c: KsEtdCoefficients, source_hat=None, nonlinear: bool = True):
    """``u_hat <- e^{L dt} u_hat + phi1 (N(u_hat) + S_hat)``."""
    forcing = nonlinear_term(u_hat, c) if nonlinear else 0.0
    if source_hat is not None:
        forcing = forcing + source_hat
    return _guard(c.exp_lin * u_hat + c.phi1 * forcing)


def step_etdrk2(u_hat, c: KsEtdCoefficients, source_hat=None, nonlinear: bool = True):
    """ETD predictor followed by ``+ phi2 (N(u*) - N(u_hat))``.

    The source enters the predictor only.
    """
    n0 = nonlinear_term(u_hat, c) if nonlinear else None
    forcing = n0 if n0 is not None else 0.0
    if source_hat is not None:
        forcing = forcing + source_hat
    pred = c.exp_lin * u_hat + c.phi1 * forcing
    if n0 is None:
        return _guard(pred)
    n1 = nonlinear_term(pred, c)
    return _guard(pred + c.phi2 * (n1 - n0))


def _to_physical(u_hat):
    if ad.is_var(u_hat):
        return ad.real(ad.ifft(u_hat))
    return fft_inverse(u_hat)


@dataclass
class KSSolver:
    """Physical-space stepping interface around the ETD schemes.

    ``source_fn(u, t)`` is an optional physical-space source. ``extra_rhs``
    passed to :meth:`step` is transformed and fused with ``N + S_hat``.
    """

    grid: Grid1D
    dt: float = 0.01
    scheme: str = "etdrk2"
    dealias: bool = False
    source_fn: Optional[Callable] = None
    nonlinear: bool = True
    _tables: dict = field(default_factory=dict, repr=False, compare=False)

    name = "ks"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown KS scheme {self.scheme!r}; expected one of {SCHEMES}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    def coefficients(self, dt: Optional[float] = None) -> KsEtdCoefficients:
        dt = self.dt if dt is None else float(dt)
        if dt not in self._tables:
            self._tables[dt] = build_etd_coefficients(self.grid, dt, self.dealias)
        return self._tables[dt]

    def source(self, u, t: float):
        return None if self.source_fn is None else self.source_fn(u, t)

    def step(self, u, dt: Optional[float] = None, t: float = 0.0, extra_rhs=None, log=None):
        c = self.coefficients(dt)
        u_hat = ad.fft(u)
        src = self.source(u, t)
        if extra_rhs is not None:
            src = extra_rhs if src is None else src + extra_rhs
        src_hat = None if src is None else ad.fft(src)
        stepper = step_etd1 if self.scheme == "etd1" else step_etdrk2
        out = _to_physical(stepper(u_hat, c, src_hat, self.nonlinear))
        if not ad.is_var(out) and np.max(np.abs(out)) > BLOWUP_LIMIT:
            raise Blowup(-1, "state exceeded the blowup limit")
        return out

    def rhs(self, u, t: float = 0.0, alpha=None):
        """Physical-space right-hand side ``F^{-1}(L u_hat + N(u_hat)) + s``."""
        c = self.coefficients()
        u_hat = ad.fft(u)
        total = c.lin * u_hat
        if self.nonlinear:
            total = total + nonlinear_term(u_hat, c)
        out = ad.real(ad.ifft(total))
        src = self.source(u, t)
        return out if src is None else out + src


def ks_reference_run(
    grid: Grid1D,
    u0: np.ndarray,
    dt: float,
    steps: int,
    scheme: str = "etdrk2",
    stride: int = 1,
    dealias: bool = False,
    raise_on_blowup: bool = True,
) -> Trajectory:
    """Uncorrected autoregressive KS run recording every ``stride``-th state.

    On blowup either raises :class:`Blowup` with the failing step index or,
    with ``raise_on_blowup=False``, returns the partial trajectory with
    ``blowup_step`` set.
    """
    if steps < 0 or stride < 1:
        raise ValueError("steps must be >= 0 and stride >= 1")
    solver = KSSolver(grid, dt=dt, scheme=scheme, dealias=dealias)
    u = np.array(u0, dtype=float)
    times, states = [0.0], [u.copy()]
    for i in range(1, steps + 1):
        try:
            u = solver.step(u)
        except Blowup as err:
            if raise_on_blowup:
                raise Blowup(i, f"KS run blew up at step {i}") from err
            return Trajectory(grid, times, states, blowup_step=i)
        if i % stride == 0:
            times.append(i * dt)
            states.append(u.copy())
    return Trajectory(grid, times, states)


def random_ks_ic(
    grid: Grid1D,
    rng: RngStream,
    max_mode: int = 4,
    warmup_steps: int = 500,
    warmup_dt: float = 0.01,
) -> np.ndarray:
    """Random low-mode field, optionally advanced onto the attractor.

    ``u = sum_{m=1}^{max_mode} a_m cos(2 pi m x/L) + b_m sin(2 pi m x/L)``
    with ``a_m, b_m ~ N(0, 1)``, then ``warmup_steps`` ETDRK2 steps.
    """
    coef = rng.normal((2, max_mode))
    phase = 2.0 * np.pi * np.outer(np.arange(1, max_mode + 1), grid.x) / grid.length
    u = coef[0] @ np.cos(phase) + coef[1] @ np.sin(phase)
    if warmup_steps:
        u = ks_reference_run(grid, u, warmup_dt, warmup_steps, "etdrk2").final
    return u
