"""Grids, fields, spectral transforms, RNG streams and trajectory containers.

Fields are plain ``numpy`` arrays whose last axis is the spatial axis, so a
stack of trajectories of shape ``(batch, n)`` goes through every operator
unchanged. :class:`Grid1D` carries the geometry.

Transform convention (used everywhere in the package): the forward transform
is the unnormalized sum ``u_hat[k] = sum_j u[j] exp(-i k x_j)`` and the
inverse divides by ``n``. Spectra are stored full-length in the standard FFT
order ``[0, 1, ..., n/2 - 1, n/2, -n/2 + 1, ..., -1]``; the Nyquist slot is
reported as the positive wavenumber ``+pi n / L``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

HERMITIAN_RTOL = 1e-10
BLOWUP_LIMIT = 1e6


class Blowup(RuntimeError):
    """A state became non-finite (or exceeded the blowup limit)."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"solution blew up at step {step}")


class NonHermitianInput(ValueError):
    """Spectrum does not correspond to a real field."""


class LengthMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Grid1D:
    """Uniform periodic grid ``x_j = j * dx`` on ``[0, length)``."""

    n: int
    length: float
    periodic: bool = True

    def __post_init__(self):
        if self.n < 8 or self.n % 2:
            raise ValueError(f"grid needs an even point count >= 8, got {self.n}")
        if not self.length > 0:
            raise ValueError("domain length must be positive")
        if not self.periodic:
            raise ValueError("only periodic grids are supported")

    @property
    def dx(self) -> float:
        return self.length / self.n

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.n) * self.dx


def check_field(u: np.ndarray, grid: Grid1D) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != grid.n:
        raise LengthMismatch(f"field has {u.shape[-1]} points, grid has {grid.n}")
    if not np.all(np.isfinite(u)):
        raise ValueError("field contains non-finite values")
    return u


def is_blown_up(u, limit: float = BLOWUP_LIMIT) -> bool:
    u = np.asarray(u)
    return (not np.all(np.isfinite(u))) or bool(np.max(np.abs(u)) > limit)


def wavenumbers(grid: Grid1D) -> np.ndarray:
    """Wavenumbers ``2 pi m / L`` in storage order, Nyquist taken as +N/2."""
    m = np.fft.fftfreq(grid.n, d=1.0 / grid.n)
    m[grid.n // 2] = grid.n // 2
    return 2.0 * np.pi * m / grid.length


def fft_forward(u: np.ndarray) -> np.ndarray:
    return np.fft.fft(u, axis=-1)


def hermitian_residue(coeffs: np.ndarray) -> float:
    """Relative distance of a spectrum from Hermitian symmetry."""
    coeffs = np.asarray(coeffs)
    mirrored = np.conj(np.roll(coeffs[..., ::-1], 1, axis=-1))
    scale = max(float(np.max(np.abs(coeffs), initial=0.0)), np.finfo(float).tiny)
    return float(np.max(np.abs(coeffs - mirrored), initial=0.0)) / scale


def fft_inverse(coeffs: np.ndarray, rtol: float = HERMITIAN_RTOL) -> np.ndarray:
    """Inverse transform of a Hermitian spectrum; raises if the result is not real."""
    u = np.fft.ifft(coeffs, axis=-1)
    scale = float(np.max(np.abs(u), initial=0.0))
    residue = float(np.max(np.abs(u.imag), initial=0.0))
    if residue > rtol * max(scale, np.finfo(float).tiny):
        raise NonHermitianInput(
            f"imaginary residue {residue:.3e} exceeds tolerance (scale {scale:.3e})"
        )
    return u.real


@dataclass(frozen=True)
class RngStream:
    """Reproducible Gaussian source keyed by ``(seed, stream)``.

    Draws are produced by a Philox counter-based generator seeded through
    :class:`numpy.random.SeedSequence`. :meth:`at` derives an independent
    child keyed by an extra integer (the step index), so a draw never depends
    on how many draws happened before it.
    """

    seed: int
    stream: int = 0
    path: tuple[int, ...] = ()

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream, *self.path))
        return np.random.Generator(np.random.Philox(ss))

    def at(self, *key: int) -> "RngStream":
        return RngStream(self.seed, self.stream, self.path + tuple(int(k) for k in key))

    def normal(self, shape) -> np.ndarray:
        return self.generator().standard_normal(shape)


def gaussian_field(grid: Grid1D, eps: float, rng: RngStream, batch: Sequence[int] = ()) -> np.ndarray:
    """i.i.d. ``N(0, eps^2)`` samples on the grid."""
    if eps < 0:
        raise ValueError("eps must be non-negative")
    shape = (*batch, grid.n)
    if eps == 0:
        return np.zeros(shape)
    return eps * rng.normal(shape)


@dataclass
class Trajectory:
    """Recorded states of a rollout.

    ``states`` has shape ``(len(times), ..., n)``. A rollout that blew up keeps
    the states recorded before the failure and stores the failing step index
    in ``blowup_step``.
    """

    grid: Grid1D
    times: np.ndarray
    states: np.ndarray
    blowup_step: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if len(self.times) != len(self.states):
            raise LengthMismatch("times and states differ in length")
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("trajectory times must be strictly increasing")
        if self.states.shape[-1] != self.grid.n:
            raise LengthMismatch("states do not match the grid")

    @property
    def blew_up(self) -> bool:
        return self.blowup_step is not None

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def __len__(self):
        return len(self.times)
