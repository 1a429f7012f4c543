"""Perturbation propagation through a time stepper, as numerics.

Linearized one-step error model for a state perturbation ``eps_u`` (added
to the state) and a right-hand-side perturbation ``eps_s``::

    delta^{n+1} = G(u^n) (delta^n + eps_u^n) + dt * eps_s^n,   G = I + dt J(u^n)

Unrolled over ``k`` steps this gives :func:`cumulative_error_linear`. The
direct/indirect error ratio is bounded by :func:`rk_bound`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .core import Blowup, Grid1D, RngStream, is_blown_up
from .correction import CorrectorSpec, GaussianNoise, InjectionMode, hybrid_step

EXPLICIT_JACOBIAN_MAX_N = 128
POWER_ITERS = 50
POWER_TOL = 1e-8


def fd_step(u: np.ndarray) -> float:
    return 1e-5 * (1.0 + float(np.max(np.abs(u))))


def jacobian_fd(rhs: Callable, u: np.ndarray, h: Optional[float] = None) -> np.ndarray:
    """Central-difference Jacobian; column ``j`` is ``(rhs(u+h e_j) - rhs(u-h e_j)) / 2h``."""
    u = np.asarray(u, dtype=float)
    h = fd_step(u) if h is None else h
    if not h > 0:
        raise ValueError("finite-difference step must be positive")
    n = u.size
    jac = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        jac[:, j] = (np.asarray(rhs(u + e)) - np.asarray(rhs(u - e))) / (2.0 * h)
    return jac


def frozen_rhs(solver, u_base: np.ndarray, t: float = 0.0) -> Callable:
    """The solver RHS with state-derived constants (WENO ``alpha``) frozen at ``u_base``."""
    if getattr(solver, "name", "") == "burgers":
        from .burgers import max_speed

        alpha = max_speed(u_base)
        return lambda v: solver.rhs(v, t, alpha=alpha)
    return lambda v: solver.rhs(v, t)


@dataclass(frozen=True)
class AmplificationMatrix:
    entries: np.ndarray
    dt: float
    base_state: Optional[np.ndarray] = None


def amplification(jac: np.ndarray, dt: float, base_state=None) -> AmplificationMatrix:
    jac = np.asarray(jac, dtype=float)
    if jac.ndim != 2 or jac.shape[0] != jac.shape[1]:
        raise ValueError("Jacobian must be square")
    return AmplificationMatrix(np.eye(len(jac)) + dt * jac, float(dt), base_state)


def _entries(g) -> np.ndarray:
    return g.entries if isinstance(g, AmplificationMatrix) else np.asarray(g, dtype=float)


def cumulative_error_linear(g_seq: Sequence, eps_u_seq: Sequence, eps_s_seq: Sequence,
                            dt: float) -> np.ndarray:
    """``sum_m (prod_{i=m+1}^{k-1} G_i) [G_m eps_u^m + dt eps_s^m]``; empty product is I."""
    k = len(g_seq)
    if len(eps_u_seq) != k or len(eps_s_seq) != k:
        raise ValueError("G, eps_u and eps_s sequences must have equal length")
    if k == 0:
        raise ValueError("need at least one step")
    gs = [_entries(g) for g in g_seq]
    n = gs[0].shape[0]
    total = np.zeros(n)
    for m in range(k):
        prod = np.eye(n)
        for i in range(m + 1, k):
            prod = gs[i] @ prod
        total = total + prod @ (gs[m] @ np.asarray(eps_u_seq[m]) + dt * np.asarray(eps_s_seq[m]))
    return total


def geometric_sum(r: float, k: int) -> float:
    """Closed form of ``sum_{m=0}^{k-1} r^{k-m} = r (r^k - 1)/(r - 1)``."""
    if r == 1.0:
        return float(k)
    return r * (r ** k - 1.0) / (r - 1.0)


def ratio_bound_terms(k: int, dt: float, lip: float, eps: float) -> tuple[float, float]:
    """Upper bounds for the direct (numerator) and indirect (denominator) cumulative errors."""
    r = 1.0 + dt * lip
    num = eps * sum(r ** (k - m) for m in range(k))
    den = dt * eps * sum(r ** (k - m - 1) for m in range(k))
    return num, den


def rk_bound(dt: float, lip: float) -> float:
    if not dt > 0 or lip < 0:
        raise ValueError("need dt > 0 and L >= 0")
    return (1.0 + dt * lip) / dt


def spectral_norm(op, n: Optional[int] = None, iters: int = POWER_ITERS, tol: float = POWER_TOL,
                  seed: int = 0, adjoint: Optional[Callable] = None) -> float:
    """Largest singular value by power iteration on ``A^T A``.

    ``op`` is a matrix, or a callable ``v -> A v`` together with ``adjoint``
    ``w -> A^T w`` and the dimension ``n``.
    """
    if callable(op):
        if adjoint is None or n is None:
            raise ValueError("matrix-free use needs the adjoint and the dimension")
        fwd, adj = op, adjoint
    else:
        a = np.asarray(op, dtype=float)
        n = a.shape[1]
        fwd, adj = (lambda v: a @ v), (lambda w: a.T @ w)
    v = np.random.Generator(np.random.Philox(seed)).standard_normal(n)
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(iters):
        w = adj(fwd(v))
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            return 0.0
        new = np.sqrt(nw)
        v = w / nw
        if abs(new - sigma) <= tol * new:
            sigma = new
            break
        sigma = new
    return float(sigma)


def _rhs_of(target, u):
    if hasattr(target, "rhs"):
        return frozen_rhs(target, u)
    return target


def jacobian_norm(target, u: np.ndarray, **kw) -> float:
    """Spectral norm of the RHS Jacobian at ``u``.

    Up to ``n = 128`` the Jacobian is built explicitly; beyond that the
    power iteration uses forward-difference Jacobian-vector products and
    tape vector-Jacobian products.
    """
    u = np.asarray(u, dtype=float)
    rhs = _rhs_of(target, u)
    if u.size <= EXPLICIT_JACOBIAN_MAX_N:
        return spectral_norm(jacobian_fd(rhs, u), **kw)
    f0 = np.asarray(rhs(u))
    h = fd_step(u)

    def jvp(v):
        return (np.asarray(rhs(u + h * v)) - f0) / h

    def vjp(w):
        tape = ad.Tape()
        x = tape.leaf(u)
        out = ad.sum(rhs(x) * w)
        return tape.gradient(out, [x])[0]

    return spectral_norm(jvp, n=u.size, adjoint=vjp, **kw)


def lipschitz_estimate(target, samples: Sequence[np.ndarray], **kw) -> float:
    """``max`` over samples of the spectral norm of the RHS Jacobian.

    ``target`` is a solver (its RHS is used with frozen constants) or a
    callable RHS.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("need at least one sample state")
    return max(jacobian_norm(target, u, **kw) for u in samples)


def lyapunov_max(solver, u0: np.ndarray, total_t: float, renorm_every: int = 1,
                 rng: Optional[RngStream] = None, delta0: float = 1e-8,
                 dt: Optional[float] = None) -> float:
    """Two-trajectory estimate of the largest Lyapunov exponent.

    The separation is rescaled to ``delta0`` every ``renorm_every`` steps;
    the return value is the accumulated log growth divided by elapsed time.
    """
    if renorm_every < 1:
        raise ValueError("renorm_every must be >= 1")
    h = float(solver.dt if dt is None else dt)
    steps = int(round(total_t / h))
    if steps < renorm_every:
        raise ValueError("total time shorter than one renormalization interval")
    rng = RngStream(0) if rng is None else rng
    u = np.array(u0, dtype=float)
    d = rng.normal(u.shape)
    v = u + delta0 * d / np.linalg.norm(d)
    acc, elapsed = 0.0, 0
    for i in range(1, steps + 1):
        u = solver.step(u, h, (i - 1) * h)
        v = solver.step(v, h, (i - 1) * h)
        if is_blown_up(u) or is_blown_up(v):
            raise Blowup(i, "Lyapunov trajectory blew up")
        if i % renorm_every == 0:
            sep = v - u
            norm = float(np.linalg.norm(sep))
            acc += np.log(norm / delta0)
            v = u + sep * (delta0 / norm)
            elapsed = i
    return acc / (elapsed * h)


def rk_empirical(solver, u0: np.ndarray, eps: float = 1e-5, k: int = 10,
                 rng: Optional[RngStream] = None, dt: Optional[float] = None,
                 direct_mode: InjectionMode = InjectionMode.DIRECT, start_index: int = 0) -> float:
    """Empirical error dominance ratio ``||delta_direct|| / ||delta_indirect||`` after ``k`` steps.

    The direct and indirect runs share the same noise stream, so each step
    injects the same draw through the two topologies.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = RngStream(0) if rng is None else rng
    h = float(solver.dt if dt is None else dt)
    noise = GaussianNoise(eps, rng)
    specs = [CorrectorSpec(), CorrectorSpec(noise, direct_mode), CorrectorSpec(noise, InjectionMode.INDIRECT)]
    states = [np.array(u0, dtype=float) for _ in specs]
    for i in range(k):
        idx = start_index + i
        for j, spec in enumerate(specs):
            states[j] = hybrid_step(states[j], solver, spec, h, idx * h, idx)
            if is_blown_up(states[j]):
                raise Blowup(idx + 1, "rollout blew up inside rk_empirical")
    base, direct, indirect = states
    return float(np.linalg.norm(direct - base) / np.linalg.norm(indirect - base))


@dataclass
class DiffusionSolver:
    """Forward-Euler heat equation ``u_t = nu u_xx`` (central differences).

    Its RHS Jacobian is the constant circulant ``nu/dx^2 (1, -2, 1)``.
    """

    grid: Grid1D
    nu: float = 1.0
    dt: float = 1e-3
    name = "diffusion"

    def rhs(self, u, t: float = 0.0, alpha=None):
        dx = self.grid.dx
        return (self.nu / (dx * dx)) * (ad.roll(u, -1) - 2.0 * u + ad.roll(u, 1))

    def step(self, u, dt: Optional[float] = None, t: float = 0.0, extra_rhs=None, log=None):
        h = self.dt if dt is None else dt
        rate = self.rhs(u, t)
        if extra_rhs is not None:
            rate = rate + extra_rhs
        out = u + h * rate
        if not np.all(np.isfinite(ad.value(out))):
            raise Blowup(-1, "non-finite diffusion state")
        return out

    def lipschitz(self) -> float:
        """Exact ``||J||_2 = (4 nu/dx^2) max_m sin^2(pi m/n)``."""
        m = np.arange(self.grid.n)
        return float(4.0 * self.nu / self.grid.dx ** 2 * np.max(np.sin(np.pi * m / self.grid.n) ** 2))
