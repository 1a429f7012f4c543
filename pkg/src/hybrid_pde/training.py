"""Unrolled solver-in-the-loop training of a network corrector.

The loss of one window ``(u^0, ..., u^m)`` is

    (1/m) sum_{s=1}^{m} mean((S^s(u^0) - u^s)^2) + weight_decay * ||theta||^2

where ``S`` is the hybrid step. A minibatch averages window losses. The
gradient is taken with :mod:`hybrid_pde.autodiff` through every solver step;
values the tape treats as constants (WENO ``alpha``, CFL sub-step sizes)
are recorded in a :class:`~hybrid_pde.autodiff.ConstantLog` per window.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ConstantLog, Tape
from .core import BLOWUP_LIMIT, Blowup
from .correction import CorrectorSpec, InjectionMode, Neural, hybrid_step
from .network import NeuralParams

log = logging.getLogger(__name__)

SENTINEL_LOSS = 1e6


class Diverged(RuntimeError):
    """Every window of an epoch hit the blowup sentinel."""


@dataclass(frozen=True)
class TrainConfig:
    unroll_m: int = 4
    lr: float = 1e-4
    weight_decay: float = 1e-7
    batch: int = 8
    epochs: int = 10
    steps_per_epoch: int = 20
    downsample_factor: int = 8
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8
    holdout: float = 0.1
    staged: bool = False
    stage_fraction: float = 0.3
    max_val_windows: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.unroll_m < 1:
            raise ValueError("unroll_m must be >= 1")
        if not self.lr >= 0:
            raise ValueError("lr must be non-negative")
        if self.batch < 1 or self.epochs < 0 or self.steps_per_epoch < 1:
            raise ValueError("batch, epochs and steps_per_epoch must be positive")
        if not 0 <= self.holdout < 1:
            raise ValueError("holdout must lie in [0, 1)")

    @property
    def iterations(self) -> int:
        return self.epochs * self.steps_per_epoch


@dataclass(frozen=True)
class Window:
    """Reference states ``(m+1, n)`` starting at global step ``start``."""

    states: np.ndarray
    solver: object
    start: int = 0

    @property
    def m(self) -> int:
        return len(self.states) - 1


def _blown(u) -> bool:
    v = ad.value(u)
    return (not np.all(np.isfinite(v))) or bool(np.max(np.abs(v)) > BLOWUP_LIMIT)


def window_data_loss(theta, params: NeuralParams, window: Window, mode, log_: Optional[ConstantLog] = None):
    """Data term of one window; ``theta`` may be a tape variable or an array."""
    mode = InjectionMode.parse(mode)
    spec = CorrectorSpec(Neural(params, theta), mode)
    solver = window.solver
    h = float(solver.dt)
    u = window.states[0]
    total = 0.0
    for s in range(1, window.m + 1):
        idx = window.start + s - 1
        u = hybrid_step(u, solver, spec, None, idx * h, idx, log_)
        if _blown(u):
            raise Blowup(idx + 1, "unrolled state blew up")
        d = u - window.states[s]
        total = total + ad.mean(d * d)
    return total * (1.0 / window.m)


def regularizer(theta, weight_decay: float):
    return weight_decay * ad.sum(theta * theta)


def unrolled_loss(params: NeuralParams, windows: Sequence[Window], mode, cfg: TrainConfig,
                  theta=None, logs: Optional[Sequence[ConstantLog]] = None) -> float:
    """Eager minibatch loss; ``logs`` replays frozen constants window by window."""
    theta = params.theta if theta is None else np.asarray(theta, dtype=float)
    windows = _as_windows(windows)
    parts = []
    for i, w in enumerate(windows):
        lg = None if logs is None else logs[i].replay()
        try:
            parts.append(float(window_data_loss(theta, params, w, mode, lg)))
        except Blowup:
            parts.append(SENTINEL_LOSS)
    return float(np.mean(parts)) + float(regularizer(theta, cfg.weight_decay))


@dataclass
class LossInfo:
    loss: float
    data: float
    sentinel_windows: int
    logs: list = field(default_factory=list)


def loss_and_grad(params: NeuralParams, windows: Sequence[Window], mode, cfg: TrainConfig,
                  theta=None) -> tuple[float, np.ndarray, LossInfo]:
    """Minibatch loss and its exact reverse-mode gradient in ``theta``.

    A window that blows up contributes the sentinel loss and no gradient.
    """
    theta = params.theta if theta is None else np.asarray(theta, dtype=float)
    windows = _as_windows(windows)
    grad = np.zeros_like(theta)
    data_parts, logs, sentinels = [], [], 0
    for w in windows:
        tape = Tape()
        th = tape.leaf(theta)
        lg = ConstantLog()
        try:
            out = window_data_loss(th, params, w, mode, lg)
        except Blowup:
            data_parts.append(SENTINEL_LOSS)
            logs.append(lg)
            sentinels += 1
            continue
        logs.append(lg)
        data_parts.append(float(ad.value(out)))
        if ad.is_var(out):
            (g,) = tape.gradient(out, [th])
            grad += g
    grad /= len(windows)
    grad += 2.0 * cfg.weight_decay * theta
    data = float(np.mean(data_parts))
    loss = data + float(regularizer(theta, cfg.weight_decay))
    return loss, grad, LossInfo(loss, data, sentinels, logs)


def grad_theta(params, windows, mode, cfg, theta=None) -> np.ndarray:
    return loss_and_grad(params, windows, mode, cfg, theta)[1]


def _as_windows(windows) -> list:
    if isinstance(windows, Window):
        return [windows]
    return list(windows)


class Adam:
    """Adaptive-moment gradient descent on a flat vector."""

    def __init__(self, size: int, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def update(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def all_windows(references, m: int) -> list[tuple[int, int]]:
    """Every ``(trajectory, start)`` pair admitting an ``m``-step window."""
    out = []
    for i, ref in enumerate(references):
        for s in range(len(ref.trajectory) - m):
            out.append((i, s))
    return out


def make_window(references, key: tuple[int, int], m: int) -> Window:
    i, s = key
    ref = references[i]
    return Window(ref.trajectory.states[s:s + m + 1], ref.solver, ref.start_index + s)


@dataclass
class TrainResult:
    params: NeuralParams
    history: list
    val_history: list
    best_epoch: int
    sentinel_count: int = 0


def train(cfg: TrainConfig, references, params: NeuralParams, mode,
          callback=None) -> TrainResult:
    """Adam over random minibatches of unroll windows; returns best-validation parameters.

    ``references`` is a sequence of :class:`~hybrid_pde.dataset.Reference`.
    With ``cfg.staged`` the first ``stage_fraction`` of epochs unroll
    ``min(2, m)`` steps. Validation uses the full ``m`` on a fixed held-out
    subset of windows.
    """
    mode = InjectionMode.parse(mode)
    if not references:
        raise ValueError("training needs at least one reference trajectory")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(cfg.seed)))
    m = cfg.unroll_m
    keys = all_windows(references, m)
    if not keys:
        raise ValueError("reference trajectories are shorter than one unroll window")
    order = rng.permutation(len(keys))
    n_val = int(round(cfg.holdout * len(keys)))
    if cfg.holdout > 0:
        n_val = max(1, n_val)
    val_keys = [keys[i] for i in order[:n_val]]
    train_keys = [keys[i] for i in order[n_val:]]
    if not train_keys:
        raise ValueError("no training windows remain after the holdout split")
    val_keys = val_keys[: cfg.max_val_windows]

    theta = params.theta.copy()
    opt = Adam(theta.size, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps_opt)
    history, val_history = [], []

    def val_loss(th):
        if not val_keys:
            return float("nan")
        ws = [make_window(references, k, m) for k in val_keys]
        return unrolled_loss(params, ws, mode, cfg, theta=th)

    best_theta, best_val, best_epoch = theta.copy(), val_loss(theta), -1
    staged_epochs = int(np.floor(cfg.stage_fraction * cfg.epochs)) if cfg.staged else 0
    total_sentinels = 0
    for epoch in range(cfg.epochs):
        m_now = min(2, m) if epoch < staged_epochs else m
        epoch_sentinel, epoch_windows = 0, 0
        for _ in range(cfg.steps_per_epoch):
            picks = rng.integers(0, len(train_keys), size=cfg.batch)
            ws = []
            for p in picks:
                i, s = train_keys[p]
                ws.append(make_window(references, (i, s), m_now))
            loss, grad, info = loss_and_grad(params, ws, mode, cfg, theta)
            epoch_sentinel += info.sentinel_windows
            epoch_windows += len(ws)
            history.append(loss)
            theta = opt.update(theta, grad)
            if callback is not None:
                callback(len(history), loss)
        total_sentinels += epoch_sentinel
        if epoch_windows and epoch_sentinel == epoch_windows:
            raise Diverged(f"every window of epoch {epoch} blew up")
        v = val_loss(theta)
        val_history.append(v)
        log.info("epoch %d train %.6g val %.6g", epoch, history[-1], v)
        if not val_keys or v < best_val:
            best_theta, best_val, best_epoch = theta.copy(), v, epoch
    return TrainResult(params.with_theta(best_theta), history, val_history, best_epoch, total_sentinels)
