"""Hybrid neural-numerical PDE solvers with direct and indirect corrections.

Modules
-------
core          grids, spectral transforms, RNG streams, trajectories
autodiff      reverse-mode tape used to differentiate through solver steps
burgers       WENO5 / forward-Euler Burgers solver and analytic oracles
ks            pseudo-spectral Kuramoto-Sivashinsky solver (ETD1, ETDRK2)
correction    corrector sources and injection topologies
perturbation  Jacobians, amplification, error ratio, Lipschitz / Lyapunov
network       small periodic convolutional corrector
training      unrolled loss, gradients, Adam training loop
dataset       filtered reference trajectories
metrics       rollout MSE and R^2
checkpoint    corrector parameter files
cli           experiment runners (``hybrid-pde`` command)
"""

from .core import Blowup, Grid1D, RngStream, Trajectory
from .correction import CorrectorSpec, GaussianNoise, InjectionMode, Neural, Zero, hybrid_step, rollout

__version__ = "0.1.0"

__all__ = [
    "Blowup",
    "CorrectorSpec",
    "GaussianNoise",
    "Grid1D",
    "InjectionMode",
    "Neural",
    "RngStream",
    "Trajectory",
    "Zero",
    "hybrid_step",
    "rollout",
    "__version__",
]
