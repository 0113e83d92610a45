"""Quadratic running cost, its Hamiltonian and the closed-form feedback.

With ``C(y, xi) = (y / y_bar)**2 + xi**2 / 2`` and a drift that is affine
in ``xi`` with slope ``-theta * beta_hat``, the pointwise minimiser of
``C(y, xi) + b(z, xi) * p`` over ``[0, cap_L]`` is a clamp of
``theta * beta_hat * p``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

from .model import ModelParams, ParameterError
from .sde import drift_kernel


@dataclass(frozen=True)
class CostEval:
    infection_cost: float
    effort_cost: float

    @property
    def total(self) -> float:
        return self.infection_cost + self.effort_cost


@dataclass(frozen=True)
class HamiltonianEval:
    minimizer_xi: float
    value: float


@nb.njit(cache=True, inline="always")
def xi_hat_kernel(vz, theta, beta_hat, cap_L):
    xi = theta * beta_hat * vz
    if xi <= 0.0:
        return 0.0
    if xi >= cap_L:
        return cap_L
    return xi


def running_cost(p: ModelParams, y: float, xi: float) -> CostEval:
    if not 0 <= y <= 1:
        raise ParameterError("y not in [0,1]")
    if not 0 <= xi <= p.cap_L:
        raise ParameterError("xi not in [0,cap_L]")
    return CostEval((y / p.y_bar) ** 2, 0.5 * xi**2)


def feedback_xi(p: ModelParams, vz):
    """Feedback control for a given z-gradient of the value function.

    Three regimes: ``cap_L`` above ``cap_L / (theta * beta_hat)``, linear in
    between, zero for negative gradients. Accepts scalars or arrays.
    """
    out = np.clip(p.theta * p.beta_hat * np.asarray(vz, dtype=float), 0.0, p.cap_L)
    return float(out) if out.ndim == 0 else out


def hamiltonian(p: ModelParams, y: float, z: float, vz: float) -> HamiltonianEval:
    """Minimum over ``xi`` of ``C(y, xi) + b(z, xi) * vz`` and its argmin."""
    if not np.isfinite(vz):
        raise ParameterError("vz must be finite")
    xi = xi_hat_kernel(float(vz), p.theta, p.beta_hat, p.cap_L)
    b = drift_kernel(float(z), xi, p.theta, p.beta_hat, p.cap_L, p.drift_mode == "normalized")
    return HamiltonianEval(xi, (y / p.y_bar) ** 2 + 0.5 * xi * xi + b * vz)

