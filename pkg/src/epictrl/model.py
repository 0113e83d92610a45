"""Model constants, epidemic states and the deterministic SIR sub-dynamics.

Time is measured in days. Given a transmission-rate path sampled on a
uniform grid, the susceptible/infected fractions follow

    dS = -beta S I dt,    dI = (beta S I - alpha I) dt

which we integrate with classical RK4, holding beta frozen over each step.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numba as nb
import numpy as np

DRIFT_MODES = ("paper", "normalized")


class ParameterError(ValueError):
    """Raised when model parameters or states violate their invariants."""


@dataclass(frozen=True)
class ModelParams:
    alpha: float = 1.0 / 18.0
    theta: float = 0.1
    beta_hat: float = 0.1
    gamma: float = 0.16
    sigma_vol: float = 1.0
    lam: float = 1.0 / 365.0
    cap_L: float = 1.0
    y_bar: float = 0.1
    drift_mode: str = "paper"

    def replace(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def cost_max(self) -> float:
        """Upper bound of the running cost on [0, 1] x [0, cap_L]."""
        return 1.0 / self.y_bar**2 + 0.5 * self.cap_L**2

    @property
    def value_bound(self) -> float:
        return self.cost_max / self.lam

    @property
    def xi_threshold(self) -> float:
        """Gradient level above which the feedback saturates at cap_L."""
        return self.cap_L / (self.theta * self.beta_hat)


def validate_params(p: ModelParams) -> ModelParams:
    """Return ``p`` unchanged if every invariant holds, else raise ParameterError."""
    checks = [
        (p.alpha > 0, "alpha must be positive"),
        (p.theta > 0, "theta must be positive"),
        (p.gamma > 0, "gamma must be positive"),
        (p.sigma_vol >= 0, "sigma_vol must be non-negative"),
        (p.lam > 0, "lambda must be positive"),
        (0 < p.beta_hat < p.gamma, "beta_hat not in (0,gamma)"),
        (0 <= p.cap_L <= 1, "cap_L not in [0,1]"),
        (0 < p.y_bar < 1, "y_bar not in (0,1)"),
        (p.drift_mode in DRIFT_MODES, f"drift_mode must be one of {DRIFT_MODES}"),
    ]
    for ok, message in checks:
        # NaN fails every comparison, so it is caught here too
        if not ok:
            raise ParameterError(message)
    return p


@dataclass(frozen=True)
class EpidemicState:
    x: float
    y: float
    z: float

    def validate(self, p: ModelParams) -> "EpidemicState":
        _check_xy(self.x, self.y)
        if not 0 < self.z < p.gamma:
            raise ParameterError("z not in (0,gamma)")
        return self


@dataclass(frozen=True)
class BetaPath:
    """A transmission-rate path sampled every ``dt`` days, starting at t = 0."""

    dt: float
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or values.size == 0:
            raise ParameterError("beta path must be a non-empty 1-d sequence")
        if not self.dt > 0:
            raise ParameterError("dt must be positive")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.size

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.values.size)

    def check_range(self, gamma: float) -> None:
        if np.any(self.values < 0) or np.any(self.values > gamma):
            raise ParameterError("beta path leaves [0, gamma]")


def _check_xy(x: float, y: float) -> None:
    # x + y = 1 (no initial recovered) is admitted; the analysis only needs
    # x + y below some level > 1
    if not (x > 0 and y > 0 and x + y <= 1 + 1e-12):
        raise ParameterError("state must satisfy x > 0, y > 0, x + y <= 1")


@nb.njit(cache=True, inline="always")
def rk4_sir(x, y, beta, alpha, dt):
    """One RK4 step of the SIR pair with frozen transmission rate."""
    k1x = -beta * x * y
    k1y = beta * x * y - alpha * y
    x2 = x + 0.5 * dt * k1x
    y2 = y + 0.5 * dt * k1y
    k2x = -beta * x2 * y2
    k2y = beta * x2 * y2 - alpha * y2
    x3 = x + 0.5 * dt * k2x
    y3 = y + 0.5 * dt * k2y
    k3x = -beta * x3 * y3
    k3y = beta * x3 * y3 - alpha * y3
    x4 = x + dt * k3x
    y4 = y + dt * k3y
    k4x = -beta * x4 * y4
    k4y = beta * x4 * y4 - alpha * y4
    xn = x + dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
    yn = y + dt / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
    return xn, yn


@nb.njit(cache=True)
def _integrate_path(x0, y0, betas, alpha, dt):
    n = betas.size
    out = np.empty((n, 2))
    x, y = x0, y0
    out[0, 0] = x
    out[0, 1] = y
    for k in range(n - 1):
        x, y = rk4_sir(x, y, betas[k], alpha, dt)
        out[k + 1, 0] = x
        out[k + 1, 1] = y
    return out


def sir_step(x: float, y: float, beta: float, dt: float, p: ModelParams) -> tuple[float, float]:
    """Advance (S, I) by one RK4 step of length ``dt`` at constant ``beta``."""
    _check_xy(x, y)
    if not dt > 0:
        raise ParameterError("dt must be positive")
    if not 0 <= beta <= p.gamma:
        raise ParameterError("beta not in [0,gamma]")
    return rk4_sir(float(x), float(y), float(beta), p.alpha, float(dt))


def sir_along_path(x0: float, y0: float, path: BetaPath, p: ModelParams) -> np.ndarray:
    """Integrate (S, I) along a piecewise-constant beta path.

    Row ``k`` of the result is the state at ``t = k * path.dt``; the rate
    ``path.values[k]`` drives the step from row ``k`` to row ``k + 1``.
    """
    _check_xy(x0, y0)
    return _integrate_path(float(x0), float(y0), path.values, p.alpha, path.dt)


def final_size(x0: float, y0: float, r0: float, tol: float = 1e-14) -> float:
    """Limit of S for the constant-rate SIR model, by bisection.

    Solves ``s = x0 * exp(-r0 * (x0 + y0 - s))`` on ``(0, x0)``; the root is
    unique below ``1 / r0``.
    """
    def g(s):
        return s - x0 * math.exp(-r0 * (x0 + y0 - s))

    lo, hi = 0.0, min(x0, 1.0 / r0)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def closed_form_residual(states: np.ndarray, betas: Sequence[float], dt: float, alpha: float) -> float:
    """Largest gap between a trajectory and the exponential representation.

    Reconstructs S and I from ``x * exp(-int beta I)`` and
    ``y * exp(-alpha t + int beta S)`` using end-corrected trapezoidal
    quadrature of the trajectory itself (fourth order, derivatives taken from
    the vector field) and returns the sup-norm discrepancy.
    """
    betas = np.asarray(betas, dtype=float)[: len(states) - 1]
    s, i = states[:, 0], states[:, 1]
    # beta is frozen on each step, so the derivatives on step k use betas[k]
    ds0 = -betas * s[:-1] * i[:-1]
    ds1 = -betas * s[1:] * i[1:]
    di0 = betas * s[:-1] * i[:-1] - alpha * i[:-1]
    di1 = betas * s[1:] * i[1:] - alpha * i[1:]
    inc_i = betas * (0.5 * (i[:-1] + i[1:]) * dt + dt**2 / 12.0 * (di0 - di1))
    inc_s = betas * (0.5 * (s[:-1] + s[1:]) * dt + dt**2 / 12.0 * (ds0 - ds1))
    int_bi = np.concatenate([[0.0], np.cumsum(inc_i)])
    int_bs = np.concatenate([[0.0], np.cumsum(inc_s)])
    t = dt * np.arange(len(states))
    s_cf = s[0] * np.exp(-int_bi)
    i_cf = i[0] * np.exp(-alpha * t + int_bs)
    return float(max(np.max(np.abs(s_cf - s)), np.max(np.abs(i_cf - i))))
