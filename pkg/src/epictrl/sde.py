"""Controlled transmission-rate diffusion and reproducible noise streams.

The rate follows the mean-reverting equation

    d beta = theta * (target(xi) - beta) dt + sigma * beta * (gamma - beta) dW

discretised by Euler-Maruyama with the diffusion coefficient switched off
outside (0, gamma) and a final clamp to [0, gamma].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numba as nb
import numpy as np

from .model import BetaPath, ModelParams, ParameterError

# Stream-id namespaces keep solver noise and simulation noise disjoint.
STREAM_SOLVER = 1 << 56
STREAM_SIMULATION = 2 << 56

Policy = Union[float, Callable[[float, np.ndarray], np.ndarray]]


@dataclass(frozen=True)
class SdeScheme:
    dt: float = 0.5
    horizon: float = 300.0
    seed: int = 20200501

    def __post_init__(self):
        if not self.dt > 0:
            raise ParameterError("dt must be positive")
        if self.horizon < self.dt:
            raise ParameterError("horizon must be at least dt")
        ratio = self.horizon / self.dt
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ParameterError("horizon/dt must be an integer")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass(frozen=True)
class RngStream:
    """Stateless map from ``(seed, stream_id)`` to a Gaussian sequence.

    Backed by the Philox counter-based generator keyed with both words, so
    any stream can be regenerated independently of every other one.
    """

    seed: int
    stream_id: int

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed & 0xFFFFFFFFFFFFFFFF, self.stream_id & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def normals(self, n: int) -> np.ndarray:
        return self.generator().standard_normal(n)


def brownian_increments(seed: int, stream_ids, n_steps: int, dt: float) -> np.ndarray:
    """Rows of ``sqrt(dt)``-scaled Gaussian increments, one row per stream."""
    stream_ids = list(stream_ids)
    out = np.empty((len(stream_ids), n_steps))
    scale = math.sqrt(dt)
    for row, sid in enumerate(stream_ids):
        out[row] = RngStream(seed, sid).normals(n_steps) * scale
    return out


# -- scalar kernels (numba) -------------------------------------------------

@nb.njit(cache=True, inline="always")
def drift_kernel(z, xi, theta, beta_hat, cap_L, normalized):
    if normalized:
        return theta * (beta_hat * (1.0 - xi) - z)
    return theta * (beta_hat * (cap_L - xi) - z)


@nb.njit(cache=True, inline="always")
def diffusion_kernel(z, sigma_vol, gamma):
    if z <= 0.0 or z >= gamma:
        return 0.0
    return sigma_vol * z * (gamma - z)


@nb.njit(cache=True, inline="always")
def em_kernel(z, xi, dw, dt, theta, beta_hat, cap_L, normalized, sigma_vol, gamma):
    """Returns the clamped update and whether the clamp was active."""
    zn = z + drift_kernel(z, xi, theta, beta_hat, cap_L, normalized) * dt + diffusion_kernel(z, sigma_vol, gamma) * dw
    if zn < 0.0:
        return 0.0, True
    if zn > gamma:
        return gamma, True
    return zn, False


def _normalized(p: ModelParams) -> bool:
    return p.drift_mode == "normalized"


def drift(p: ModelParams, z: float, xi: float) -> float:
    if not 0 <= xi <= p.cap_L:
        raise ParameterError("xi not in [0,cap_L]")
    return drift_kernel(float(z), float(xi), p.theta, p.beta_hat, p.cap_L, _normalized(p))


def diffusion_clamped(p: ModelParams, z: float) -> float:
    return diffusion_kernel(float(z), p.sigma_vol, p.gamma)


def em_step(p: ModelParams, z: float, xi: float, dw: float, dt: float) -> float:
    """One clamped Euler-Maruyama step; ``dw`` is already scaled by sqrt(dt)."""
    zn, _ = em_kernel(float(z), float(xi), float(dw), float(dt), p.theta, p.beta_hat, p.cap_L,
                      _normalized(p), p.sigma_vol, p.gamma)
    return zn


@nb.njit(cache=True)
def _simulate_constant(z0, xi, dw, dt, theta, beta_hat, cap_L, normalized, sigma_vol, gamma):
    n_paths, n_steps = dw.shape
    out = np.empty((n_paths, n_steps + 1))
    hits = 0
    for j in range(n_paths):
        z = z0
        out[j, 0] = z
        for k in range(n_steps):
            z, hit = em_kernel(z, xi, dw[j, k], dt, theta, beta_hat, cap_L, normalized, sigma_vol, gamma)
            hits += hit
            out[j, k + 1] = z
    return out, hits


@dataclass
class BetaPathSet:
    """Transmission-rate paths stored row-wise, plus clamp bookkeeping."""

    dt: float
    values: np.ndarray
    clamp_hits: int = 0

    def __len__(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, k: int) -> BetaPath:
        return BetaPath(self.dt, self.values[k])

    @property
    def clamp_fraction(self) -> float:
        steps = self.values.shape[0] * (self.values.shape[1] - 1)
        return self.clamp_hits / steps if steps else 0.0


def simulate_beta_paths(p: ModelParams, scheme: SdeScheme, xi_policy: Policy, n_paths: int,
                        z0: float | None = None, stream_base: int = STREAM_SIMULATION) -> BetaPathSet:
    """Simulate ``n_paths`` rate paths; path ``k`` uses stream ``stream_base + k``.

    ``xi_policy`` is either a constant control or a callable ``(t, z) -> xi``
    evaluated on the whole cross-section of paths at each step.
    """
    if n_paths < 1:
        raise ParameterError("n_paths must be at least 1")
    z0 = p.beta_hat if z0 is None else float(z0)
    dw = brownian_increments(scheme.seed, range(stream_base, stream_base + n_paths), scheme.n_steps, scheme.dt)
    return simulate_with_increments(p, scheme.dt, xi_policy, dw, z0)


def simulate_with_increments(p: ModelParams, dt: float, xi_policy: Policy, dw: np.ndarray,
                             z0: float) -> BetaPathSet:
    """Same as :func:`simulate_beta_paths` but driven by given increments."""
    args = (p.theta, p.beta_hat, p.cap_L, _normalized(p), p.sigma_vol, p.gamma)
    if not callable(xi_policy):
        xi = float(xi_policy)
        if not 0 <= xi <= p.cap_L:
            raise ParameterError("xi not in [0,cap_L]")
        values, hits = _simulate_constant(z0, xi, dw, dt, *args)
        return BetaPathSet(dt, values, int(hits))

    n_paths, n_steps = dw.shape
    values = np.empty((n_paths, n_steps + 1))
    values[:, 0] = z0
    hits = 0
    z = values[:, 0].copy()
    for k in range(n_steps):
        xi = np.clip(np.broadcast_to(np.asarray(xi_policy(k * dt, z), dtype=float), z.shape), 0.0, p.cap_L)
        target = p.beta_hat * ((1.0 if _normalized(p) else p.cap_L) - xi)
        inside = (z > 0) & (z < p.gamma)
        sig = np.where(inside, p.sigma_vol * z * (p.gamma - z), 0.0)
        zn = z + p.theta * (target - z) * dt + sig * dw[:, k]
        hits += int(np.count_nonzero((zn < 0) | (zn > p.gamma)))
        z = np.clip(zn, 0.0, p.gamma)
        values[:, k + 1] = z
    return BetaPathSet(dt, values, hits)
