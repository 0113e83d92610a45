"""Value iteration for the stationary HJB equation via Feynman-Kac sampling.

Two sweep schemes share the same grid, noise and stopping rule.

``policy`` (default)
    Freeze the feedback ``xi_n = xi_hat(vz_n)`` and set ``v_{n+1}`` to its
    expected discounted cost along the paths it controls. Iterates stay in
    ``[0, C_max / lam]`` and the fixed point solves the HJB equation.
``explicit``
    The linear recursion ``(lam - L) v_{n+1} = C*(y, z, vz_n)`` evaluated
    along uncontrolled (xi = 0) paths, so rate paths are simulated once per
    z-node and shared by all (x, y) nodes. Its integrand is either
    ``consistent`` (``C*`` minus the ``b(beta, 0) * p`` already carried by
    the paths) or ``literal`` (``C*`` as-is). This map is not a contraction
    at the reference parameters; iterates oscillate with growing amplitude.

Noise is shared across nodes (common random numbers): path ``j`` uses the
same Brownian increments at every node and in every sweep, so differences
in z are smooth and the sweep map is deterministic.
"""

from __future__ import annotations

import logging
import math
import os
import time
from dataclasses import asdict, dataclass

import numba as nb
import numpy as np

from .cost import xi_hat_kernel
from .grid import GridSpec, ValueGrid, axis_params, fill_inactive, fingerprint, trilinear_clamped, z_gradient
from .model import EpidemicState, ModelParams, ParameterError, rk4_sir, validate_params
from .sde import STREAM_SOLVER, brownian_increments, drift_kernel, em_kernel, simulate_with_increments

log = logging.getLogger(__name__)

INTEGRANDS = ("consistent", "literal")
SCHEMES = ("policy", "explicit")


@dataclass(frozen=True)
class SolverConfig:
    n_paths: int = 200
    dt: float = 0.5
    horizon: float = 1500.0
    max_iterations: int = 30
    # stop once the sup-norm change falls below tolerance * sup|v|
    tolerance: float = 0.005
    seed: int = 20200501
    shared_beta_paths: bool = True
    scheme: str = "policy"
    integrand: str = "consistent"

    def validate(self, p: ModelParams) -> "SolverConfig":
        if self.n_paths < 1:
            raise ParameterError("n_paths must be at least 1")
        if not self.dt > 0:
            raise ParameterError("dt must be positive")
        if not self.tolerance > 0:
            raise ParameterError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ParameterError("max_iterations must be at least 1")
        if self.horizon * p.lam < 3:
            raise ParameterError("horizon too short: need horizon * lambda >= 3")
        if self.scheme not in SCHEMES:
            raise ParameterError(f"scheme must be one of {SCHEMES}")
        if self.integrand not in INTEGRANDS:
            raise ParameterError(f"integrand must be one of {INTEGRANDS}")
        return self

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    def to_dict(self) -> dict:
        return asdict(self)


# -- integrands ------------------------------------------------------------

@nb.njit(cache=True, inline="always")
def consistent_integrand(i, beta, p, theta, beta_hat, cap_L, normalized, y_bar):
    xi = xi_hat_kernel(p, theta, beta_hat, cap_L)
    c = (i / y_bar) ** 2 + 0.5 * xi * xi
    return c - theta * beta_hat * xi * p


@nb.njit(cache=True, inline="always")
def literal_integrand(i, beta, p, theta, beta_hat, cap_L, normalized, y_bar):
    xi = xi_hat_kernel(p, theta, beta_hat, cap_L)
    c = (i / y_bar) ** 2 + 0.5 * xi * xi
    return c + drift_kernel(beta, xi, theta, beta_hat, cap_L, normalized) * p


def make_sweep_kernel(integrand, parallel: bool = True, cache: bool = False):
    """Compile a Feynman-Kac sweep for a given ``integrand`` njit function.

    The kernel returns per-start sample means and standard errors.
    """

    @nb.njit(parallel=parallel, cache=cache)
    def sweep(x0s, y0s, path_index, betas, vz, axes, use_grad, alpha, dt, lam,
              theta, beta_hat, cap_L, normalized, y_bar):
        gx0, hx, gy0, hy, gz0, hz = axes
        n_start = x0s.size
        n_paths = betas.shape[1]
        n_steps = betas.shape[2] - 1
        decay = math.exp(-lam * dt)
        mean = np.empty(n_start)
        se = np.empty(n_start)
        for a in nb.prange(n_start):
            ib = path_index[a]
            total = 0.0
            comp = 0.0
            total_sq = 0.0
            for j in range(n_paths):
                s = x0s[a]
                i = y0s[a]
                disc = 1.0
                acc = 0.0
                for k in range(n_steps):
                    b = betas[ib, j, k]
                    p = 0.0
                    if use_grad:
                        p = trilinear_clamped(vz, s, i, b, gx0, hx, gy0, hy, gz0, hz)
                    acc += disc * integrand(i, b, p, theta, beta_hat, cap_L, normalized, y_bar)
                    s, i = rk4_sir(s, i, b, alpha, dt)
                    disc *= decay
                acc *= dt
                # Kahan summation keeps the path average order-robust
                yk = acc - comp
                tk = total + yk
                comp = (tk - total) - yk
                total = tk
                total_sq += acc * acc
            m = total / n_paths
            mean[a] = m
            if n_paths > 1:
                var = max(total_sq / n_paths - m * m, 0.0) * n_paths / (n_paths - 1)
                se[a] = math.sqrt(var / n_paths)
            else:
                se[a] = 0.0
        return mean, se

    return sweep


@nb.njit(parallel=True, cache=True)
def policy_sweep(x0s, y0s, z0s, group, dw, vz, axes, use_grad, alpha, dt, lam,
                 theta, beta_hat, cap_L, normalized, sigma_vol, gamma, y_bar):
    """Cost of the feedback ``xi_hat(vz)`` along the paths it controls.

    Path ``j`` of start ``a`` is driven by ``dw[group[a], j]``.
    """
    gx0, hx, gy0, hy, gz0, hz = axes
    n_start = x0s.size
    n_paths, n_steps = dw.shape[1], dw.shape[2]
    decay = math.exp(-lam * dt)
    mean = np.empty(n_start)
    se = np.empty(n_start)
    for a in nb.prange(n_start):
        total = 0.0
        comp = 0.0
        total_sq = 0.0
        ga = group[a]
        for j in range(n_paths):
            s = x0s[a]
            i = y0s[a]
            b = z0s[a]
            disc = 1.0
            acc = 0.0
            for k in range(n_steps):
                xi = 0.0
                if use_grad:
                    p = trilinear_clamped(vz, s, i, b, gx0, hx, gy0, hy, gz0, hz)
                    xi = xi_hat_kernel(p, theta, beta_hat, cap_L)
                acc += disc * ((i / y_bar) ** 2 + 0.5 * xi * xi)
                s_new, i_new = rk4_sir(s, i, b, alpha, dt)
                b, _ = em_kernel(b, xi, dw[ga, j, k], dt, theta, beta_hat, cap_L, normalized, sigma_vol, gamma)
                s = s_new
                i = i_new
                disc *= decay
            acc *= dt
            yk = acc - comp
            tk = total + yk
            comp = (tk - total) - yk
            total = tk
            total_sq += acc * acc
        m = total / n_paths
        mean[a] = m
        if n_paths > 1:
            var = max(total_sq / n_paths - m * m, 0.0) * n_paths / (n_paths - 1)
            se[a] = math.sqrt(var / n_paths)
        else:
            se[a] = 0.0
    return mean, se


_KERNELS: dict[str, object] = {}


def _kernel(name: str):
    if name not in _KERNELS:
        fn = consistent_integrand if name == "consistent" else literal_integrand
        _KERNELS[name] = make_sweep_kernel(fn)
    return _KERNELS[name]


def set_threads_from_env() -> None:
    """Honour ``EPICTRL_THREADS`` as a cap on numba's worker count."""
    raw = os.environ.get("EPICTRL_THREADS")
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ParameterError(f"EPICTRL_THREADS must be an integer, got {raw!r}") from None
        nb.set_num_threads(max(1, min(n, nb.config.NUMBA_NUM_THREADS)))


def solver_noise(cfg: SolverConfig, n_groups: int = 1) -> np.ndarray:
    """Solver increments, shape ``(n_groups, n_paths, n_steps)``.

    Group ``g`` path ``j`` reads stream ``STREAM_SOLVER + (g << 32) + j``.
    """
    out = np.empty((n_groups, cfg.n_paths, cfg.n_steps))
    for g in range(n_groups):
        base = STREAM_SOLVER + (g << 32)
        out[g] = brownian_increments(cfg.seed, range(base, base + cfg.n_paths), cfg.n_steps, cfg.dt)
    return out


def uncontrolled_paths(p: ModelParams, cfg: SolverConfig, z_values, noise: np.ndarray | None = None) -> np.ndarray:
    """Rate paths under xi = 0 started at each of ``z_values``.

    Shape ``(len(z_values), n_paths, n_steps + 1)``. With
    ``shared_beta_paths`` every start reuses the same increments; otherwise
    each start gets its own stream group.
    """
    z_values = np.atleast_1d(np.asarray(z_values, dtype=float))
    shared = cfg.shared_beta_paths
    if noise is None:
        noise = solver_noise(cfg, 1 if shared else len(z_values))
    out = np.empty((len(z_values), cfg.n_paths, cfg.n_steps + 1))
    for k, z0 in enumerate(z_values):
        out[k] = simulate_with_increments(p, cfg.dt, 0.0, noise[0 if shared else k], float(z0)).values
    return out


def _sweep_explicit(p, cfg, x0s, y0s, path_index, betas, vz_grid, spec, kernel=None):
    kernel = kernel or _kernel(cfg.integrand)
    use_grad = vz_grid is not None and bool(np.any(vz_grid != 0))
    vz = vz_grid if vz_grid is not None else np.zeros((2, 2, 2))
    axes = np.array(axis_params(spec) if spec is not None else (0.0, 1.0, 0.0, 1.0, 0.0, 1.0))
    return kernel(np.ascontiguousarray(x0s, dtype=np.float64), np.ascontiguousarray(y0s, dtype=np.float64),
                  np.ascontiguousarray(path_index, dtype=np.int64), betas, vz, axes, use_grad,
                  p.alpha, cfg.dt, p.lam, p.theta, p.beta_hat, p.cap_L, p.drift_mode == "normalized", p.y_bar)


def _sweep_policy(p, cfg, x0s, y0s, z0s, group, noise, vz_grid, spec):
    use_grad = vz_grid is not None and bool(np.any(vz_grid != 0))
    vz = vz_grid if vz_grid is not None else np.zeros((2, 2, 2))
    axes = np.array(axis_params(spec) if spec is not None else (0.0, 1.0, 0.0, 1.0, 0.0, 1.0))
    f64 = lambda a: np.ascontiguousarray(a, dtype=np.float64)  # noqa: E731
    return policy_sweep(f64(x0s), f64(y0s), f64(z0s), np.ascontiguousarray(group, dtype=np.int64), noise, vz,
                        axes, use_grad, p.alpha, cfg.dt, p.lam, p.theta, p.beta_hat, p.cap_L,
                        p.drift_mode == "normalized", p.sigma_vol, p.gamma, p.y_bar)


def feynman_kac_value(p: ModelParams, cfg: SolverConfig, g_prev: ValueGrid | None, q: EpidemicState,
                      kernel=None) -> tuple[float, float]:
    """Monte Carlo estimate (mean, standard error) of one sweep at state ``q``.

    ``kernel`` replaces the compiled explicit-scheme sweep (see
    :func:`make_sweep_kernel`); it is ignored by the policy scheme.
    """
    spec = g_prev.spec if g_prev is not None else None
    vz = g_prev.vz if g_prev is not None else None
    noise = solver_noise(cfg, 1)
    if cfg.scheme == "policy" and kernel is None:
        mean, se = _sweep_policy(p, cfg, [q.x], [q.y], [q.z], [0], noise, vz, spec)
    else:
        betas = uncontrolled_paths(p, cfg, [q.z], noise)
        mean, se = _sweep_explicit(p, cfg, [q.x], [q.y], [0], betas, vz, spec, kernel)
    return float(mean[0]), float(se[0])


def grid_key(p: ModelParams, cfg: SolverConfig, spec: GridSpec) -> int:
    """Content fingerprint identifying the grid a solve would produce."""
    return fingerprint(p.to_dict(), cfg.to_dict(), spec.to_dict())


def tail_fraction(p: ModelParams, cfg: SolverConfig) -> float:
    """Discounted mass beyond the horizon relative to the whole integral."""
    return math.exp(-p.lam * cfg.horizon)


def solve(p: ModelParams, cfg: SolverConfig, spec: GridSpec, callback=None) -> ValueGrid:
    """Iterate Feynman-Kac sweeps from ``v = 0`` until the update stalls.

    Stops when the sup-norm change drops below ``cfg.tolerance * sup|v|``.
    Non-convergence is not an error: the returned grid has
    ``converged = False`` and the caller decides what to do with it.
    """
    validate_params(p)
    cfg.validate(p)
    spec.validate(p.gamma)
    set_threads_from_env()
    t0 = time.perf_counter()

    active = spec.active
    ix, iy, iz = np.nonzero(active)
    xs, ys, zs = spec.xs, spec.ys, spec.zs
    noise = solver_noise(cfg, 1 if cfg.shared_beta_paths else spec.nz)
    group = np.zeros_like(iz) if cfg.shared_beta_paths else iz
    betas = uncontrolled_paths(p, cfg, zs, noise) if cfg.scheme == "explicit" else None

    g = ValueGrid.zeros(spec)
    history: list[float] = []
    for n in range(1, cfg.max_iterations + 1):
        vz_prev = g.vz if n > 1 else None
        if cfg.scheme == "explicit":
            mean, se = _sweep_explicit(p, cfg, xs[ix], ys[iy], iz, betas, vz_prev, spec)
        else:
            mean, se = _sweep_policy(p, cfg, xs[ix], ys[iy], zs[iz], group, noise, vz_prev, spec)
        v_new = np.zeros(spec.shape)
        se_new = np.zeros(spec.shape)
        v_new[ix, iy, iz] = mean
        se_new[ix, iy, iz] = se
        v_new = fill_inactive(v_new, active)
        se_new = fill_inactive(se_new, active)
        residual = float(np.max(np.abs(v_new[active] - g.v[active])))
        g = ValueGrid(spec, v_new, z_gradient(v_new, spec), iteration=n, residual=residual, se=se_new)
        history.append(residual)
        sup = g.sup_norm()
        log.info("sweep %d: residual %.6g (%.4g%% of sup|v| = %.6g)", n, residual,
                 100 * residual / sup if sup else float("nan"), sup)
        if callback is not None:
            callback(g)
        if residual < cfg.tolerance * sup:
            g.converged = True
            break

    g.fingerprint = grid_key(p, cfg, spec)
    g.meta = {
        "params": p.to_dict(),
        "solver": cfg.to_dict(),
        "residual_history": history,
        "tail_fraction": tail_fraction(p, cfg),
        "tail_bound": p.value_bound * tail_fraction(p, cfg),
        "runtime_seconds": time.perf_counter() - t0,
    }
    return g
