import math
import subprocess
import sys

import numba as nb
import numpy as np
import pytest

from epictrl.grid import GridSpec
from epictrl.model import BetaPath, EpidemicState, ModelParams, ParameterError, sir_along_path
from epictrl.sde import simulate_with_increments
from epictrl.solver import (
    SolverConfig,
    feynman_kac_value,
    make_sweep_kernel,
    solve,
    solver_noise,
)

P = ModelParams()
SMALL = GridSpec(nx=9, ny=9, nz=5)
FAST = SolverConfig(n_paths=48, dt=1.0, horizon=1500.0, max_iterations=8, seed=3)


@nb.njit
def unit_integrand(i, beta, p, theta, beta_hat, cap_L, normalized, y_bar):
    return 1.0


def test_constant_integrand_gives_discounted_horizon():
    cfg = SolverConfig(n_paths=4, dt=0.5, horizon=1200.0)
    kernel = make_sweep_kernel(unit_integrand, parallel=False)
    mean, se = feynman_kac_value(P, cfg, None, EpidemicState(0.9, 0.05, 0.1), kernel=kernel)
    d = math.exp(-P.lam * cfg.dt)
    exact = cfg.dt * (1 - d**cfg.n_steps) / (1 - d)
    assert mean == pytest.approx(exact, rel=1e-12)
    assert se == pytest.approx(0.0, abs=1e-9)


def _deterministic_cost(x, y, dt, horizon):
    # independent Euler-free integration of the infection cost with beta fixed at its mean level
    n = int(round(horizon / dt))
    states = sir_along_path(x, y, BetaPath(dt, np.full(n + 1, P.beta_hat)), P)
    t = dt * np.arange(n + 1)
    f = np.exp(-P.lam * t) * (states[:, 1] / P.y_bar) ** 2
    return float(np.sum(0.5 * (f[1:] + f[:-1])) * dt)


@pytest.mark.parametrize("scheme", ["policy", "explicit"])
def test_noiseless_first_sweep_matches_quadrature(scheme):
    q = P.replace(sigma_vol=0.0)
    cfg = SolverConfig(n_paths=1, dt=0.1, horizon=1500.0, scheme=scheme)
    mean, _ = feynman_kac_value(q, cfg, None, EpidemicState(0.99, 0.01, P.beta_hat))
    assert mean == pytest.approx(_deterministic_cost(0.99, 0.01, 0.01, 1500.0), rel=1e-3)


def test_first_sweep_is_uncontrolled_cost_to_go():
    cfg = SolverConfig(n_paths=12, dt=1.0, horizon=1500.0, max_iterations=1)
    g = solve(P, cfg, SMALL)
    assert g.iteration == 1 and not g.converged
    dw = solver_noise(cfg, 1)[0]
    decay = np.exp(-P.lam * cfg.dt * np.arange(cfg.n_steps))
    for i, j, k in [(0, 0, 0), (3, 2, 4), (6, 1, 2)]:
        x, y, z = SMALL.xs[i], SMALL.ys[j], SMALL.zs[k]
        betas = simulate_with_increments(P, cfg.dt, 0.0, dw, z)
        costs = []
        for m in range(cfg.n_paths):
            infected = sir_along_path(x, y, betas[m], P)[:-1, 1]
            costs.append(cfg.dt * np.sum(decay * (infected / P.y_bar) ** 2))
        assert g.v[i, j, k] == pytest.approx(np.mean(costs), rel=1e-10)


def test_explicit_and_policy_agree_on_the_first_sweep():
    one = SolverConfig(n_paths=16, dt=1.0, horizon=1500.0, max_iterations=1)
    a = solve(P, one, SMALL)
    b = solve(P, SolverConfig(**{**one.to_dict(), "scheme": "explicit"}), SMALL)
    assert np.allclose(a.v, b.v, rtol=1e-12, atol=0)


@pytest.fixture(scope="module")
def small_grids():
    q = P.replace(drift_mode="normalized")
    return solve(q, FAST, SMALL), solve(q.replace(cap_L=0.5), FAST, SMALL)


def test_value_bounds(small_grids):
    g, _ = small_grids
    act = SMALL.active
    assert np.all(g.v[act] >= 0.0)
    assert np.all(g.v[act] <= P.value_bound)
    assert g.meta["tail_bound"] < 0.02 * P.value_bound


def test_value_monotone_in_cap_and_infections(small_grids):
    full, half = small_grids
    act = SMALL.active
    slack = 2 * np.hypot(full.se, half.se)
    assert np.all((half.v - full.v + slack)[act] >= 0)
    both = act[:, 1:, :] & act[:, :-1, :]
    dy = full.v[:, 1:, :] - full.v[:, :-1, :] + 2 * np.hypot(full.se[:, 1:, :], full.se[:, :-1, :])
    assert np.all(dy[both] >= 0)


def test_policy_iteration_converges_on_small_grid(small_grids):
    g, _ = small_grids
    assert g.converged
    assert g.residual < FAST.tolerance * g.sup_norm()
    assert g.residual_history[-1] == g.residual


PROBE = """
import hashlib, numpy as np
from epictrl.grid import GridSpec
from epictrl.model import ModelParams
from epictrl.solver import SolverConfig, solve
g = solve(ModelParams(), SolverConfig(n_paths=24, dt=1.0, horizon=1500.0, max_iterations=3), GridSpec(nx=7, ny=7, nz=4))
print(hashlib.sha256(g.v.tobytes() + g.vz.tobytes()).hexdigest())
"""


def test_bit_identical_across_thread_counts():
    digests = set()
    for n in ("1", "2", "3"):
        env = {"NUMBA_NUM_THREADS": n, "PYTHONWARNINGS": "ignore", "PATH": "/usr/bin:/bin"}
        out = subprocess.run([sys.executable, "-c", PROBE], env=env, capture_output=True, text=True, check=True)
        digests.add(out.stdout.split()[-1])
    assert len(digests) == 1


def test_config_rejects_short_horizon_and_bad_scheme():
    with pytest.raises(ParameterError, match="horizon"):
        SolverConfig(horizon=300.0).validate(P)
    with pytest.raises(ParameterError, match="scheme"):
        SolverConfig(scheme="magic").validate(P)


def test_desk_solve_converges(desk_grid, desk_config):
    g = desk_grid
    assert g.converged
    history = g.residual_history
    assert len(history) <= desk_config.solver.max_iterations
    assert history[-1] < 0.005 * g.sup_norm()
    # contraction after the first few sweeps
    assert all(b < a for a, b in zip(history[2:], history[3:]))
