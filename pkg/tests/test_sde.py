import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epictrl.model import ModelParams
from epictrl.sde import (
    RngStream,
    SdeScheme,
    brownian_increments,
    diffusion_clamped,
    drift,
    em_step,
    simulate_beta_paths,
    simulate_with_increments,
)

P = ModelParams()


def test_drift_examples():
    assert drift(P, P.beta_hat, 0.0) == 0.0
    assert drift(P, 0.1, 1.0) == pytest.approx(-0.01, abs=1e-15)
    assert drift(P.replace(cap_L=0.2), 0.1, 0.0) == pytest.approx(-0.008, abs=1e-15)


def test_normalized_drift_reverts_to_natural_level_for_any_cap():
    q = P.replace(cap_L=0.2, drift_mode="normalized")
    assert drift(q, q.beta_hat, 0.0) == 0.0
    assert drift(q, 0.1, 0.2) == pytest.approx(0.1 * (0.1 * 0.8 - 0.1))


def test_diffusion_is_clamped_outside_the_interval():
    assert diffusion_clamped(P, 0.08) == pytest.approx(0.0064, abs=1e-15)
    assert diffusion_clamped(P, 0.0) == 0.0
    assert diffusion_clamped(P, P.gamma) == 0.0
    assert diffusion_clamped(P, -0.01) == 0.0
    assert diffusion_clamped(P, 0.2) == 0.0
    zs = np.linspace(0.001, 0.159, 999)
    assert max(diffusion_clamped(P, z) for z in zs) <= P.sigma_vol * P.gamma**2 / 4


def test_zero_noise_follows_linear_ode():
    q = P.replace(sigma_vol=0.0)
    z, dt = 0.03, 0.01
    for _ in range(3000):
        z = em_step(q, z, 0.0, 0.0, dt)
    assert z == pytest.approx(0.1 + (0.03 - 0.1) * math.exp(-0.1 * 30), abs=1e-4)


def test_em_step_clamps_and_keeps_fixed_point():
    assert em_step(P, 0.08, 0.0, 1e6, 0.5) == P.gamma
    assert em_step(P, 0.08, 0.0, -1e6, 0.5) == 0.0
    assert em_step(P, P.beta_hat, 0.0, 0.0, 0.5) == P.beta_hat


def test_rng_stream_is_stateless_and_distinct():
    a = RngStream(7, 3).normals(1000)
    assert np.array_equal(a, RngStream(7, 3).normals(1000))
    b = RngStream(7, 4).normals(1000)
    c = RngStream(8, 3).normals(1000)
    assert not np.array_equal(a, b) and not np.array_equal(a, c)
    big = RngStream(1, 0).normals(200_000)
    assert abs(big.mean()) < 0.01 and abs(big.std() - 1) < 0.01
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.1


def test_single_noiseless_path_is_the_ode():
    q = P.replace(sigma_vol=0.0)
    scheme = SdeScheme(dt=0.01, horizon=50.0, seed=1)
    paths = simulate_beta_paths(q, scheme, 0.0, 1, z0=0.15)
    t = paths[0].times
    assert np.max(np.abs(paths[0].values - (0.1 + 0.05 * np.exp(-0.1 * t)))) < 1e-4


def test_full_lockdown_eradicates_transmission():
    scheme = SdeScheme(dt=0.5, horizon=300.0, seed=11)
    paths = simulate_beta_paths(P, scheme, 1.0, 10_000)
    assert paths.values[:, -1].mean() < 0.005


def test_paths_stay_in_range_with_rare_clamping():
    scheme = SdeScheme(dt=0.5, horizon=300.0, seed=5)
    paths = simulate_beta_paths(P, scheme, 0.0, 2000)
    assert paths.values.min() >= 0.0 and paths.values.max() <= P.gamma
    assert paths.clamp_fraction < 1e-3


def test_uncontrolled_mean_matches_ode_within_three_standard_errors():
    scheme = SdeScheme(dt=0.5, horizon=200.0, seed=3)
    paths = simulate_beta_paths(P, scheme, 0.0, 10_000, z0=0.05)
    end = paths.values[:, -1]
    ode = 0.1 + (0.05 - 0.1) * math.exp(-0.1 * 200)
    assert abs(end.mean() - ode) < 3 * end.std(ddof=1) / math.sqrt(end.size)


def test_same_seed_reproduces_bitwise():
    scheme = SdeScheme(dt=0.5, horizon=100.0, seed=99)
    a = simulate_beta_paths(P, scheme, 0.3, 50)
    b = simulate_beta_paths(P, scheme, 0.3, 50)
    assert np.array_equal(a.values, b.values)


def test_callback_and_constant_policies_agree():
    scheme = SdeScheme(dt=0.5, horizon=60.0, seed=2)
    a = simulate_beta_paths(P, scheme, 0.4, 20)
    b = simulate_beta_paths(P, scheme, lambda t, z: np.full_like(z, 0.4), 20)
    assert np.allclose(a.values, b.values, atol=1e-15, rtol=0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32), amp=st.floats(0.0, 1.0), freq=st.floats(0.01, 1.0))
def test_pathwise_comparison_under_common_noise(seed, amp, freq):
    dt, n = 0.5, 400
    dw = brownian_increments(seed, range(8), n, dt)

    def policy(t, z):
        return np.clip(amp * (0.5 + 0.5 * np.sin(freq * t + 40 * z)), 0.0, 1.0)

    lo = simulate_with_increments(P, dt, P.cap_L, dw, 0.1).values
    mid = simulate_with_increments(P, dt, policy, dw, 0.1).values
    hi = simulate_with_increments(P, dt, 0.0, dw, 0.1).values
    assert np.all(lo <= mid + 1e-12)
    assert np.all(mid <= hi + 1e-12)


def test_scheme_rejects_fractional_step_count():
    with pytest.raises(ValueError):
        SdeScheme(dt=0.7, horizon=10.0)
