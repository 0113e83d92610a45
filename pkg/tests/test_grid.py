import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epictrl.grid import (
    GridFileError,
    GridSpec,
    OutsideGridError,
    ValueGrid,
    fill_inactive,
    interpolate,
    interpolate_clamped,
    load_grid,
    save_grid,
    z_gradient,
)
from epictrl.model import EpidemicState

SPEC = GridSpec(nx=7, ny=6, nz=5)


def affine_grid(spec=SPEC):
    X, Y, Z = np.meshgrid(spec.xs, spec.ys, spec.zs, indexing="ij")
    f = 2 * X + 3 * Y - Z
    return ValueGrid(spec, f, np.full(spec.shape, -1.0))


def test_default_grid_contains_initial_condition():
    spec = GridSpec()
    spec.validate(0.16)
    assert spec.contains(0.99, 0.01, 0.1)
    assert spec.active.sum() == 231 * 11


def test_exact_at_nodes():
    g = affine_grid()
    rng = np.random.default_rng(0)
    g.v[...] = rng.normal(size=SPEC.shape)
    for i, j, k in [(0, 0, 0), (3, 2, 4), (1, 4, 2)]:
        q = EpidemicState(SPEC.xs[i], SPEC.ys[j], SPEC.zs[k])
        if SPEC.contains(q.x, q.y, q.z):
            assert interpolate(g, q) == g.v[i, j, k]


@settings(max_examples=200, deadline=None)
@given(a=st.floats(0, 1), b=st.floats(0, 1), c=st.floats(0, 1))
def test_affine_fields_are_reproduced(a, b, c):
    g = affine_grid()
    x = SPEC.x_range[0] + a * (SPEC.x_range[1] - SPEC.x_range[0])
    y = SPEC.y_range[0] + b * (min(SPEC.y_range[1], SPEC.cap - x) - SPEC.y_range[0])
    z = SPEC.z_range[0] + c * (SPEC.z_range[1] - SPEC.z_range[0])
    if y < SPEC.y_range[0]:
        return
    q = EpidemicState(x, y, z)
    assert interpolate(g, q) == pytest.approx(2 * x + 3 * y - z, abs=1e-12)
    assert interpolate(g, q, "vz") == pytest.approx(-1.0, abs=1e-12)


def test_queries_outside_box_or_cap_are_rejected():
    g = affine_grid()
    with pytest.raises(OutsideGridError, match="state outside value grid"):
        interpolate(g, EpidemicState(0.6, 0.6, 0.1))
    with pytest.raises(OutsideGridError):
        interpolate(g, EpidemicState(0.5, 0.1, 0.159))
    # the clamped variant is for internal path evaluation
    assert interpolate_clamped(g, 0.5, 0.1, 0.2, "v")[0] == pytest.approx(2 * 0.5 + 0.3 - SPEC.z_range[1])


def test_fill_inactive_copies_last_active_node():
    spec = GridSpec()
    act = spec.active
    v = np.where(act, 1.0, np.nan)
    v[:, :, 3] = np.where(act[:, :, 3], np.arange(spec.nx)[:, None], np.nan)
    out = fill_inactive(v, act)
    assert not np.isnan(out).any()
    assert out[20, 1, 3] == 19.0


def test_z_gradient_central_and_one_sided():
    zs = SPEC.zs
    v = np.broadcast_to((zs**2)[None, None, :], SPEC.shape).copy()
    g = z_gradient(v, SPEC)
    h = zs[1] - zs[0]
    assert np.allclose(g[..., 2], 2 * zs[2], atol=1e-12)
    assert np.allclose(g[..., 0], (zs[1] ** 2 - zs[0] ** 2) / h, atol=1e-12)


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    v = rng.normal(size=SPEC.shape)
    g = ValueGrid(SPEC, v, z_gradient(v, SPEC), iteration=7, residual=0.25, converged=True,
                  se=rng.uniform(size=SPEC.shape), fingerprint=0xDEADBEEF12345678, meta={"note": "x"})
    path = save_grid(g, tmp_path / "g.bin")
    h = load_grid(path, expected_fingerprint=g.fingerprint)
    assert h.spec == g.spec
    assert np.array_equal(h.v, g.v) and np.array_equal(h.vz, g.vz) and np.array_equal(h.se, g.se)
    assert (h.iteration, h.residual, h.converged, h.fingerprint) == (7, 0.25, True, g.fingerprint)
    assert h.meta["note"] == "x"
    assert np.max(np.abs(z_gradient(h.v, h.spec) - h.vz)) < 1e-12


def test_load_rejects_bad_magic_and_fingerprint(tmp_path):
    g = affine_grid()
    g.fingerprint = 42
    path = save_grid(g, tmp_path / "g.bin")
    with pytest.raises(GridFileError, match="fingerprint"):
        load_grid(path, expected_fingerprint=43)
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOTAGRID" + path.read_bytes()[8:])
    with pytest.raises(GridFileError, match="magic"):
        load_grid(bad)
