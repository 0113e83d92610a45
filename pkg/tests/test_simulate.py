import json

import numpy as np
import pytest

from epictrl.cost import feedback_xi
from epictrl.experiments import SweepRow, write_table
from epictrl.grid import GridSpec, ValueGrid, interpolate_clamped
from epictrl.model import EpidemicState, ModelParams, ParameterError, final_size
from epictrl.sde import SdeScheme
from epictrl.simulate import (
    EnsembleResult,
    PolicySource,
    ScalarMetrics,
    compute_metrics,
    csv_header,
    export_ensemble,
    read_ensemble_csv,
    simulate_closed_loop,
)

P = ModelParams()
S0 = EpidemicState(0.99, 0.01, 0.1)
SCHEME = SdeScheme(dt=0.5, horizon=300.0, seed=20200501)


def ramp_grid():
    """Synthetic value grid whose z-gradient grows with infections and rate."""
    spec = GridSpec(nx=11, ny=11, nz=6)
    _, Y, Z = np.meshgrid(spec.xs, spec.ys, spec.zs, indexing="ij")
    vz = 400 * Y + 300 * Z
    return ValueGrid(spec, np.zeros(spec.shape), vz)


def test_conservation_pathwise():
    e = simulate_closed_loop(P, PolicySource.fixed(0.4), SCHEME, S0, 100, keep_paths=True)
    paths = e.info["paths"]
    assert np.max(np.abs(paths["S"] + paths["I"] + paths["R"] - 1)) <= 1e-12
    assert np.all(np.diff(paths["S"], axis=1) <= 0)
    assert np.all(np.diff(paths["R"], axis=1) >= -1e-15)


def test_recorded_control_is_the_feedback_of_recorded_state():
    g = ramp_grid()
    e = simulate_closed_loop(P, PolicySource.feedback(g), SCHEME, S0, 50, keep_paths=True)
    paths = e.info["paths"]
    vz = interpolate_clamped(g, paths["S"], paths["I"], paths["beta"], "vz").reshape(paths["S"].shape)
    assert np.allclose(paths["xi"], feedback_xi(P, vz), atol=1e-14, rtol=0)
    assert paths["xi"].max() > 0.1


def test_uncontrolled_noiseless_run_reaches_final_size():
    q = P.replace(sigma_vol=0.0)
    e = simulate_closed_loop(q, PolicySource(), SdeScheme(dt=0.5, horizon=1000.0), S0, 3)
    assert e.metrics.final_recovered == pytest.approx(1 - final_size(0.99, 0.01, 1.8), abs=1e-4)
    assert e.metrics.first_containment_day is None and e.metrics.severe_onset_day is None
    for name in ("S", "I", "beta", "Rt"):
        assert np.array_equal(e.lower95[name], e.mean[name]) and np.array_equal(e.upper95[name], e.mean[name])


def test_full_lockdown_extinguishes_transmission():
    e = simulate_closed_loop(P, PolicySource.fixed(1.0), SCHEME, S0, 500)
    assert e.mean["beta"][-1] < 0.005
    assert e.metrics.final_recovered < 0.2


def test_same_seed_same_ensemble():
    a = simulate_closed_loop(P, PolicySource(), SCHEME, S0, 64)
    b = simulate_closed_loop(P, PolicySource(), SCHEME, S0, 64)
    assert all(np.array_equal(a.mean[k], b.mean[k]) for k in a.mean)


def test_feedback_requires_start_inside_grid():
    g = ramp_grid()
    with pytest.raises(ParameterError, match="outside"):
        simulate_closed_loop(P, PolicySource.feedback(g), SCHEME, EpidemicState(0.99, 0.01, 0.159), 4)


def test_policy_parse():
    assert PolicySource.parse("none").kind == "none"
    assert PolicySource.parse("constant:0.25").constant == 0.25
    with pytest.raises(ParameterError):
        PolicySource.parse("feedback")
    with pytest.raises(ParameterError):
        PolicySource.parse("sometimes")


def synthetic(xi=None, rtst=None, n=301):
    t = np.arange(n, dtype=float)
    zero = np.zeros(n)
    mean = {k: zero.copy() for k in ("S", "I", "R", "beta", "xi", "Rt", "RtSt")}
    if xi is not None:
        mean["xi"] = xi
    mean["RtSt"] = rtst if rtst is not None else np.full(n, 2.0)
    return EnsembleResult(t, mean, dict(mean), dict(mean), 1, 0)


def test_metrics_of_a_synthetic_severe_phase():
    t = np.arange(301.0)
    xi = np.where((t >= 79) & (t < 142), 0.5, 0.0)
    xi[(t >= 54) & (t < 79)] = 0.2
    m = compute_metrics(synthetic(xi))
    assert (m.first_containment_day, m.severe_onset_day, m.severe_duration) == (54, 79, 63)
    assert m.first_day_RtSt_below_1 is None


def test_metrics_of_a_downward_crossing():
    t = np.arange(301.0)
    m = compute_metrics(synthetic(rtst=1.0 + (84.5 - t) / 100))
    assert m.first_day_RtSt_below_1 == 85
    # a late excursion above one resets the permanent crossing
    wobble = np.where(t < 85, 1.2, 0.8)
    wobble[120] = 1.01
    assert compute_metrics(synthetic(rtst=wobble)).first_day_RtSt_below_1 == 121
    ends_above = np.where(t < 85, 1.2, 0.8)
    ends_above[-1] = 1.1
    assert compute_metrics(synthetic(rtst=ends_above)).first_day_RtSt_below_1 is None


def test_zero_control_has_no_containment():
    m = compute_metrics(synthetic(np.zeros(301)))
    assert m.first_containment_day is None and m.severe_onset_day is None and m.severe_duration is None


def test_csv_round_trip_and_sidecar(tmp_path):
    e = simulate_closed_loop(P, PolicySource.fixed(0.3), SCHEME, S0, 40)
    paths = export_ensemble(e, tmp_path, "run", {"fingerprint": "abc"})
    t, mean, lo, hi = read_ensemble_csv(paths["csv"])
    assert open(paths["csv"]).readline().strip() == ",".join(csv_header())
    assert csv_header()[-1] == "RtSt_hi"
    assert np.array_equal(t, e.times)
    for k in e.mean:
        assert np.max(np.abs(mean[k] - e.mean[k])) <= 1e-12
        assert np.max(np.abs(lo[k] - e.lower95[k])) <= 1e-12
        assert np.max(np.abs(hi[k] - e.upper95[k])) <= 1e-12
    meta = json.loads(paths["metrics"].read_text())
    assert meta["seed"] == SCHEME.seed and meta["fingerprint"] == "abc"
    assert meta["metrics"]["final_recovered"] == pytest.approx(e.metrics.final_recovered)


def test_absent_metrics_stay_empty(tmp_path):
    e = simulate_closed_loop(P, PolicySource(), SCHEME, S0, 10)
    paths = export_ensemble(e, tmp_path, "none", svg=False)
    meta = json.loads(paths["metrics"].read_text())["metrics"]
    assert meta["first_containment_day"] is None and meta["severe_duration"] is None
    table = write_table([SweepRow("paper", 0.2, e.metrics, 0, True)], tmp_path / "table.csv")
    row = table.read_text().splitlines()[1].split(",")
    assert row[1] == "" and row[2] == ""


def test_svg_has_four_panels(tmp_path):
    e = simulate_closed_loop(P, PolicySource(), SCHEME, S0, 10)
    svg = export_ensemble(e, tmp_path, "fig")["svg"].read_text()
    assert svg.count('<g id="axes_') == 4


def test_optimal_feedback_beats_fixed_policies(desk_grid):
    costs = {}
    for name, policy in [("feedback", PolicySource.feedback(desk_grid)), ("none", PolicySource()),
                         ("full", PolicySource.fixed(P.cap_L))]:
        e = simulate_closed_loop(P, policy, SdeScheme(dt=1.0, horizon=1500.0, seed=77), S0, 1000)
        costs[name] = e.cost_summary()
    m, s = costs["feedback"]
    for other in ("none", "full"):
        mo, so = costs[other]
        assert mo - m > 2 * np.hypot(s, so), costs
