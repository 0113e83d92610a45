"""Closed-loop ensembles under feedback, constant or zero lockdown."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numba as nb
import numpy as np

from .cost import xi_hat_kernel
from .grid import ValueGrid, axis_params, trilinear_clamped
from .model import EpidemicState, ModelParams, ParameterError, rk4_sir, validate_params
from .sde import STREAM_SIMULATION, SdeScheme, brownian_increments, em_kernel

log = logging.getLogger(__name__)

SERIES = ("S", "I", "R", "beta", "xi", "Rt", "RtSt")
CSV_PREFIX = {"S": "S", "I": "I", "R": "R", "beta": "beta", "xi": "xi", "Rt": "Rt", "RtSt": "RtSt"}
SEVERE_LEVEL = 0.4


@dataclass(frozen=True)
class PolicySource:
    """Where the lockdown intensity comes from: a solved grid, a constant, or nothing."""

    kind: str = "none"
    grid: ValueGrid | None = None
    constant: float = 0.0

    @classmethod
    def feedback(cls, grid: ValueGrid) -> "PolicySource":
        return cls("value_grid", grid=grid)

    @classmethod
    def fixed(cls, xi: float) -> "PolicySource":
        return cls("constant", constant=float(xi))

    @classmethod
    def parse(cls, text: str, grid: ValueGrid | None = None) -> "PolicySource":
        """Parse the CLI spelling ``feedback``, ``none`` or ``constant:<v>``."""
        if text == "none":
            return cls()
        if text == "feedback":
            if grid is None:
                raise ParameterError("feedback policy needs a value grid")
            return cls.feedback(grid)
        if text.startswith("constant:"):
            return cls.fixed(float(text.split(":", 1)[1]))
        raise ParameterError(f"unknown policy {text!r}")

    def label(self) -> str:
        if self.kind == "constant":
            return f"constant:{self.constant:g}"
        return "feedback" if self.kind == "value_grid" else "none"


@dataclass
class ScalarMetrics:
    first_containment_day: int | None = None
    severe_onset_day: int | None = None
    severe_duration: int | None = None
    final_recovered: float | None = None
    min_mean_Rt: float | None = None
    first_day_RtSt_below_1: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EnsembleResult:
    times: np.ndarray
    mean: dict[str, np.ndarray]
    lower95: dict[str, np.ndarray]
    upper95: dict[str, np.ndarray]
    n_paths: int
    seed: int
    metrics: ScalarMetrics = field(default_factory=ScalarMetrics)
    # discounted realised cost per path, kept for policy comparisons
    path_costs: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    def cost_summary(self) -> tuple[float, float]:
        c = self.path_costs
        return float(c.mean()), float(c.std(ddof=1) / math.sqrt(c.size)) if c.size > 1 else 0.0


@nb.njit(cache=True)
def _closed_loop(x0, y0, z0, dw, dt, stride, mode, xi_const, vz, axes, alpha, lam,
                 theta, beta_hat, cap_L, normalized, sigma_vol, gamma, y_bar):
    """Simulate every path, recording (S, I, beta, xi) each ``stride`` steps.

    ``mode``: 0 zero control, 1 constant, 2 feedback from ``vz``.
    """
    gx0, hx, gy0, hy, gz0, hz = axes
    n_paths, n_steps = dw.shape
    n_rec = n_steps // stride + 1
    rec = np.empty((4, n_paths, n_rec))
    cost = np.empty(n_paths)
    hits = 0
    escapes = 0
    decay = math.exp(-lam * dt)
    for j in range(n_paths):
        s, i, b = x0, y0, z0
        disc = 1.0
        acc = 0.0
        for k in range(n_steps + 1):
            if mode == 0:
                xi = 0.0
            elif mode == 1:
                xi = xi_const
            else:
                if not (gx0 <= s <= gx0 + hx * (vz.shape[0] - 1) and gy0 <= i <= gy0 + hy * (vz.shape[1] - 1)
                        and gz0 <= b <= gz0 + hz * (vz.shape[2] - 1)):
                    escapes += 1
                p = trilinear_clamped(vz, s, i, b, gx0, hx, gy0, hy, gz0, hz)
                xi = xi_hat_kernel(p, theta, beta_hat, cap_L)
            if k % stride == 0:
                r = k // stride
                rec[0, j, r] = s
                rec[1, j, r] = i
                rec[2, j, r] = b
                rec[3, j, r] = xi
            if k == n_steps:
                break
            acc += disc * ((i / y_bar) ** 2 + 0.5 * xi * xi) * dt
            disc *= decay
            s_new, i_new = rk4_sir(s, i, b, alpha, dt)
            b, hit = em_kernel(b, xi, dw[j, k], dt, theta, beta_hat, cap_L, normalized, sigma_vol, gamma)
            hits += hit
            s, i = s_new, i_new
        cost[j] = acc
    return rec, cost, hits, escapes


def _band(values: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = values.shape[0]
    mean = values.mean(axis=0)
    if n > 1:
        half = 1.96 * values.std(axis=0, ddof=1) / math.sqrt(n)
        # identical paths get an exactly degenerate band, not rounding noise
        half[np.all(values == values[0], axis=0)] = 0.0
    else:
        half = np.zeros_like(mean)
    return mean, mean - half, mean + half


def simulate_closed_loop(p: ModelParams, policy: PolicySource, scheme: SdeScheme, s0: EpidemicState,
                         n_paths: int, record_every: float = 1.0, xi_eps: float = 0.01,
                         keep_paths: bool = False) -> EnsembleResult:
    """Ensemble of closed-loop trajectories with daily means and 95% bands."""
    validate_params(p)
    s0.validate(p)
    if n_paths < 1:
        raise ParameterError("n_paths must be at least 1")
    stride = record_every / scheme.dt
    if abs(stride - round(stride)) > 1e-9 or round(stride) < 1:
        raise ParameterError("record interval must be a whole number of steps")
    stride = int(round(stride))
    if scheme.n_steps % stride:
        raise ParameterError("horizon must be a whole number of record intervals")

    if policy.kind == "value_grid":
        grid = policy.grid
        if not grid.spec.contains(s0.x, s0.y, s0.z):
            raise ParameterError("initial state outside the value grid")
        mode, vz, axes = 2, grid.vz, np.array(axis_params(grid.spec))
    else:
        if policy.kind == "constant" and not 0 <= policy.constant <= p.cap_L:
            raise ParameterError("constant control not in [0,cap_L]")
        mode = 1 if policy.kind == "constant" else 0
        vz, axes = np.zeros((2, 2, 2)), np.zeros(6)

    dw = brownian_increments(scheme.seed, range(STREAM_SIMULATION, STREAM_SIMULATION + n_paths),
                             scheme.n_steps, scheme.dt)
    rec, cost, hits, escapes = _closed_loop(
        float(s0.x), float(s0.y), float(s0.z), dw, scheme.dt, stride, mode, float(policy.constant), vz, axes,
        p.alpha, p.lam, p.theta, p.beta_hat, p.cap_L, p.drift_mode == "normalized", p.sigma_vol, p.gamma, p.y_bar)
    if escapes:
        log.info("feedback queries clamped to the grid box %d times", escapes)

    s, i, b, xi = rec
    paths = {"S": s, "I": i, "R": 1.0 - s - i, "beta": b, "xi": xi, "Rt": b / p.alpha}
    paths["RtSt"] = paths["Rt"] * s
    mean, lo, hi = {}, {}, {}
    for name in SERIES:
        mean[name], lo[name], hi[name] = _band(paths[name])
    times = record_every * np.arange(s.shape[1])
    result = EnsembleResult(times, mean, lo, hi, n_paths, scheme.seed, path_costs=cost,
                            info={"clamp_hits": int(hits), "grid_escapes": int(escapes), "policy": policy.label(),
                                  "dt": scheme.dt, "horizon": scheme.horizon})
    if keep_paths:
        result.info["paths"] = paths
    result.metrics = compute_metrics(result, xi_eps)
    return result


def _first_true(mask: np.ndarray) -> int | None:
    idx = np.flatnonzero(mask)
    return int(idx[0]) if idx.size else None


def compute_metrics(e: EnsembleResult, xi_eps: float = 0.01) -> ScalarMetrics:
    """Scalar summaries of the mean paths; undefined entries stay ``None``."""
    t = e.times
    xi = e.mean["xi"]
    first = _first_true(xi > xi_eps)
    onset = _first_true(xi > SEVERE_LEVEL)
    duration = None
    if onset is not None:
        after = xi[onset:] > SEVERE_LEVEL
        end = _first_true(~after)
        duration = float(t[onset + end] - t[onset]) if end is not None else float(t[-1] - t[onset])
    rtst = e.mean["RtSt"]
    below = rtst < 1.0
    cross = None
    if below[-1]:
        above = np.flatnonzero(~below)
        k = 0 if above.size == 0 else int(above[-1]) + 1
        cross = float(t[k])
    return ScalarMetrics(
        first_containment_day=None if first is None else float(t[first]),
        severe_onset_day=None if onset is None else float(t[onset]),
        severe_duration=duration,
        final_recovered=float(e.mean["R"][-1]),
        min_mean_Rt=float(e.mean["Rt"].min()),
        first_day_RtSt_below_1=cross,
    )


def value_at_day(e: EnsembleResult, series: str, day: float) -> float:
    k = int(np.argmin(np.abs(e.times - day)))
    return float(e.mean[series][k])


# -- export -----------------------------------------------------------------

def csv_header() -> list[str]:
    cols = ["day"]
    for name in SERIES:
        pre = CSV_PREFIX[name]
        cols += [f"{pre}_mean", f"{pre}_lo", f"{pre}_hi"]
    return cols


def export_ensemble(e: EnsembleResult, out_dir, stem: str = "ensemble", extra: dict | None = None,
                    svg: bool = True) -> dict[str, Path]:
    """Write ``<stem>.csv``, ``<stem>.metrics.json`` and ``<stem>.svg``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out_dir / f"{stem}.csv", "metrics": out_dir / f"{stem}.metrics.json"}
    with open(paths["csv"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(csv_header())
        for r, day in enumerate(e.times):
            row = [f"{day:g}"]
            for name in SERIES:
                row += [repr(float(e.mean[name][r])), repr(float(e.lower95[name][r])), repr(float(e.upper95[name][r]))]
            w.writerow(row)
    meta = {"metrics": e.metrics.to_dict(), "n_paths": e.n_paths, "seed": e.seed,
            **{k: v for k, v in e.info.items() if k != "paths"}, **(extra or {})}
    paths["metrics"].write_text(json.dumps(meta, indent=2, default=str))
    if svg:
        paths["svg"] = out_dir / f"{stem}.svg"
        plot_ensemble(e, paths["svg"])
    return paths


def read_ensemble_csv(path) -> tuple[np.ndarray, dict, dict, dict]:
    """Parse a CSV written by :func:`export_ensemble` back into arrays."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header != csv_header():
        raise ValueError(f"{path}: unexpected header")
    data = np.array([[float(c) for c in row] for row in body])
    mean, lo, hi = {}, {}, {}
    for n, name in enumerate(SERIES):
        mean[name], lo[name], hi[name] = data[:, 1 + 3 * n], data[:, 2 + 3 * n], data[:, 3 + 3 * n]
    return data[:, 0], mean, lo, hi


def plot_ensemble(e: EnsembleResult, path, title: str | None = None) -> None:
    """Four panels: lockdown, reproduction number, S/I/R, R_t * S_t."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 4, figsize=(16, 3.4))
    t = e.times

    def band(ax, name, color, label=None):
        ax.fill_between(t, e.lower95[name], e.upper95[name], color=color, alpha=0.25, linewidth=0)
        ax.plot(t, e.mean[name], color=color, label=label)

    band(axes[0], "xi", "tab:purple")
    axes[0].set_title(r"lockdown $\xi_t$")
    band(axes[1], "Rt", "tab:orange")
    axes[1].axhline(1.0, color="grey", linestyle=":")
    axes[1].set_title(r"$\mathcal{R}_t$")
    band(axes[2], "S", "tab:blue", "S")
    band(axes[2], "I", "tab:red", "I")
    band(axes[2], "R", "tab:green", "R")
    axes[2].legend(loc="center right", fontsize=8)
    axes[2].set_title("S / I / R")
    band(axes[3], "RtSt", "tab:brown")
    axes[3].axhline(1.0, color="grey", linestyle=":")
    axes[3].set_title(r"$\mathcal{R}_t S_t$")
    for ax in axes:
        ax.set_xlabel("day")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
