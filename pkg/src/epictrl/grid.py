"""Tabulated value function on a masked box grid over (S, I, beta).

Fields are stored on the full ``nx * ny * nz`` box. Nodes with
``x + y > cap`` are outside the domain; the solver fills them from the
nearest active node along x so that trilinear interpolation near the
simplex face never reads garbage.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numba as nb
import numpy as np

from .model import EpidemicState, ParameterError

MAGIC = b"EPIVGRID"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sHQ3I7dId")


class GridFileError(ValueError):
    pass


class OutsideGridError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    nx: int = 21
    ny: int = 21
    nz: int = 11
    x_range: tuple[float, float] = (0.005, 0.995)
    y_range: tuple[float, float] = (0.005, 0.995)
    z_range: tuple[float, float] = (0.004, 0.156)
    cap: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "x_range", tuple(float(v) for v in self.x_range))
        object.__setattr__(self, "y_range", tuple(float(v) for v in self.y_range))
        object.__setattr__(self, "z_range", tuple(float(v) for v in self.z_range))

    def validate(self, gamma: float) -> "GridSpec":
        if min(self.nx, self.ny, self.nz) < 3:
            raise ParameterError("grid needs at least 3 nodes per axis")
        for name, (lo, hi) in (("x_range", self.x_range), ("y_range", self.y_range)):
            if not 0 < lo < hi < 1:
                raise ParameterError(f"{name} must lie inside (0,1)")
        lo, hi = self.z_range
        if not 0 < lo < hi < gamma:
            raise ParameterError("z_range must lie inside (0,gamma)")
        if not 0 < self.cap <= 1:
            raise ParameterError("cap must lie in (0,1]")
        return self

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(*self.x_range, self.nx)

    @property
    def ys(self) -> np.ndarray:
        return np.linspace(*self.y_range, self.ny)

    @property
    def zs(self) -> np.ndarray:
        return np.linspace(*self.z_range, self.nz)

    @property
    def active(self) -> np.ndarray:
        """Boolean mask of nodes inside the simplex cap, shape ``(nx, ny, nz)``."""
        xy = self.xs[:, None] + self.ys[None, :] <= self.cap + 1e-12
        return np.broadcast_to(xy[:, :, None], self.shape).copy()

    def contains(self, x: float, y: float, z: float) -> bool:
        return (self.x_range[0] <= x <= self.x_range[1] and self.y_range[0] <= y <= self.y_range[1]
                and self.z_range[0] <= z <= self.z_range[1] and x + y <= self.cap + 1e-12)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ValueGrid:
    spec: GridSpec
    v: np.ndarray
    vz: np.ndarray
    iteration: int = 0
    residual: float = float("inf")
    converged: bool = False
    # Monte Carlo standard error of v per node (zero where unknown)
    se: np.ndarray | None = None
    fingerprint: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.v = np.ascontiguousarray(self.v, dtype=np.float64)
        self.vz = np.ascontiguousarray(self.vz, dtype=np.float64)
        if self.v.shape != self.spec.shape or self.vz.shape != self.spec.shape:
            raise ParameterError("field shape does not match grid spec")
        self.se = np.zeros(self.spec.shape) if self.se is None else np.ascontiguousarray(self.se, dtype=np.float64)

    @classmethod
    def zeros(cls, spec: GridSpec) -> "ValueGrid":
        return cls(spec, np.zeros(spec.shape), np.zeros(spec.shape), iteration=0)

    @property
    def residual_history(self) -> list[float]:
        return list(self.meta.get("residual_history", []))

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.v[self.spec.active])))


def fill_inactive(values: np.ndarray, active: np.ndarray) -> np.ndarray:
    """Copy each inactive node from the last active node with the same (y, z).

    Rows without any active node copy the row below in y.
    """
    out = values.copy()
    nx, ny, _ = values.shape
    for j in range(ny):
        idx = np.flatnonzero(active[:, j, 0])
        if idx.size == 0:
            out[:, j, :] = out[:, j - 1, :] if j > 0 else 0.0
            continue
        last = idx[-1]
        out[last + 1:, j, :] = out[last, j, :]
    return out


def z_gradient(v: np.ndarray, spec: GridSpec) -> np.ndarray:
    """Central differences in z, one-sided at the two end planes."""
    return np.gradient(v, spec.zs, axis=2, edge_order=1)


@nb.njit(cache=True, inline="always")
def _locate(q, lo, h, n):
    """Cell index and local coordinate of ``q`` on a uniform axis (clamped)."""
    t = (q - lo) / h
    if t <= 0.0:
        return 0, 0.0
    if t >= n - 1:
        return n - 2, 1.0
    i = int(t)
    if i > n - 2:
        i = n - 2
    return i, t - i


@nb.njit(cache=True, inline="always")
def trilinear_clamped(f, x, y, z, x0, hx, y0, hy, z0, hz):
    """Trilinear interpolation of ``f`` with the query clamped to the box."""
    nx, ny, nz = f.shape
    i, a = _locate(x, x0, hx, nx)
    j, b = _locate(y, y0, hy, ny)
    k, c = _locate(z, z0, hz, nz)
    c00 = f[i, j, k] * (1 - a) + f[i + 1, j, k] * a
    c10 = f[i, j + 1, k] * (1 - a) + f[i + 1, j + 1, k] * a
    c01 = f[i, j, k + 1] * (1 - a) + f[i + 1, j, k + 1] * a
    c11 = f[i, j + 1, k + 1] * (1 - a) + f[i + 1, j + 1, k + 1] * a
    c0 = c00 * (1 - b) + c10 * b
    c1 = c01 * (1 - b) + c11 * b
    return c0 * (1 - c) + c1 * c


@nb.njit(cache=True)
def _trilinear_many(f, xs, ys, zs, x0, hx, y0, hy, z0, hz):
    out = np.empty(xs.size)
    for n in range(xs.size):
        out[n] = trilinear_clamped(f, xs[n], ys[n], zs[n], x0, hx, y0, hy, z0, hz)
    return out


def axis_params(spec: GridSpec) -> tuple[float, float, float, float, float, float]:
    hx = (spec.x_range[1] - spec.x_range[0]) / (spec.nx - 1)
    hy = (spec.y_range[1] - spec.y_range[0]) / (spec.ny - 1)
    hz = (spec.z_range[1] - spec.z_range[0]) / (spec.nz - 1)
    return spec.x_range[0], hx, spec.y_range[0], hy, spec.z_range[0], hz


def interpolate(g: ValueGrid, q: EpidemicState, which: str = "v") -> float:
    """Trilinear value of field ``which`` ('v' or 'vz') at ``q``; no extrapolation."""
    if not g.spec.contains(q.x, q.y, q.z):
        raise OutsideGridError("state outside value grid")
    f = g.v if which == "v" else g.vz
    return float(trilinear_clamped(f, float(q.x), float(q.y), float(q.z), *axis_params(g.spec)))


def interpolate_clamped(g: ValueGrid, x, y, z, which: str = "vz") -> np.ndarray:
    """Vectorised interpolation with out-of-box queries clamped to the box."""
    f = g.v if which == "v" else g.vz
    x, y, z = (np.ascontiguousarray(a, dtype=np.float64).ravel() for a in np.broadcast_arrays(x, y, z))
    return _trilinear_many(f, x, y, z, *axis_params(g.spec))


def fingerprint(*parts: dict) -> int:
    """64-bit content hash of JSON-serialisable configuration dicts."""
    blob = json.dumps(parts, sort_keys=True, default=str).encode()
    return int.from_bytes(hashlib.blake2b(blob, digest_size=8).digest(), "little")


def save_grid(g: ValueGrid, path) -> Path:
    """Write the binary grid file plus a ``.json`` sidecar for humans."""
    path = Path(path)
    s = g.spec
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, g.fingerprint, s.nx, s.ny, s.nz,
                          *s.x_range, *s.y_range, *s.z_range, s.cap, g.iteration, g.residual)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(struct.pack("<?", g.converged))
        for arr in (g.v, g.vz, g.se):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes(order="C"))
    sidecar = {"format": "EPIVGRID", "version": FORMAT_VERSION, "fingerprint": f"{g.fingerprint:016x}",
               "spec": s.to_dict(), "iteration": g.iteration, "residual": g.residual,
               "converged": g.converged, **g.meta}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2, default=str))
    return path


def load_grid(path, expected_fingerprint: int | None = None) -> ValueGrid:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:8] != MAGIC:
        raise GridFileError(f"{path}: not a value-grid file (bad magic)")
    fields = _HEADER.unpack_from(raw)
    _, version, fp, nx, ny, nz, *rest = fields
    if version != FORMAT_VERSION:
        raise GridFileError(f"{path}: unsupported format version {version}")
    if expected_fingerprint is not None and fp != expected_fingerprint:
        raise GridFileError(f"{path}: fingerprint {fp:016x} does not match expected {expected_fingerprint:016x}")
    x0, x1, y0, y1, z0, z1, cap, iteration, residual = rest
    spec = GridSpec(nx, ny, nz, (x0, x1), (y0, y1), (z0, z1), cap)
    offset = _HEADER.size
    (converged,) = struct.unpack_from("<?", raw, offset)
    offset += 1
    n = nx * ny * nz
    arrays = []
    for _ in range(3):
        arrays.append(np.frombuffer(raw, dtype="<f8", count=n, offset=offset).reshape(spec.shape).astype(np.float64))
        offset += 8 * n
    meta = {}
    sidecar = path.with_suffix(path.suffix + ".json")
    if sidecar.exists():
        info = json.loads(sidecar.read_text())
        if int(info.get("fingerprint", "0"), 16) != fp:
            raise GridFileError(f"{sidecar}: sidecar fingerprint disagrees with grid file")
        meta = {k: v for k, v in info.items()
                if k not in {"format", "version", "fingerprint", "spec", "iteration", "residual", "converged"}}
    return ValueGrid(spec, arrays[0], arrays[1], iteration=iteration, residual=residual, converged=converged,
                     se=arrays[2], fingerprint=fp, meta=meta)
