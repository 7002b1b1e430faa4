"""Rectilinear 4D grids, scalar fields, implicit targets and field I/O."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

AXES = ("x", "y", "vx", "vy")
MAGIC = b"HJF1"


class FieldFormatError(ValueError):
    """Raised for malformed HJF1 files."""


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned uniform grid over ``(x, y, vx, vy)``."""

    mins: tuple[float, float, float, float]
    maxs: tuple[float, float, float, float]
    counts: tuple[int, int, int, int]

    def __post_init__(self):
        object.__setattr__(self, "mins", tuple(float(v) for v in self.mins))
        object.__setattr__(self, "maxs", tuple(float(v) for v in self.maxs))
        object.__setattr__(self, "counts", tuple(int(v) for v in self.counts))
        if not (len(self.mins) == len(self.maxs) == len(self.counts) == 4):
            raise ValueError("grid must have exactly 4 axes")
        for name, lo, hi, n in zip(AXES, self.mins, self.maxs, self.counts):
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ValueError(f"axis {name}: need finite min < max, got [{lo}, {hi}]")
            if n < 3:
                raise ValueError(f"axis {name}: need at least 3 points, got {n}")

    @classmethod
    def default(cls) -> "GridSpec":
        return cls((-1500.0, -750.0, -5.0, -5.0), (1500.0, 750.0, 5.0, 5.0), (31, 31, 31, 31))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.counts

    @property
    def spacing(self) -> np.ndarray:
        return np.array([(hi - lo) / (n - 1) for lo, hi, n in zip(self.mins, self.maxs, self.counts)])

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    def axis(self, i: int) -> np.ndarray:
        return np.linspace(self.mins[i], self.maxs[i], self.counts[i])

    def axes(self) -> list[np.ndarray]:
        return [self.axis(i) for i in range(4)]

    def mesh(self) -> list[np.ndarray]:
        """Broadcastable coordinate arrays, one per axis (sparse meshgrid)."""
        return np.meshgrid(*self.axes(), indexing="ij", sparse=True)

    def box(self) -> list[tuple[float, float]]:
        return list(zip(self.mins, self.maxs))

    def node(self, index) -> np.ndarray:
        return np.array(self.mins) + np.asarray(index) * self.spacing

    def contains(self, state) -> bool:
        s = np.asarray(state)
        return bool(np.all(s >= np.array(self.mins)) and np.all(s <= np.array(self.maxs)))


@dataclass(frozen=True)
class ScalarField:
    """Samples of a scalar function on a :class:`GridSpec` (read-only)."""

    spec: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, order="C", copy=True).reshape(self.spec.shape)
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def __eq__(self, other):
        if not isinstance(other, ScalarField):
            return NotImplemented
        return self.spec == other.spec and np.array_equal(self.values, other.values)

    __hash__ = None


# --- targets -----------------------------------------------------------------


@dataclass(frozen=True)
class DiscTarget:
    """Disc ``x^2 + y^2 <= radius^2`` in the position plane."""

    radius: float

    def __post_init__(self):
        if not (math.isfinite(self.radius) and self.radius > 0):
            raise ValueError(f"disc radius must be > 0, got {self.radius}")

    def evaluate(self, x, y, vx, vy):
        return np.hypot(x, y) - self.radius


@dataclass(frozen=True)
class BoxTarget:
    """Axis-aligned box; unconstrained axes are ``None``."""

    bounds: tuple  # 4 entries of (lo, hi) or None

    def __post_init__(self):
        b = tuple(None if iv is None else (float(iv[0]), float(iv[1])) for iv in self.bounds)
        if len(b) != 4:
            raise ValueError("box target needs 4 axis entries")
        if all(iv is None for iv in b):
            raise ValueError("box target constrains no axis")
        for name, iv in zip(AXES, b):
            if iv is not None and not (iv[0] < iv[1]):
                raise ValueError(f"box target axis {name}: need lo < hi, got {iv}")
        object.__setattr__(self, "bounds", b)

    @classmethod
    def from_mapping(cls, m: dict) -> "BoxTarget":
        unknown = set(m) - set(AXES)
        if unknown:
            raise ValueError(f"unknown box axes: {sorted(unknown)}")
        return cls(tuple(m.get(a) for a in AXES))

    @property
    def center(self) -> np.ndarray:
        return np.array([0.0 if iv is None else 0.5 * (iv[0] + iv[1]) for iv in self.bounds])

    def evaluate(self, *coords):
        out = None
        for c, iv in zip(coords, self.bounds):
            if iv is None:
                continue
            m = np.maximum(iv[0] - c, c - iv[1])
            out = m if out is None else np.maximum(out, m)
        return out


# The box of the 1000 m tangential standoff recovery scenario.
RECOVERY_BOX = BoxTarget(((950.0, 1050.0), (-25.0, 25.0), (-0.01, 0.01), (-0.01, 0.01)))


def target_value(target, state) -> float:
    return float(target.evaluate(*np.asarray(state, dtype=float)))


def build_target_field(spec: GridSpec, target) -> ScalarField:
    """Sample the implicit target function ``phi0`` (negative inside) on ``spec``."""
    mesh = spec.mesh()
    vals = np.broadcast_to(target.evaluate(*mesh), spec.shape)
    return ScalarField(spec, vals)


# --- interpolation -------------------------------------------------------------

# corner offsets of a 4D cell, as 0/1 per axis
_CORNERS = np.array([[(c >> (3 - i)) & 1 for i in range(4)] for c in range(16)])


class Interpolator:
    """Multilinear interpolation of one or more fields at arbitrary 4D points.

    Points outside the grid are clamped onto it. For single-channel use the
    returned value is the clamped sample plus the L-infinity distance that was
    clamped away, which keeps the extension consistent with a level set.
    """

    def __init__(self, field: ScalarField, extra=None):
        self.field = field
        spec = field.spec
        self._lo = np.array(spec.mins)
        self._hi = np.array(spec.maxs)
        self._h = spec.spacing
        self._n = np.array(spec.counts)
        self._strides = np.array([int(np.prod(spec.counts[i + 1 :])) for i in range(4)])
        self._corner_offsets = _CORNERS @ self._strides
        self._flat = field.flat
        # optional extra channels sampled with the same weights
        self._extra = None
        if extra is not None:
            self._extra = np.stack([np.asarray(e, dtype=float).reshape(-1) for e in extra], axis=1)

    def _locate(self, s):
        c = np.clip(s, self._lo, self._hi)
        g = (c - self._lo) / self._h
        i0 = np.minimum(np.floor(g).astype(np.int64), self._n - 2)
        f = g - i0
        return c, i0, f

    def __call__(self, state) -> tuple[float, bool]:
        s = np.asarray(state, dtype=float)
        c, i0, f = self._locate(s)
        outside = float(np.max(np.abs(s - c)))
        w = np.where(_CORNERS == 1, f, 1.0 - f).prod(axis=1)
        base = int(i0 @ self._strides)
        val = float(w @ self._flat[base + self._corner_offsets])
        return val + outside, outside > 0.0

    def with_extra(self, state) -> tuple[float, np.ndarray, bool]:
        """Value (with off-grid extension), raw extra channels, off-grid flag."""
        s = np.asarray(state, dtype=float)
        c, i0, f = self._locate(s)
        outside = float(np.max(np.abs(s - c)))
        w = np.where(_CORNERS == 1, f, 1.0 - f).prod(axis=1)
        idx = int(i0 @ self._strides) + self._corner_offsets
        val = float(w @ self._flat[idx])
        extra = w @ self._extra[idx] if self._extra is not None else None
        return val + outside, extra, outside > 0.0

    def many(self, states) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized form over an (N, 4) array."""
        s = np.atleast_2d(np.asarray(states, dtype=float))
        c = np.clip(s, self._lo, self._hi)
        outside = np.max(np.abs(s - c), axis=1)
        g = (c - self._lo) / self._h
        i0 = np.minimum(np.floor(g).astype(np.int64), self._n - 2)
        f = g - i0
        w = np.where(_CORNERS[None, :, :] == 1, f[:, None, :], 1.0 - f[:, None, :]).prod(axis=2)
        idx = (i0 @ self._strides)[:, None] + self._corner_offsets[None, :]
        vals = np.einsum("ij,ij->i", w, self._flat[idx])
        return vals + outside, outside > 0.0


def sample(field: ScalarField, state) -> tuple[float, bool]:
    """Interpolated value at ``state`` and an out-of-domain flag."""
    return Interpolator(field)(state)


# --- finite differences --------------------------------------------------------


def one_sided_differences(values: np.ndarray, axis: int, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Backward and forward differences along ``axis``.

    Ghost nodes are linear extrapolations, so at either edge both sides equal
    the single available interior difference.
    """
    d = np.diff(values, axis=axis) / h
    first = np.take(d, [0], axis=axis)
    last = np.take(d, [-1], axis=axis)
    minus = np.concatenate([first, d], axis=axis)
    plus = np.concatenate([d, last], axis=axis)
    return minus, plus


def gradient_upwind(field: ScalarField) -> tuple[np.ndarray, np.ndarray]:
    """Left and right one-sided gradients, each of shape ``(4, *grid)``."""
    h = field.spec.spacing
    pairs = [one_sided_differences(field.values, i, h[i]) for i in range(4)]
    return np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])


def gradient_central(field: ScalarField) -> np.ndarray:
    """Central differences (one-sided at edges), shape ``(4, *grid)``."""
    return np.stack(np.gradient(field.values, *field.spec.spacing, edge_order=1))


def cell_increment_scale(field: ScalarField) -> float:
    """Typical change of the field across one cell near its zero level.

    Median, over nodes whose grid neighbourhood straddles zero, of the
    Euclidean norm of the cell-scaled central gradient. Falls back to all
    nodes when the field has no sign change.
    """
    v = field.values
    g = gradient_central(field) * field.spec.spacing.reshape(4, 1, 1, 1, 1)
    norm = np.sqrt(np.sum(g * g, axis=0))
    band = np.zeros(v.shape, dtype=bool)
    neg = v <= 0
    for ax in range(4):
        flip = neg.take(range(1, v.shape[ax]), axis=ax) != neg.take(range(v.shape[ax] - 1), axis=ax)
        pad = [(0, 0)] * 4
        lo, hi = list(pad), list(pad)
        lo[ax] = (0, 1)
        hi[ax] = (1, 0)
        band |= np.pad(flip, lo) | np.pad(flip, hi)
    sel = norm[band] if band.any() else norm.reshape(-1)
    return float(np.median(sel))


# --- slicing -------------------------------------------------------------------


def axis_index(name) -> int:
    if isinstance(name, int):
        if not 0 <= name < 4:
            raise ValueError(f"axis index out of range: {name}")
        return name
    try:
        return AXES.index(name)
    except ValueError:
        raise ValueError(f"unknown axis {name!r}; expected one of {AXES}") from None


def slice_2d(field: ScalarField, fixed: dict) -> tuple[np.ndarray, tuple[int, int]]:
    """Linearly interpolate the field onto the plane of the two free axes."""
    if len(fixed) != 2:
        raise ValueError(f"exactly two axes must be fixed, got {len(fixed)}")
    spec = field.spec
    fixed_idx = {axis_index(k): float(v) for k, v in fixed.items()}
    if len(fixed_idx) != 2:
        raise ValueError("the two fixed axes must differ")
    arr = field.values
    # collapse higher axes first so earlier indices stay valid
    for ax in sorted(fixed_idx, reverse=True):
        val = fixed_idx[ax]
        lo, hi, h = spec.mins[ax], spec.maxs[ax], spec.spacing[ax]
        if not lo - 1e-12 * abs(h) <= val <= hi + 1e-12 * abs(h):
            raise ValueError(f"fixed value {val} for axis {AXES[ax]} outside [{lo}, {hi}]")
        g = min(max((val - lo) / h, 0.0), spec.counts[ax] - 1.0)
        i0 = min(int(math.floor(g)), spec.counts[ax] - 2)
        f = g - i0
        arr = (1.0 - f) * np.take(arr, i0, axis=ax) + f * np.take(arr, i0 + 1, axis=ax)
    free = tuple(i for i in range(4) if i not in fixed_idx)
    return arr, free


def zero_contour_slice(field: ScalarField, fixed: dict) -> list[np.ndarray]:
    """Polylines of the zero level set in a 2D slice, in physical coordinates.

    Returns a list of ``(m, 2)`` arrays ordered as the two free axes. Closed
    contours repeat their first point at the end.
    """
    from skimage import measure

    plane, free = slice_2d(field, fixed)
    if plane.min() > 0 or plane.max() <= 0:
        return []
    spec = field.spec
    lo = np.array([spec.mins[free[0]], spec.mins[free[1]]])
    h = np.array([spec.spacing[free[0]], spec.spacing[free[1]]])
    return [lo + c * h for c in measure.find_contours(plane, 0.0)]


# --- binary I/O ------------------------------------------------------------------


def field_to_bytes(field: ScalarField) -> bytes:
    spec = field.spec
    parts = [MAGIC, struct.pack("<I", 4)]
    for lo, hi, n in zip(spec.mins, spec.maxs, spec.counts):
        parts.append(struct.pack("<ddI", lo, hi, n))
    parts.append(field.values.astype("<f8").tobytes(order="C"))
    return b"".join(parts)


def field_from_bytes(data: bytes) -> ScalarField:
    if data[:4] != MAGIC:
        raise FieldFormatError("bad magic: not an HJF1 field file")
    if len(data) < 8:
        raise FieldFormatError("truncated header")
    (ndim,) = struct.unpack_from("<I", data, 4)
    if ndim != 4:
        raise FieldFormatError(f"expected 4 axes, file declares {ndim}")
    off = 8
    mins, maxs, counts = [], [], []
    for _ in range(4):
        if len(data) < off + 20:
            raise FieldFormatError("truncated axis header")
        lo, hi, n = struct.unpack_from("<ddI", data, off)
        off += 20
        mins.append(lo)
        maxs.append(hi)
        counts.append(n)
    try:
        spec = GridSpec(tuple(mins), tuple(maxs), tuple(counts))
    except ValueError as exc:
        raise FieldFormatError(f"invalid grid header: {exc}") from None
    expected = off + 8 * spec.size
    if len(data) != expected:
        raise FieldFormatError(f"payload size mismatch: {len(data)} bytes, expected {expected}")
    vals = np.frombuffer(data, dtype="<f8", offset=off).reshape(spec.shape)
    try:
        return ScalarField(spec, vals)
    except ValueError as exc:
        raise FieldFormatError(str(exc)) from None


def write_field(path, field: ScalarField) -> None:
    Path(path).write_bytes(field_to_bytes(field))


def read_field(path) -> ScalarField:
    return field_from_bytes(Path(path).read_bytes())
