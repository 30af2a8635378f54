"""Sparse planar array geometries on an integer half-wavelength grid.

Element positions are stored as exact integer ``(y, z)`` pairs in units of
``d0 = lambda / 2``.  Wavelength only enters when a position is turned into
a phase, so there is no geometric rounding anywhere in this module.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

KINDS = ("UPA", "NA1D", "LNA", "PNA")


class InvalidParameterError(ValueError):
    """Raised when an array constructor receives out-of-range parameters."""


@dataclass(frozen=True, eq=False)
class ArrayGeometry:
    """A planar array in the y-z plane.

    Attributes:
        kind: One of ``UPA``, ``NA1D``, ``LNA`` or ``PNA``.
        params: The integer construction parameters of ``kind``.
        elements: ``M x 2`` integer array of ``(y, z)`` positions in the
            canonical order of the constructor.
    """

    kind: str
    params: tuple
    elements: np.ndarray = field(repr=False)

    def __post_init__(self):
        el = np.asarray(self.elements, dtype=np.int64).reshape(-1, 2)
        el.setflags(write=False)
        object.__setattr__(self, "elements", el)
        if len({tuple(p) for p in el.tolist()}) != len(el):
            raise InvalidParameterError("duplicate element positions")

    @property
    def M(self) -> int:
        return len(self.elements)

    @property
    def y(self) -> np.ndarray:
        return self.elements[:, 0]

    @property
    def z(self) -> np.ndarray:
        return self.elements[:, 1]

    def __eq__(self, other):
        if not isinstance(other, ArrayGeometry):
            return NotImplemented
        return (self.kind == other.kind and tuple(self.params) == tuple(other.params)
                and np.array_equal(self.elements, other.elements))

    def __hash__(self):
        return hash((self.kind, tuple(self.params)))

    def axis_indices(self, axis: str) -> np.ndarray:
        """Indices of the elements lying on the given coordinate axis.

        For an LNA this picks out the y-axis or z-axis nested subarray
        (the origin element belongs to both).  Indices are ordered by
        ascending coordinate along the axis.
        """
        if axis == "y":
            idx = np.flatnonzero(self.z == 0)
            return idx[np.argsort(self.y[idx], kind="stable")]
        if axis == "z":
            idx = np.flatnonzero(self.y == 0)
            return idx[np.argsort(self.z[idx], kind="stable")]
        raise ValueError(f"axis must be 'y' or 'z', got {axis!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": list(self.params),
                "elements": self.elements.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "ArrayGeometry":
        g = build(d["kind"], *d["params"])
        if "elements" in d and not np.array_equal(g.elements, np.asarray(d["elements"]).reshape(-1, 2)):
            raise InvalidParameterError("serialized elements disagree with params")
        return g

    @classmethod
    def from_json(cls, s: str) -> "ArrayGeometry":
        return cls.from_dict(json.loads(s))


def _check_positive(**kw):
    for name, v in kw.items():
        if int(v) != v or v < 1:
            raise InvalidParameterError(f"{name} must be a positive integer, got {v!r}")


def nested_positions(m1: int, m2: int) -> list[int]:
    """Normalized positions of a two-level nested array, ascending."""
    _check_positive(m1=m1, m2=m2)
    inner = list(range(m1))
    outer = [k * (m1 + 1) - 1 for k in range(1, m2 + 1)]
    return inner + outer


def build_nested_1d(m1: int, m2: int, axis: str = "z") -> ArrayGeometry:
    pos = nested_positions(m1, m2)
    if axis == "z":
        el = [(0, p) for p in pos]
    elif axis == "y":
        el = [(p, 0) for p in pos]
    else:
        raise InvalidParameterError(f"axis must be 'y' or 'z', got {axis!r}")
    return ArrayGeometry("NA1D", (m1, m2, axis), np.array(el))


def build_lna(my1: int, my2: int, mz1: int, mz2: int) -> ArrayGeometry:
    """L-shaped nested array: y-axis NA, then the z-axis NA without the origin."""
    _check_positive(my1=my1, my2=my2, mz1=mz1, mz2=mz2)
    el = [(p, 0) for p in nested_positions(my1, my2)]
    el += [(0, p) for p in nested_positions(mz1, mz2) if p != 0]
    return ArrayGeometry("LNA", (my1, my2, mz1, mz2), np.array(el))


def build_pna(m1d: int, m2d: int, m1s: int, m2s: int) -> ArrayGeometry:
    """Planar nested array: sparse UPA block, then compact block minus origin.

    Both blocks are listed row-major (y outer, z inner).
    """
    for name, v, lo in (("m1d", m1d, 0), ("m2d", m2d, 1), ("m1s", m1s, 0), ("m2s", m2s, 1)):
        if int(v) != v or v < lo:
            raise InvalidParameterError(f"{name} must be an integer >= {lo}, got {v!r}")
    dy = 2 * m1d + 1
    sparse = [(y * dy, z * m2d) for y in range(-m1s, m1s + 1) for z in range(m2s)]
    compact = [(y, z) for y in range(-m1d, m1d + 1) for z in range(-(m2d - 1), 1)
               if (y, z) != (0, 0)]
    return ArrayGeometry("PNA", (m1d, m2d, m1s, m2s), np.array(sparse + compact))


def build_upa(myu: int, mzu: int) -> ArrayGeometry:
    _check_positive(myu=myu, mzu=mzu)
    el = [(y, z) for y in range(myu) for z in range(mzu)]
    return ArrayGeometry("UPA", (myu, mzu), np.array(el))


_BUILDERS = {"UPA": build_upa, "NA1D": build_nested_1d, "LNA": build_lna, "PNA": build_pna}


def build(kind: str, *params) -> ArrayGeometry:
    """Dispatch to the constructor for ``kind`` (case-insensitive)."""
    try:
        return _BUILDERS[kind.upper()](*params)
    except KeyError:
        raise InvalidParameterError(f"unknown array kind {kind!r}") from None
    except TypeError as exc:
        raise InvalidParameterError(str(exc)) from None


def expected_count(kind: str, params) -> int:
    """Closed-form element count for a parameter tuple."""
    kind = kind.upper()
    if kind == "UPA":
        return params[0] * params[1]
    if kind == "NA1D":
        return params[0] + params[1]
    if kind == "LNA":
        my1, my2, mz1, mz2 = params
        return my1 + my2 + mz1 + mz2 - 1
    if kind == "PNA":
        m1d, m2d, m1s, m2s = params
        return (2 * m1d + 1) * m2d + (2 * m1s + 1) * m2s - 1
    raise InvalidParameterError(f"unknown array kind {kind!r}")


@dataclass(frozen=True)
class CoArray:
    """Difference co-array of a geometry.

    Attributes:
        weights: mapping ``(dy, dz) -> multiplicity``.
        half_extent: ``(Ly, Lz)`` such that every lag in
            ``[-(Ly-1), Ly-1] x [-(Lz-1), Lz-1]`` is present; this is the
            maximal hole-free centered rectangle (a centered ULA when one of
            the extents is 1).
    """

    weights: dict
    half_extent: tuple

    @property
    def lags(self) -> np.ndarray:
        return np.array(sorted(self.weights), dtype=np.int64).reshape(-1, 2)

    def multiplicity(self, lag) -> int:
        return self.weights.get(tuple(int(v) for v in lag), 0)

    @property
    def n_contiguous(self) -> int:
        """Number of lags in the contiguous centered segment."""
        ly, lz = self.half_extent
        return (2 * ly - 1) * (2 * lz - 1)

    def contiguous_lags(self) -> np.ndarray:
        """Lags of the hole-free segment, row-major (y outer, z inner)."""
        ly, lz = self.half_extent
        return np.array([(a, b) for a in range(-(ly - 1), ly)
                         for b in range(-(lz - 1), lz)], dtype=np.int64)


def _max_centered_rectangle(lagset: set) -> tuple:
    # Exhaustive over y half-extents; largest area wins, ties go to the wider y extent.
    def run_z(ly):
        lz = 0
        while all((a, b) in lagset for a in range(-ly + 1, ly) for b in (-lz, lz)):
            lz += 1
        return lz

    best, best_area = (1, 1), 1
    ly = 1
    while all((a, 0) in lagset for a in (-(ly - 1), ly - 1)):
        lz = run_z(ly)
        if lz == 0:
            break
        area = (2 * ly - 1) * (2 * lz - 1)
        if area > best_area or (area == best_area and ly > best[0]):
            best, best_area = (ly, lz), area
        ly += 1
    return best


def difference_coarray(g: ArrayGeometry) -> CoArray:
    """Exact multiset of pairwise differences ``x_i - x_j``."""
    el = g.elements
    d = (el[:, None, :] - el[None, :, :]).reshape(-1, 2)
    weights = dict(Counter(map(tuple, d.tolist())))
    return CoArray(weights, _max_centered_rectangle(set(weights)))


def coarray_1d(positions) -> tuple[dict, int]:
    """Difference weights of a linear array and its contiguous half-length.

    Returns ``(weights, L)`` with lags ``-(L-1)..(L-1)`` all present.
    """
    p = np.asarray(positions, dtype=np.int64)
    weights = dict(Counter((p[:, None] - p[None, :]).ravel().tolist()))
    L = 1
    while L in weights:
        L += 1
    return weights, L
