"""Beam patterns, main-lobe widths and grating lobes of UPA/PNA/LNA arrays.

A pattern is the normalized power ``|a^H(k) a(i) / M|^2`` written as a
function of the direction-cosine offsets ``dy`` and ``dz`` (both in
``[-2, 2]``).  ``pattern_direct`` sums over the physical elements; the
``pattern_*_closed`` functions evaluate the same quantity through products of
Dirichlet kernels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import ArrayGeometry, InvalidParameterError, build, expected_count

SINGULAR_TOL = 1e-9
SCAN_POINTS = 20001
# Numeric widths carry ~1e-10 error from the golden-section refinement.
BOUND_TOL = 1e-9
GOLDEN_TOL = 1e-10


class NoLocalMinimumError(RuntimeError):
    """The axis cross-section has no local minimum in (0, 2]."""


def pattern_direct(g: ArrayGeometry, dy, dz):
    """Beam pattern by explicit summation over the elements.

    ``dy`` and ``dz`` broadcast against each other; the result has their
    broadcast shape.
    """
    dy, dz = np.broadcast_arrays(np.asarray(dy, float), np.asarray(dz, float))
    phase = np.pi * (np.multiply.outer(dy, g.y) + np.multiply.outer(dz, g.z))
    s = np.exp(1j * phase).sum(axis=-1) / g.M
    return np.abs(s) ** 2


def sin_ratio(num: float, den: float, x):
    """``sin(pi/2 * num * x) / sin(pi/2 * den * x)`` with removable singularities filled in.

    Where the denominator argument is within ``SINGULAR_TOL`` of a multiple
    of pi the L'Hopital limit ``(num/den) cos(.)/cos(.)`` is used.
    """
    x = np.asarray(x, float)
    a = 0.5 * np.pi * num * x
    b = 0.5 * np.pi * den * x
    r = np.remainder(b, np.pi)
    sing = np.minimum(r, np.pi - r) < SINGULAR_TOL
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(sing, (num / den) * np.cos(a) / np.cos(b), np.sin(a) / np.sin(b))
    return out


def pattern_upa_closed(myu: int, mzu: int, dy, dz):
    return (sin_ratio(myu, 1, dy) / myu) ** 2 * (sin_ratio(mzu, 1, dz) / mzu) ** 2


def pna_kernels(m1d, m2d, m1s, m2s, dy, dz):
    """The compact-block and sparse-block Dirichlet products (zeta_1, zeta_2)."""
    w = 2 * m1d + 1
    zeta1 = sin_ratio(m2d, 1, dz) * sin_ratio(w, 1, dy)
    zeta2 = sin_ratio(m2d * m2s, m2d, dz) * sin_ratio(w * (2 * m1s + 1), w, dy)
    return zeta1, zeta2


def pattern_pna_closed(m1d, m2d, m1s, m2s, dy, dz, literal=False):
    """PNA pattern from the block kernels.

    With ``literal=True`` the sparse-block phase is taken as
    ``(pi/2)(m1d+1)(m2s-1)dz`` and the shared-origin correction as ``-1``;
    that form is an approximation and differs from ``pattern_direct`` off
    the ``dz = 0`` line.  The default uses the exact relative phases.
    """
    M = expected_count("PNA", (m1d, m2d, m1s, m2s))
    dy, dz = np.broadcast_arrays(np.asarray(dy, float), np.asarray(dz, float))
    z1, z2 = pna_kernels(m1d, m2d, m1s, m2s, dy, dz)
    if literal:
        ph = 0.5 * np.pi * (m1d + 1) * (m2s - 1) * dz
        origin = 1.0
    else:
        ph = 0.5 * np.pi * (m2d * m2s - 1) * dz
        origin = np.exp(0.5j * np.pi * (m2d - 1) * dz)
    return np.abs(z1 + np.exp(1j * ph) * z2 - origin) ** 2 / M**2


def nested_kernel(m1: int, m2: int, x):
    """Inner-ULA plus outer-ULA sum of a nested array, phase-referenced to the inner ULA centre."""
    x = np.asarray(x, float)
    outer = np.exp(0.5j * np.pi * (m1 + 1) * m2 * x) * sin_ratio((m1 + 1) * m2, m1 + 1, x)
    return sin_ratio(m1, 1, x) + outer


def pattern_lna_closed(my1, my2, mz1, mz2, dy, dz, literal=False):
    """LNA pattern from the two nested-array kernels.

    ``literal=True`` subtracts a bare ``1`` for the shared origin, which is
    exact only when ``my1 == 1``; the default carries the origin phase.
    """
    M = expected_count("LNA", (my1, my2, mz1, mz2))
    dy, dz = np.broadcast_arrays(np.asarray(dy, float), np.asarray(dz, float))
    ey = nested_kernel(my1, my2, dy)
    ez = nested_kernel(mz1, mz2, dz)
    ph = 0.5 * np.pi * ((mz1 - 1) * dz - (my1 - 1) * dy)
    origin = 1.0 if literal else np.exp(-0.5j * np.pi * (my1 - 1) * dy)
    return np.abs(ey + np.exp(1j * ph) * ez - origin) ** 2 / M**2


def pattern_closed(kind: str, params, dy, dz, literal=False):
    kind = kind.upper()
    if kind == "UPA":
        return pattern_upa_closed(*params, dy, dz)
    if kind == "PNA":
        return pattern_pna_closed(*params, dy, dz, literal=literal)
    if kind == "LNA":
        return pattern_lna_closed(*params, dy, dz, literal=literal)
    raise InvalidParameterError(f"no closed form for kind {kind!r}")


def cross_section(g: ArrayGeometry, axis: str, x):
    """On-axis pattern ``G(x, 0)`` (``axis='y'``) or ``G(0, x)`` (``axis='z'``).

    Elements are grouped by their coordinate along the axis, so each distinct
    coordinate costs one phase evaluation.
    """
    x = np.asarray(x, float)
    if axis == "y":
        coord = g.y
    elif axis == "z":
        coord = g.z
    else:
        raise ValueError(f"axis must be 'y' or 'z', got {axis!r}")
    pos, cnt = np.unique(coord, return_counts=True)
    ph = np.pi * np.multiply.outer(x, pos)
    re = np.cos(ph) @ cnt
    im = np.sin(ph) @ cnt
    return (re**2 + im**2) / g.M**2


def _golden_min(f, a, b, tol=GOLDEN_TOL):
    invphi = (math.sqrt(5) - 1) / 2
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def first_local_minimum(g: ArrayGeometry, axis: str) -> float:
    """Smallest positive local-minimum offset of the axis cross-section."""
    x = np.linspace(0.0, 2.0, SCAN_POINTS + 1)[1:]
    v = cross_section(g, axis, x)
    d = np.diff(v)
    hits = np.flatnonzero((d[:-1] <= 0) & (d[1:] > 0))
    if hits.size == 0:
        raise NoLocalMinimumError(f"{g.kind}{tuple(g.params)} has no local minimum on the {axis} axis")
    i = hits[0] + 1
    lo, hi = x[i - 1], x[i + 1]
    return _golden_min(lambda t: float(cross_section(g, axis, t)), lo, hi)


def mainlobe_width_numeric(g: ArrayGeometry, axis: str) -> float:
    """Main-lobe width ``2 * Delta_min`` along ``axis``."""
    return 2.0 * first_local_minimum(g, axis)


@dataclass(frozen=True)
class MainlobeBounds:
    lower: float
    upper: float
    tight_upper: float | None = None
    regime_condition_met: bool = False
    # UPA widths are known exactly; lower == upper == exact there.
    exact: float | None = None

    def contains(self, bw: float, tol: float = BOUND_TOL) -> bool:
        """Whether ``bw`` respects the bounds, allowing ``tol`` for a bound that is attained."""
        if self.exact is not None:
            return math.isclose(bw, self.exact, rel_tol=1e-6)
        ok = self.lower - tol <= bw <= self.upper + tol
        if self.regime_condition_met and self.tight_upper is not None:
            ok = ok and bw <= self.tight_upper + tol
        return ok


def mainlobe_bounds(kind: str, params, axis: str) -> MainlobeBounds:
    """Analytic bounds on the main-lobe width along one axis."""
    kind = kind.upper()
    if axis not in ("y", "z"):
        raise InvalidParameterError(f"axis must be 'y' or 'z', got {axis!r}")
    params = tuple(params)
    if kind == "UPA":
        n = params[0] if axis == "y" else params[1]
        w = 4.0 / n
        return MainlobeBounds(w, w, exact=w)
    if kind == "PNA":
        m1d, m2d, m1s, m2s = params
        wd, ws = 2 * m1d + 1, 2 * m1s + 1
        if axis == "y":
            regime = m1s >= m2d / m2s * wd
            return MainlobeBounds(4.0 / (wd * ws), 4.0 / wd, 8.0 / (wd * ws) if regime else None, regime)
        dz2 = 2.0 / (m2d * m2s)
        dz3 = 1.0 / ((m1d + 1) * (m2s - 1)) if m2s > 1 else math.inf
        regime = m2s >= wd / ws * (3 * m2d - 1)
        return MainlobeBounds(2.0 * min(dz2, dz3), 4.0 / m2d, 8.0 / (m2d * m2s) if regime else None, regime)
    if kind == "LNA":
        my1, my2, mz1, mz2 = params
        m1, m2 = (my1, my2) if axis == "y" else (mz1, mz2)
        regime = m2 >= 3 * (m1 + 1)
        tight = 4.0 / ((m1 + 1) * m2)
        return MainlobeBounds(2.0 / ((m1 + 1) * m2), 4.0 / m1, tight if regime else None, regime)
    raise InvalidParameterError(f"no main-lobe bounds for kind {kind!r}")


@dataclass(frozen=True)
class SidelobeReport:
    """Grating-lobe positions with predicted and measured heights.

    ``measured`` holds ``pattern_direct`` at each position and
    ``measured_slh`` its maximum (the most prominent grating lobe).
    """

    kind: str
    params: tuple
    lobe_indices: list = field(default_factory=list)
    positions: list = field(default_factory=list)
    predicted: list = field(default_factory=list)
    measured: list = field(default_factory=list)
    predicted_slh: float = 0.0
    measured_slh: float = 0.0

    def relative_errors(self) -> np.ndarray:
        p = np.asarray(self.predicted, float)
        return np.abs(np.asarray(self.measured, float) - p) / p


def lna_slh(my1, my2, mz1, mz2, m, n) -> float:
    """Approximate grating-lobe height of an LNA at lobe index (m, n)."""
    M = expected_count("LNA", (my1, my2, mz1, mz2))
    ph = (n - m + 2 * m / (my1 + 1) - 2 * n / (mz1 + 1)) * np.pi
    v = (-1) ** m * (my2 - 1) + np.exp(1j * ph) * (-1) ** n * (mz2 - 1)
    return float(abs(v) ** 2 / M**2)


def grating_lobes_and_slh(kind: str, params) -> SidelobeReport:
    """Grating-lobe positions of a PNA or LNA and their heights.

    PNA lobes sit on the grid ``dy = 2m/(2 m1d + 1)``, ``dz = 2n/m2d``.  A
    block that is a single column (``m1d = 0``) puts its lobes on ``dy = 0``,
    so index 0 is admitted on each axis and only ``(0, 0)`` is excluded.  For
    an LNA with ``my1 == mz1`` only the diagonal ``m == n`` is reported.
    """
    kind = kind.upper()
    params = tuple(params)
    g = build(kind, *params)
    M = g.M
    idx, pred = [], []
    if kind == "PNA":
        m1d, m2d, m1s, m2s = params
        slh = (m2s * (2 * m1s + 1)) ** 2 / M**2
        ms = range(-2 * m1d, 2 * m1d + 1)
        ns = range(-(m2d - 1), m2d)
        for m in ms:
            for n in ns:
                if (m, n) != (0, 0):
                    idx.append((m, n))
                    pred.append(slh)
        pos = [(2 * m / (2 * m1d + 1), 2 * n / m2d) for m, n in idx]
    elif kind == "LNA":
        my1, my2, mz1, mz2 = params
        ms = [m for m in range(-my1, my1 + 1) if m]
        ns = [n for n in range(-mz1, mz1 + 1) if n]
        if my1 == mz1:
            idx = [(m, m) for m in ms]
        else:
            idx = [(m, n) for m in ms for n in ns]
        pred = [lna_slh(*params, m, n) for m, n in idx]
        pos = [(2 * m / (my1 + 1), 2 * n / (mz1 + 1)) for m, n in idx]
    else:
        raise InvalidParameterError(f"grating lobes are defined for PNA and LNA, not {kind!r}")
    if not idx:
        return SidelobeReport(kind, params)
    p = np.asarray(pos)
    meas = pattern_direct(g, p[:, 0], p[:, 1])
    return SidelobeReport(kind, params, idx, pos, pred, meas.tolist(),
                          float(max(pred)), float(meas.max()))


@dataclass(frozen=True)
class CrossSection:
    """Factorization of an on-axis pattern value.

    ``factors`` names follow the usual decomposition: ``f, g`` for the PNA
    y-axis, ``a, b, p, q, r`` (plus the origin residual ``c``) for the PNA
    z-axis and ``h, s, w, v, M_other`` for an LNA axis.
    """

    kind: str
    params: tuple
    axis: str
    delta: float
    factors: dict
    value: float


def appendix_cross_sections(kind: str, params, axis: str, delta: float) -> CrossSection:
    kind = kind.upper()
    params = tuple(params)
    M = expected_count(kind, params)
    x = float(delta)
    if kind == "PNA" and axis == "y":
        m1d, m2d, m1s, m2s = params
        w = 2 * m1d + 1
        f = m2d * float(sin_ratio(w, 1, x))
        gg = m2s * float(sin_ratio(w * (2 * m1s + 1), w, x))
        return CrossSection(kind, params, axis, x, {"f": f, "g": gg}, abs(f + gg - 1) ** 2 / M**2)
    if kind == "PNA" and axis == "z":
        m1d, m2d, m1s, m2s = params
        w = 2 * m1d + 1
        a = w**2 / M**2
        b = (2 * m1s + 1) / w
        p = float(sin_ratio(m2d, 1, x))
        q = float(sin_ratio(m2d * m2s, m2d, x))
        r = 0.5 * np.pi * (m2d * m2s - 1) * x
        c = np.exp(0.5j * np.pi * (m2d - 1) * x) / w
        factors = {"a": a, "b": b, "p": p, "q": q, "r": r, "c": complex(c),
                   "r_literal": 0.5 * np.pi * (m1d + 1) * (m2s - 1) * x}
        return CrossSection(kind, params, axis, x, factors,
                            float(a * abs(p + b * np.exp(1j * r) * q - c) ** 2))
    if kind == "LNA" and axis in ("y", "z"):
        my1, my2, mz1, mz2 = params
        m1, m2, m_other = (my1, my2, mz1 + mz2) if axis == "y" else (mz1, mz2, my1 + my2)
        h = float(sin_ratio(m1, 1, x))
        s = float(sin_ratio((m1 + 1) * m2, m1 + 1, x))
        w = 0.5 * np.pi * (m1 + 1) * m2 * x
        v = -0.5 * np.pi * (m1 - 1) * x
        val = abs(h + np.exp(1j * w) * s + np.exp(1j * v) * (m_other - 1)) ** 2 / M**2
        return CrossSection(kind, params, axis, x, {"h": h, "s": s, "w": w, "v": v, "M_other": m_other},
                            float(val))
    raise InvalidParameterError(f"no cross-section decomposition for {kind!r} on axis {axis!r}")


@dataclass(frozen=True)
class TheoremCheck:
    kind: str
    params: tuple
    axis: str
    bw_numeric: float
    bounds: MainlobeBounds
    passed: bool

    def as_row(self) -> list:
        b = self.bounds
        tu = "" if b.tight_upper is None else repr(float(b.tight_upper))
        return [self.kind, " ".join(str(p) for p in self.params), self.axis,
                repr(float(self.bw_numeric)), repr(float(b.lower)), repr(float(b.upper)), tu,
                str(bool(self.passed)).lower()]


def check_mainlobe(kind: str, params, axis: str) -> TheoremCheck:
    """Numeric main-lobe width against the analytic bounds.

    A cross-section without a local minimum yields ``bw_numeric = nan`` and
    a failed check.
    """
    bounds = mainlobe_bounds(kind, params, axis)
    try:
        bw = mainlobe_width_numeric(build(kind, *params), axis)
    except NoLocalMinimumError:
        return TheoremCheck(kind.upper(), tuple(params), axis, float("nan"), bounds, False)
    return TheoremCheck(kind.upper(), tuple(params), axis, bw, bounds, bounds.contains(bw))


def theorem_grid(which: str = "full") -> list:
    """Parameter tuples for the bound suite.

    ``full`` is PNA ``m1d 0..3, m2d 1..5, m1s 0..5, m2s 1..8`` plus LNA with
    both levels ``m1 1..5, m2 1..8`` per axis.  ``small`` is a handful of
    worked configurations.
    """
    if which == "small":
        return [("UPA", (4, 4)), ("UPA", (8, 4)), ("PNA", (2, 3, 5, 3)), ("PNA", (1, 3, 1, 8)),
                ("LNA", (4, 4, 4, 4)), ("LNA", (1, 6, 1, 6)), ("LNA", (2, 8, 3, 8))]
    if which != "full":
        raise ValueError(f"unknown grid {which!r}")
    out = [("PNA", (a, b, c, d)) for a in range(4) for b in range(1, 6)
           for c in range(6) for d in range(1, 9)]
    lna1d = [(m1, m2) for m1 in range(1, 6) for m2 in range(1, 9)]
    out += [("LNA", y + z) for y in lna1d for z in lna1d]
    return out


def verify_theorems(which: str = "full") -> list:
    """Check both axes of every configuration in :func:`theorem_grid`."""
    return [check_mainlobe(kind, params, axis)
            for kind, params in theorem_grid(which) for axis in ("y", "z")]
