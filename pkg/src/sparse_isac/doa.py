"""Co-array DoA estimation: vectorization, spatial smoothing, MUSIC, pairing.

Direction cosines are used throughout the search: ``u_z = sin(theta)`` for
the z axis and ``u_y = cos(varphi) = cos(theta) sin(phi)`` for the y axis.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.optimize import linear_sum_assignment

from .channel import SnapshotBlock, pooled_samples, sample_covariance
from .geometry import ArrayGeometry, coarray_1d, difference_coarray

GRID_POINTS = 4096
COARSE_POINTS_2D = 256
MIN_PEAK_SEPARATION = 2
MAX_PAIRING_SOURCES = 9
COND_LIMIT = 1e10


class NonContiguousError(ValueError):
    """Virtual signal does not cover the required hole-free lag segment."""


class SingularManifoldError(ValueError):
    """Estimated angles coincide, so the manifold is rank deficient."""


class UnsupportedSizeError(ValueError):
    pass


@dataclass
class VirtualSignal:
    """Single snapshot of the virtual co-array.

    Attributes:
        lags: ``(L,)`` integer lags for a linear co-array, or ``(L, 2)``
            row-major ``(dy, dz)`` lags for a planar one.
        values: Complex samples aligned with ``lags``.
    """

    lags: np.ndarray
    values: np.ndarray

    @property
    def is_2d(self) -> bool:
        return self.lags.ndim == 2

    def value_at(self, lag):
        if self.is_2d:
            hit = np.flatnonzero((self.lags == np.asarray(lag)).all(axis=1))
        else:
            hit = np.flatnonzero(self.lags == lag)
        if not len(hit):
            raise KeyError(lag)
        return self.values[hit[0]]


def _average_by_lag(R, keys, n_keys):
    w = R.ravel()
    cnt = np.bincount(keys, minlength=n_keys)
    re = np.bincount(keys, weights=w.real, minlength=n_keys)
    im = np.bincount(keys, weights=w.imag, minlength=n_keys)
    return cnt, (re + 1j * im) / np.maximum(cnt, 1)


def vectorize_1d(R: np.ndarray, positions) -> VirtualSignal:
    """Map ``vec(R)`` onto lags ``p_i - p_j`` of a linear array.

    Duplicate lags are averaged and the result is restricted to the central
    hole-free segment ``-(L-1)..(L-1)``.
    """
    p = np.asarray(positions, dtype=np.int64)
    _, L = coarray_1d(p)
    span = int(p.max() - p.min())
    keys = (p[:, None] - p[None, :] + span).ravel()
    _, avg = _average_by_lag(np.asarray(R), keys, 2 * span + 1)
    lags = np.arange(-(L - 1), L)
    return VirtualSignal(lags, avg[lags + span])


@lru_cache(maxsize=64)
def _half_extent(g: ArrayGeometry):
    return difference_coarray(g).half_extent


def vectorize_2d(R: np.ndarray, g: ArrayGeometry) -> VirtualSignal:
    """Planar analogue of :func:`vectorize_1d` on the centered lag rectangle."""
    el = g.elements
    ly, lz = _half_extent(g)
    sy = int(np.ptp(el[:, 0]))
    sz = int(np.ptp(el[:, 1]))
    d = el[:, None, :] - el[None, :, :]
    keys = ((d[..., 0] + sy) * (2 * sz + 1) + d[..., 1] + sz).ravel()
    _, avg = _average_by_lag(np.asarray(R), keys, (2 * sy + 1) * (2 * sz + 1))
    a, b = np.meshgrid(np.arange(-(ly - 1), ly), np.arange(-(lz - 1), lz), indexing="ij")
    lags = np.stack([a.ravel(), b.ravel()], axis=1)
    return VirtualSignal(lags, avg[(lags[:, 0] + sy) * (2 * sz + 1) + lags[:, 1] + sz])


def vectorize_covariance(R: np.ndarray, g) -> VirtualSignal:
    """Vectorize a covariance onto the contiguous co-array segment.

    ``g`` may be an :class:`ArrayGeometry` or raw positions.  Geometries (or
    position sets) confined to one axis give a linear virtual signal.
    """
    R = np.asarray(R)
    if not np.allclose(R, R.conj().T, atol=1e-9 * max(1.0, np.abs(R).max())):
        raise ValueError("covariance must be Hermitian")
    if isinstance(g, ArrayGeometry):
        if np.all(g.y == 0):
            return vectorize_1d(R, g.z)
        if np.all(g.z == 0):
            return vectorize_1d(R, g.y)
        return vectorize_2d(R, g)
    p = np.asarray(g)
    if p.ndim == 1:
        return vectorize_1d(R, p)
    raise TypeError("pass an ArrayGeometry or 1-D positions")


def spatial_smoothing_1d(v: VirtualSignal) -> np.ndarray:
    """Average of the ``L`` shifted length-``L`` subvectors of the virtual ULA."""
    lags = np.asarray(v.lags)
    n = len(lags)
    if lags.ndim != 1 or n % 2 == 0 or not np.array_equal(lags, np.arange(-(n // 2), n // 2 + 1)):
        raise NonContiguousError("1-D smoothing needs lags -(L-1)..(L-1)")
    L = n // 2 + 1
    # Z[:, i] is the subvector starting at lag -(L-1)+i.
    Z = sliding_window_view(np.asarray(v.values), L).T
    R = Z @ Z.conj().T / L
    return 0.5 * (R + R.conj().T)


def _rect_shape(lags):
    ys = np.unique(lags[:, 0])
    zs = np.unique(lags[:, 1])
    ny, nz = len(ys), len(zs)
    ok = (ny % 2 == 1 and nz % 2 == 1 and len(lags) == ny * nz
          and np.array_equal(ys, np.arange(-(ny // 2), ny // 2 + 1))
          and np.array_equal(zs, np.arange(-(nz // 2), nz // 2 + 1)))
    if ok:
        a, b = np.meshgrid(ys, zs, indexing="ij")
        ok = np.array_equal(lags, np.stack([a.ravel(), b.ravel()], axis=1))
    if not ok:
        raise NonContiguousError("2-D smoothing needs a centered row-major lag rectangle")
    return ny // 2 + 1, nz // 2 + 1


def spatial_smoothing_2d(v: VirtualSignal):
    """2-D smoothing over all ``Ly x Lz`` sub-rectangles of the lag rectangle.

    Returns:
        ``(R, (Ly, Lz))``; ``R`` is ``Ly*Lz`` square with row-major ordering.
    """
    lags = np.asarray(v.lags)
    if lags.ndim != 2:
        raise NonContiguousError("2-D smoothing needs planar lags")
    ly, lz = _rect_shape(lags)
    V = np.asarray(v.values).reshape(2 * ly - 1, 2 * lz - 1)
    Z = sliding_window_view(V, (ly, lz)).reshape(ly * lz, ly * lz).T
    R = Z @ Z.conj().T / (ly * lz)
    return 0.5 * (R + R.conj().T), (ly, lz)


@dataclass
class MusicResult:
    """Peaks of a MUSIC pseudo-spectrum in direction-cosine space.

    ``u`` has shape ``(n,)`` in 1-D and ``(n, 2)`` (``u_y, u_z``) in 2-D.
    """

    u: np.ndarray
    peak_values: np.ndarray
    degraded: bool
    grid_step: float


def _signal_subspace(Rss, n_sources):
    dim = Rss.shape[0]
    if not 0 < n_sources < dim:
        raise ValueError(f"need 0 < n_sources < {dim}, got {n_sources}")
    _, vecs = np.linalg.eigh(Rss)
    return vecs[:, dim - n_sources:]


def _grid(n):
    return np.linspace(-1.0, 1.0, n)


def _parabolic_offset(dm, d0, dp):
    den = dm - 2.0 * d0 + dp
    if den <= 0:
        return 0.0
    return float(np.clip(0.5 * (dm - dp) / den, -0.5, 0.5))


def _pick_peaks_1d(P, n, min_sep):
    interior = np.flatnonzero((P[1:-1] > P[:-2]) & (P[1:-1] >= P[2:])) + 1
    cand = list(interior)
    if P[0] > P[1]:
        cand.append(0)
    if P[-1] > P[-2]:
        cand.append(len(P) - 1)
    cand.sort(key=lambda i: -P[i])
    picked = []
    for i in cand:
        if all(abs(i - j) >= min_sep for j in picked):
            picked.append(i)
        if len(picked) == n:
            break
    return picked


def music_1d(Rss, n_sources: int, grid: int = GRID_POINTS,
             min_sep: int = MIN_PEAK_SEPARATION) -> MusicResult:
    """1-D MUSIC over ``u in [-1, 1]`` for a ULA of unit spacing.

    The null spectrum is ``L - ||E_s^H a(u)||^2``; each peak is refined by a
    three-point parabola on it.
    """
    Rss = np.asarray(Rss)
    Es = _signal_subspace(Rss, n_sources)
    L = Rss.shape[0]
    k = np.arange(L)

    def null(u):
        a = np.exp(1j * np.pi * np.multiply.outer(k, np.atleast_1d(u)))
        return np.maximum(L - np.sum(np.abs(Es.conj().T @ a) ** 2, axis=0), 1e-300)

    u = _grid(grid)
    d = null(u)
    P = 1.0 / d
    picked = _pick_peaks_1d(P, n_sources, min_sep)
    h = u[1] - u[0]
    est = []
    for i in picked:
        if 0 < i < grid - 1:
            off = _parabolic_offset(d[i - 1], d[i], d[i + 1])
        else:
            off = 0.0
        est.append(np.clip(u[i] + off * h, -1.0, 1.0))
    return MusicResult(np.array(est), P[picked], len(picked) < n_sources, h)


def _steer_1d(n, u):
    return np.exp(1j * np.pi * np.multiply.outer(np.arange(n), u))


def _music2d_null(Es, shape, uy, uz):
    # ||E_s^H (a_y kron a_z)||^2 evaluated separably on the uy x uz grid.
    ly, lz = shape
    Ay = _steer_1d(ly, uy)
    Az = _steer_1d(lz, uz)
    E = Es.conj().T.reshape(-1, ly, lz)
    proj = np.einsum("yi,kyz,zj->kij", Ay, E, Az, optimize=True)
    return np.maximum(ly * lz - np.sum(np.abs(proj) ** 2, axis=0), 1e-300)


def _pick_peaks_2d(P, n, min_sep):
    pad = np.pad(P, 1, constant_values=-np.inf)
    core = pad[1:-1, 1:-1]
    is_max = np.ones_like(P, bool)
    for dy in (-1, 0, 1):
        for dz in (-1, 0, 1):
            if dy or dz:
                nb = pad[1 + dy:pad.shape[0] - 1 + dy, 1 + dz:pad.shape[1] - 1 + dz]
                is_max &= core >= nb
    cand = np.argwhere(is_max)
    cand = cand[np.argsort(-P[cand[:, 0], cand[:, 1]], kind="stable")]
    picked = []
    for c in cand:
        if all(max(abs(c[0] - q[0]), abs(c[1] - q[1])) >= min_sep for q in picked):
            picked.append(tuple(c))
        if len(picked) == n:
            break
    return picked


def music_2d(Rss, n_sources: int, shape, grid: int = GRID_POINTS,
             coarse: int = COARSE_POINTS_2D, min_sep: int = MIN_PEAK_SEPARATION) -> MusicResult:
    """2-D MUSIC for a ``Ly x Lz`` rectangular (virtual) URA.

    Peaks are located on a ``coarse x coarse`` grid, re-searched on a local
    patch at the ``grid``-point spacing and then refined by a parabola along
    each axis.
    """
    Rss = np.asarray(Rss)
    ly, lz = shape
    if Rss.shape != (ly * lz, ly * lz):
        raise ValueError("Rss does not match the rectangle shape")
    Es = _signal_subspace(Rss, n_sources)
    uc = _grid(coarse)
    P = 1.0 / _music2d_null(Es, shape, uc, uc)
    picked = _pick_peaks_2d(P, n_sources, min_sep)
    hc = uc[1] - uc[0]
    h = 2.0 / (grid - 1)
    half = int(np.ceil(1.5 * hc / h))
    offs = np.arange(-half, half + 1) * h
    est, vals = [], []
    for iy, iz in picked:
        fy = np.clip(uc[iy] + offs, -1, 1)
        fz = np.clip(uc[iz] + offs, -1, 1)
        d = _music2d_null(Es, shape, fy, fz)
        jy, jz = np.unravel_index(np.argmin(d), d.shape)
        uy, uz = fy[jy], fz[jz]
        if 0 < jy < len(fy) - 1:
            uy += _parabolic_offset(d[jy - 1, jz], d[jy, jz], d[jy + 1, jz]) * h
        if 0 < jz < len(fz) - 1:
            uz += _parabolic_offset(d[jy, jz - 1], d[jy, jz], d[jy, jz + 1]) * h
        est.append((np.clip(uy, -1, 1), np.clip(uz, -1, 1)))
        vals.append(1.0 / d[jy, jz])
    u = np.array(est, float).reshape(-1, 2)
    return MusicResult(u, np.array(vals), len(picked) < n_sources, h)


def estimate_rs(u_hats, v: VirtualSignal) -> np.ndarray:
    """Source powers from a linear virtual signal by pseudoinverse.

    The lag-0 entry, which carries the noise power, is dropped first.
    Estimates are projected onto the nonnegative reals.
    """
    u = np.atleast_1d(np.asarray(u_hats, float))
    lags = np.asarray(v.lags)
    keep = lags != 0
    B = np.exp(1j * np.pi * np.multiply.outer(lags[keep], u))
    if len(np.unique(np.round(u, 12))) < len(u) or np.linalg.cond(B) > COND_LIMIT:
        raise SingularManifoldError("coincident angle estimates")
    r = np.linalg.pinv(B) @ np.asarray(v.values)[keep]
    return np.maximum(r.real, 0.0)


def pairing_cost(perm, Ay, Az, r, R_yz) -> float:
    """``||R_yz - Ay[:, perm] diag(r) Az^H||_F``."""
    model = (Ay[:, list(perm)] * r) @ Az.conj().T
    return float(np.linalg.norm(R_yz - model))


def pair_angles_lna(u_z, u_y, r_s, R_yz, pos_y, pos_z, chunk: int = 40320) -> tuple:
    """Exhaustive permutation search matching y-axis estimates to z-axis ones.

    Returns ``perm`` such that ``u_y[perm[i]]`` belongs with ``u_z[i]``.
    Ties resolve to the lexicographically first permutation.
    """
    n = len(u_z)
    if n > MAX_PAIRING_SOURCES:
        raise UnsupportedSizeError(f"pairing supports at most {MAX_PAIRING_SOURCES} sources")
    if n <= 1:
        return tuple(range(n))
    Ay = np.exp(1j * np.pi * np.multiply.outer(np.asarray(pos_y), np.asarray(u_y)))
    Az = np.exp(1j * np.pi * np.multiply.outer(np.asarray(pos_z), np.asarray(u_z)))
    r = np.asarray(r_s, float)
    # Expanded Frobenius norm: ||R||^2 - 2 Re sum_i r_i C[p_i, i] + sum_ij r_i r_j Gy[p_i, p_j] Gz[j, i].
    C = Ay.conj().T @ R_yz @ Az
    Gy = Ay.conj().T @ Ay
    Gz = Az.conj().T @ Az
    rr = np.outer(r, r) * Gz.T
    base = np.linalg.norm(R_yz) ** 2
    ar = np.arange(n)
    costs = []
    it = itertools.permutations(range(n))
    while True:
        block = np.array(list(itertools.islice(it, chunk)), dtype=np.int64)
        if not len(block):
            break
        lin = np.sum(r * C[block, ar].real, axis=1)
        quad = np.sum(Gy[block[:, :, None], block[:, None, :]] * rr, axis=(1, 2)).real
        costs.append(base - 2 * lin + quad)
    costs = np.concatenate(costs)
    best = costs.min()
    tol = 1e-9 * max(abs(best), base, 1e-300)
    idx = int(np.flatnonzero(costs <= best + tol)[0])
    return next(itertools.islice(itertools.permutations(range(n)), idx, None))


def azimuth_from_varphi(theta_hat, varphi_hat):
    """Azimuth from elevation and the y-axis angle, ``sin(phi) = cos(varphi)/cos(theta)``."""
    c = np.cos(np.asarray(theta_hat, float))
    if np.any(c <= 0):
        raise ValueError("cos(theta) must be positive")
    return np.arcsin(np.clip(np.cos(varphi_hat) / c, -1.0, 1.0))


@dataclass
class DoaEstimate:
    """Estimated directions of the K+1 sources (radians).

    The order of ``thetas``/``phis`` is the estimator's own; it carries no
    PT/BD identity until :meth:`aligned_to` matches it to a reference.
    """

    thetas: np.ndarray
    phis: np.ndarray
    pairing: tuple | None = None
    spectrum_meta: dict = field(default_factory=dict)
    degraded: bool = False

    @property
    def n_sources(self) -> int:
        return len(self.thetas)

    @property
    def pt(self):
        return float(self.thetas[0]), float(self.phis[0])

    @property
    def bds(self):
        return [(float(t), float(p)) for t, p in zip(self.thetas[1:], self.phis[1:])]

    def direction_cosines(self):
        return np.cos(self.thetas) * np.sin(self.phis), np.sin(self.thetas)

    def aligned_to(self, thetas, phis) -> "DoaEstimate":
        """Reorder (and pad if short) to best match reference directions.

        Matching minimizes the total squared angle error via the Hungarian
        algorithm.  Missing estimates are filled with the worst-matched
        reference direction offset, keeping the count at ``len(thetas)``.
        """
        thetas = np.asarray(thetas, float)
        phis = np.asarray(phis, float)
        n = len(thetas)
        cost = ((thetas[:, None] - self.thetas[None, :]) ** 2
                + (phis[:, None] - self.phis[None, :]) ** 2)
        rows, cols = linear_sum_assignment(cost)
        t = np.full(n, np.nan)
        p = np.full(n, np.nan)
        t[rows] = self.thetas[cols]
        p[rows] = self.phis[cols]
        if np.isnan(t).any():
            # An unmatched source gets the nearest estimate (duplicated).
            for i in np.flatnonzero(np.isnan(t)):
                j = int(np.argmin(cost[i]))
                t[i], p[i] = self.thetas[j], self.phis[j]
        return DoaEstimate(t, p, self.pairing, dict(self.spectrum_meta), self.degraded)


def _angles_from_u(uy, uz):
    theta = np.arcsin(np.clip(uz, -1 + 1e-12, 1 - 1e-12))
    phi = np.arcsin(np.clip(uy / np.cos(theta), -1.0, 1.0))
    return theta, phi


def _blocks_list(blocks):
    if isinstance(blocks, SnapshotBlock):
        return [blocks]
    return list(blocks)


def sense_lna(g: ArrayGeometry, blocks, n_sources: int, grid: int = GRID_POINTS) -> DoaEstimate:
    """LNA pipeline: per-axis co-array MUSIC, power estimate, pairing, azimuth."""
    iy = g.axis_indices("y")
    iz = g.axis_indices("z")
    Y = pooled_samples(_blocks_list(blocks))
    Yy, Yz = Y[iy], Y[iz]
    N = Y.shape[1]
    Ry = sample_covariance(SnapshotBlock(Yy, "pooled"))
    Rz = sample_covariance(SnapshotBlock(Yz, "pooled"))
    R_yz = Yy @ Yz.conj().T / N
    vy = vectorize_1d(Ry, g.y[iy])
    vz = vectorize_1d(Rz, g.z[iz])
    mz = music_1d(spatial_smoothing_1d(vz), n_sources, grid)
    my = music_1d(spatial_smoothing_1d(vy), n_sources, grid)
    degraded = mz.degraded or my.degraded
    uz, uy = mz.u, my.u
    n = min(len(uz), len(uy))
    uz, uy = uz[:n], uy[:n]
    try:
        r = estimate_rs(uz, vz)
    except SingularManifoldError:
        r = np.ones(n)
        degraded = True
    perm = pair_angles_lna(uz, uy, r, R_yz, g.y[iy], g.z[iz])
    theta = np.arcsin(uz)
    varphi = np.arccos(uy[list(perm)])
    phi = azimuth_from_varphi(theta, varphi)
    meta = {"grid": grid, "grid_step": mz.grid_step, "peaks_z": mz.peak_values.tolist(),
            "peaks_y": my.peak_values.tolist(), "r_s": r.tolist()}
    return DoaEstimate(theta, phi, tuple(int(p) for p in perm), meta, degraded)


def sense_pna(g: ArrayGeometry, blocks, n_sources: int, grid: int = GRID_POINTS) -> DoaEstimate:
    """PNA pipeline: planar co-array, 2-D smoothing, 2-D MUSIC (inherently paired)."""
    R = sample_covariance(_blocks_list(blocks))
    Rss, shape = spatial_smoothing_2d(vectorize_2d(R, g))
    res = music_2d(Rss, n_sources, shape, grid)
    theta, phi = _angles_from_u(res.u[:, 0], res.u[:, 1])
    meta = {"grid": grid, "grid_step": res.grid_step, "smoothing_shape": list(shape),
            "peaks": res.peak_values.tolist()}
    return DoaEstimate(theta, phi, None, meta, res.degraded)


def sense_upa(g: ArrayGeometry, blocks, n_sources: int, grid: int = GRID_POINTS) -> DoaEstimate:
    """UPA baseline: 2-D MUSIC directly on the physical covariance."""
    myu, mzu = g.params
    R = sample_covariance(_blocks_list(blocks))
    res = music_2d(R, n_sources, (myu, mzu), grid)
    theta, phi = _angles_from_u(res.u[:, 0], res.u[:, 1])
    meta = {"grid": grid, "grid_step": res.grid_step, "peaks": res.peak_values.tolist()}
    return DoaEstimate(theta, phi, None, meta, res.degraded)


def sense(g: ArrayGeometry, blocks, n_sources: int, grid: int = GRID_POINTS) -> DoaEstimate:
    """Dispatch to the pipeline matching the array kind."""
    fn = {"LNA": sense_lna, "PNA": sense_pna, "UPA": sense_upa}.get(g.kind)
    if fn is None:
        raise ValueError(f"no sensing pipeline for {g.kind}")
    return fn(g, blocks, n_sources, grid)
