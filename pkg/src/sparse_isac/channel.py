"""LoS channel synthesis and snapshot generation for the PT + K BD uplink.

Stochastic draws all come from a ``numpy.random.Generator`` backed by
PCG64.  Within :func:`generate_block` the order is fixed: PT symbols, BD
symbols, then noise, so a block replays exactly from its seed.  Independent
trials derive their generator from
``SeedSequence(seed, spawn_key=(trial_index, stream))`` (see :func:`trial_rng`).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import ArrayGeometry

RNG_ALGORITHM = "PCG64"


def make_rng(seed) -> np.random.Generator:
    """A PCG64 generator from an int, a SeedSequence or an existing generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def trial_seed(seed: int, trial_index: int, stream: int = 0) -> np.random.SeedSequence:
    """Sub-seed for one trial: ``SeedSequence(seed, spawn_key=(trial_index, stream))``."""
    return np.random.SeedSequence(int(seed), spawn_key=(int(trial_index), int(stream)))


def trial_rng(seed: int, trial_index: int, stream: int = 0) -> np.random.Generator:
    return make_rng(trial_seed(seed, trial_index, stream))


def cscg(rng: np.random.Generator, shape, var: float = 1.0) -> np.ndarray:
    """Circularly symmetric complex Gaussian samples with the given variance."""
    z = rng.standard_normal((2,) + tuple(np.atleast_1d(shape)))
    return np.sqrt(var / 2.0) * (z[0] + 1j * z[1])


def varphi_from(theta, phi):
    """Incident angle w.r.t. the y axis: ``cos(varphi) = cos(theta) sin(phi)``."""
    return np.arccos(np.clip(np.cos(theta) * np.sin(phi), -1.0, 1.0))


def direction_cosines(theta, phi):
    """``(u_y, u_z) = (cos(theta) sin(phi), sin(theta))``."""
    theta = np.asarray(theta, float)
    phi = np.asarray(phi, float)
    return np.cos(theta) * np.sin(phi), np.sin(theta)


def steering_from_cosines(g: ArrayGeometry, uy, uz) -> np.ndarray:
    """Steering vectors for direction cosines; shape ``(M,)`` or ``(M, n)``."""
    uy = np.asarray(uy, float)
    uz = np.asarray(uz, float)
    ph = np.multiply.outer(g.y, uy) + np.multiply.outer(g.z, uz)
    return np.exp(1j * np.pi * ph)


def steering_vector(g: ArrayGeometry, theta, phi) -> np.ndarray:
    """Array response ``exp(j pi (cos(theta) sin(phi) y_m + sin(theta) z_m))``."""
    return steering_from_cosines(g, *direction_cosines(theta, phi))


@dataclass
class Scenario:
    """Ground truth for one realization: PT first, then the K BDs.

    ``gains`` holds ``[gamma_pt, alpha_1 beta_1, ..., alpha_K beta_K]``.
    Angles are radians; powers are linear.  Serialized powers are in dB
    relative to a unit noise power.
    """

    thetas: np.ndarray
    phis: np.ndarray
    gains: np.ndarray
    p_t: float = 100.0
    p_d: float = 100.0
    sigma2: float = 1.0
    tau: int = 8
    n_snapshots: int = 2000

    def __post_init__(self):
        self.thetas = np.atleast_1d(np.asarray(self.thetas, float))
        self.phis = np.atleast_1d(np.asarray(self.phis, float))
        self.gains = np.atleast_1d(np.asarray(self.gains, complex))
        n = len(self.thetas)
        if n < 1 or len(self.phis) != n or len(self.gains) != n:
            raise ValueError("thetas, phis and gains must share a length of K+1 >= 1")
        if np.any(np.cos(self.thetas) <= 0):
            raise ValueError("elevations must lie in (-pi/2, pi/2)")
        if min(self.p_t, self.p_d) <= 0 or self.sigma2 < 0:
            raise ValueError("powers must be positive and the noise variance nonnegative")
        if self.tau < 1 or self.n_snapshots < 1:
            raise ValueError("tau and n_snapshots must be >= 1")

    @property
    def K(self) -> int:
        return len(self.thetas) - 1

    @property
    def gamma_pt(self) -> complex:
        return complex(self.gains[0])

    @property
    def cascade_gains(self) -> np.ndarray:
        return self.gains[1:]

    @property
    def varphis(self) -> np.ndarray:
        return varphi_from(self.thetas, self.phis)

    @property
    def source_powers(self) -> np.ndarray:
        """Diagonal of the data-phase source covariance, ``P_d |gains|^2``."""
        return self.p_d * np.abs(self.gains) ** 2

    def to_dict(self) -> dict:
        return {
            "theta_deg": np.degrees(self.thetas).tolist(),
            "phi_deg": np.degrees(self.phis).tolist(),
            "gains": [[float(c.real), float(c.imag)] for c in self.gains],
            "p_t_db": float(10 * np.log10(self.p_t)),
            "p_d_db": float(10 * np.log10(self.p_d)),
            "sigma2": float(self.sigma2),
            "tau": int(self.tau),
            "n_snapshots": int(self.n_snapshots),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        gains = np.array([complex(re, im) for re, im in d["gains"]])
        return cls(np.radians(d["theta_deg"]), np.radians(d["phi_deg"]), gains,
                   p_t=10 ** (d["p_t_db"] / 10), p_d=10 ** (d["p_d_db"] / 10),
                   sigma2=float(d.get("sigma2", 1.0)),
                   tau=int(d["tau"]), n_snapshots=int(d["n_snapshots"]))

    @classmethod
    def from_json(cls, s: str) -> "Scenario":
        return cls.from_dict(json.loads(s))


def manifold_matrix(g: ArrayGeometry, scenario: Scenario) -> np.ndarray:
    """``M x (K+1)`` matrix of steering vectors, PT column first."""
    return steering_vector(g, scenario.thetas, scenario.phis)


def synthesize_channels(g: ArrayGeometry, scenario: Scenario):
    """Direct PT channel and the ``M x K`` matrix of cascaded BD channels."""
    A = manifold_matrix(g, scenario)
    H = A * scenario.gains
    return H[:, 0], H[:, 1:]


@dataclass
class SnapshotBlock:
    samples: np.ndarray
    phase: str
    pilot_symbols: np.ndarray | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.samples.shape[1]

    def rows(self, idx) -> "SnapshotBlock":
        """The same block restricted to a subset of antennas."""
        return SnapshotBlock(self.samples[idx], self.phase, self.pilot_symbols)


def generate_block(g: ArrayGeometry, scenario: Scenario, phase: str, rng_seed,
                   pilot_symbols=None) -> SnapshotBlock:
    """Received samples for the pilot or data phase.

    Pilot phase (``tau`` samples): ``sqrt(P_t) A gains psi(n) + u(n)``, the BDs
    backscattering a constant 1 so every source carries ``psi(n)``.  Data
    phase (``n_snapshots`` samples): ``sqrt(P_d) A [s; c_1 s; ...; c_K s] * gains + u(n)``.
    """
    rng = make_rng(rng_seed)
    A = manifold_matrix(g, scenario)
    M, n_src = A.shape
    if phase == "pilot":
        n = scenario.tau
        psi = np.ones(n, complex) if pilot_symbols is None else np.asarray(pilot_symbols, complex)
        if psi.shape != (n,):
            raise ValueError(f"expected {n} pilot symbols, got shape {psi.shape}")
        if not np.isclose(np.sum(np.abs(psi) ** 2), n):
            raise ValueError("pilot symbols must satisfy sum |psi|^2 = tau")
        x = np.sqrt(scenario.p_t) * np.outer(scenario.gains, psi)
        noise = cscg(rng, (M, n), scenario.sigma2)
        return SnapshotBlock(A @ x + noise, "pilot", psi)
    if phase == "data":
        n = scenario.n_snapshots
        s = cscg(rng, n)
        c = cscg(rng, (n_src - 1, n))
        sym = np.vstack([s[None, :], c * s[None, :]])
        x = np.sqrt(scenario.p_d) * scenario.gains[:, None] * sym
        noise = cscg(rng, (M, n), scenario.sigma2)
        return SnapshotBlock(A @ x + noise, "data")
    raise ValueError(f"phase must be 'pilot' or 'data', got {phase!r}")


def pooled_samples(blocks) -> np.ndarray:
    if isinstance(blocks, SnapshotBlock):
        return blocks.samples
    return np.concatenate([b.samples for b in blocks], axis=1)


def sample_covariance(block) -> np.ndarray:
    """``(1/N) sum_n y(n) y(n)^H`` over one block or a pooled list of blocks."""
    Y = pooled_samples(block)
    R = Y @ Y.conj().T / Y.shape[1]
    return 0.5 * (R + R.conj().T)
