"""Path-gain estimation with a matched beamformer and a short pilot."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import SnapshotBlock, cscg, steering_vector
from .geometry import ArrayGeometry

COND_LIMIT = 1e10


class CoincidentAnglesError(ValueError):
    """The estimated steering vectors are (numerically) linearly dependent."""


@dataclass
class GainEstimate:
    """Estimated gains and the channels assembled from them.

    Attributes:
        gamma_hat: ``[gamma_pt, alpha_1 beta_1, ...]`` estimates, PT first.
        h_pt_hat: Direct-link channel estimate (length M).
        cascaded_hat: ``M x K`` cascaded BD channel estimates.
    """

    gamma_hat: np.ndarray
    h_pt_hat: np.ndarray
    cascaded_hat: np.ndarray

    @property
    def h_sum(self) -> np.ndarray:
        return self.h_pt_hat + self.cascaded_hat.sum(axis=1)


def _directions(doa):
    if hasattr(doa, "thetas"):
        return np.asarray(doa.thetas, float), np.asarray(doa.phis, float)
    thetas, phis = doa
    return np.atleast_1d(np.asarray(thetas, float)), np.atleast_1d(np.asarray(phis, float))


def estimated_manifold(g: ArrayGeometry, doa) -> np.ndarray:
    """``A(theta_hat, phi_hat)``; ``doa`` is a DoaEstimate or ``(thetas, phis)``."""
    return steering_vector(g, *_directions(doa))


def matched_beamformer(g: ArrayGeometry, doa) -> np.ndarray:
    """``W = A^H / sqrt(M)``, one unit-norm row per source."""
    return estimated_manifold(g, doa).conj().T / np.sqrt(g.M)


def project_pilots(block: SnapshotBlock, W) -> np.ndarray:
    """``y' = (1/tau) sum_i W y(i) psi*(i)``."""
    if block.pilot_symbols is None:
        raise ValueError("block carries no pilot symbols")
    psi = np.asarray(block.pilot_symbols)
    return W @ (block.samples @ psi.conj()) / len(psi)


def ls_gains(W_A_hat, y_prime, p_t: float, M: int) -> np.ndarray:
    """Least-squares gains ``sqrt(M)/sqrt(P_t) (A^H A)^{-1} y'``.

    Args:
        W_A_hat: The Gram matrix ``A^H A`` of the estimated manifold.  (With
            ``W = A^H/sqrt(M)`` this is ``sqrt(M) W A``.)
    """
    G = np.asarray(W_A_hat)
    if np.linalg.cond(G) > COND_LIMIT:
        raise CoincidentAnglesError("estimated directions are coincident")
    return np.sqrt(M / p_t) * np.linalg.solve(G, np.asarray(y_prime))


def estimate_gains(g: ArrayGeometry, doa, pilot_block: SnapshotBlock, p_t: float) -> np.ndarray:
    """Beamform, project the pilots and solve for the gains in one call."""
    A = estimated_manifold(g, doa)
    W = A.conj().T / np.sqrt(g.M)
    return ls_gains(A.conj().T @ A, project_pilots(pilot_block, W), p_t, g.M)


def mse_theoretical(K: int, sigma2: float, tau: int, p_t: float) -> float:
    """Channel MSE of the proposed scheme with perfect angles."""
    return (K + 1) * sigma2 / (tau * p_t)


def mse_traditional(M: int, sigma2: float, tau: int, p_t: float) -> float:
    """Channel MSE of conventional per-antenna LS training."""
    return M * sigma2 / (tau * p_t)


def assemble_channels(doa, gamma_hat, g: ArrayGeometry) -> GainEstimate:
    """Channels as estimated gain times steering vector at the estimated angle."""
    A = estimated_manifold(g, doa)
    H = A * np.asarray(gamma_hat)
    return GainEstimate(np.asarray(gamma_hat), H[:, 0], H[:, 1:])


def traditional_ls_sim(h_sum: np.ndarray, sigma2: float, tau: int, p_t: float, rng) -> np.ndarray:
    """Per-antenna LS estimate of ``h_sum`` from ``tau`` unit pilots.

    Stands in for conventional training where every antenna coefficient is
    an unknown; its MSE is ``M sigma2 / (tau P_t)``.
    """
    M = len(h_sum)
    noise = cscg(rng, (M, tau), sigma2)
    y = np.sqrt(p_t) * h_sum[:, None] + noise
    return y.mean(axis=1) / np.sqrt(p_t)
