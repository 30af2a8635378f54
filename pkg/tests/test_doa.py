import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparse_isac.channel import Scenario, cscg, generate_block, make_rng, manifold_matrix
from sparse_isac.doa import (
    NonContiguousError,
    SingularManifoldError,
    UnsupportedSizeError,
    VirtualSignal,
    azimuth_from_varphi,
    estimate_rs,
    music_1d,
    music_2d,
    pair_angles_lna,
    pairing_cost,
    sense,
    sense_lna,
    sense_pna,
    spatial_smoothing_1d,
    spatial_smoothing_2d,
    vectorize_covariance,
)
from sparse_isac.geometry import build_lna, build_nested_1d, build_pna, build_upa, nested_positions

NA44 = np.array(nested_positions(4, 4))


def ula_cov(positions, u, p, sigma2=0.0):
    A = np.exp(1j * np.pi * np.multiply.outer(np.asarray(positions), np.atleast_1d(u)))
    return (A * np.asarray(p, float)) @ A.conj().T + sigma2 * np.eye(len(positions))


def planar_cov(g, uy, uz, p, sigma2=0.0):
    uy, uz = np.atleast_1d(uy), np.atleast_1d(uz)
    A = np.exp(1j * np.pi * (np.multiply.outer(g.y, uy) + np.multiply.outer(g.z, uz)))
    return (A * np.asarray(p, float)) @ A.conj().T + sigma2 * np.eye(g.M)


class TestVectorize:
    def test_two_element_identity(self):
        v = vectorize_covariance(np.eye(2), np.array([0, 1]))
        assert v.lags.tolist() == [-1, 0, 1]
        assert np.allclose(v.values, [0, 1, 0])

    def test_nested_single_source(self):
        s = np.sin(0.2)
        R = ula_cov(NA44, s, [2.5])
        v = vectorize_covariance(R, build_nested_1d(4, 4))
        assert v.lags.tolist() == list(range(-19, 20))
        assert np.allclose(v.values, 2.5 * np.exp(1j * np.pi * v.lags * s), atol=1e-12)

    def test_noise_only_at_origin(self):
        u, p = [0.1, -0.4], [1.0, 3.0]
        v0 = vectorize_covariance(ula_cov(NA44, u, p), NA44)
        v1 = vectorize_covariance(ula_cov(NA44, u, p, sigma2=0.7), NA44)
        diff = v1.values - v0.values
        assert diff[19] == pytest.approx(0.7) and np.allclose(np.delete(diff, 19), 0, atol=1e-12)

    def test_planar_rectangle(self):
        g = build_pna(1, 3, 1, 3)
        uy, uz, p = np.array([0.1, -0.3]), np.array([0.2, 0.05]), [1.0, 2.0]
        v = vectorize_covariance(planar_cov(g, uy, uz, p, 0.5), g)
        expect = (np.exp(1j * np.pi * (np.multiply.outer(v.lags[:, 0], uy)
                                       + np.multiply.outer(v.lags[:, 1], uz))) @ p)
        expect = expect + 0.5 * np.all(v.lags == 0, axis=1)
        assert np.allclose(v.values, expect, atol=1e-12)
        assert v.is_2d and v.value_at((0, 0)) == pytest.approx(3.5)

    def test_rejects_non_hermitian(self):
        with pytest.raises(ValueError):
            vectorize_covariance(np.array([[1, 1], [0, 1]], complex), np.array([0, 1]))

    def test_value_at_missing(self):
        with pytest.raises(KeyError):
            VirtualSignal(np.arange(-1, 2), np.zeros(3)).value_at(5)


class TestSmoothing:
    def test_dimension(self):
        v = vectorize_covariance(ula_cov(NA44, 0.3, [1.0]), NA44)
        assert spatial_smoothing_1d(v).shape == (20, 20)

    def test_single_source_rank_one(self):
        v = vectorize_covariance(ula_cov(NA44, 0.3, [1.0]), NA44)
        ev = np.linalg.eigvalsh(spatial_smoothing_1d(v))
        assert ev[-2] / ev[-1] < 1e-8

    def test_five_sources(self):
        u = [-0.6, -0.25, 0.05, 0.4, 0.8]
        v = vectorize_covariance(ula_cov(NA44, u, [1, 2, 1, 3, 1.5]), NA44)
        ev = np.linalg.eigvalsh(spatial_smoothing_1d(v))[::-1]
        assert ev[4] > 1e-3 * ev[0] and ev[5] < 1e-10 * ev[0]

    def test_matches_explicit_subvectors(self):
        rng = make_rng(3)
        L = 4
        v = VirtualSignal(np.arange(-(L - 1), L), cscg(rng, 2 * L - 1))
        z = [v.values[i:i + L] for i in range(L)]
        R = sum(np.outer(zi, zi.conj()) for zi in z) / L
        assert np.allclose(spatial_smoothing_1d(v), R)

    def test_non_contiguous(self):
        with pytest.raises(NonContiguousError):
            spatial_smoothing_1d(VirtualSignal(np.array([-2, 0, 2]), np.ones(3)))

    def test_2d_counts_and_rank(self):
        g = build_pna(1, 3, 1, 3)
        v = vectorize_covariance(planar_cov(g, 0.2, -0.1, [1.0]), g)
        R, (ly, lz) = spatial_smoothing_2d(v)
        ny = len(np.unique(v.lags[:, 0]))
        nz = len(np.unique(v.lags[:, 1]))
        assert (ny, nz) == (2 * ly - 1, 2 * lz - 1) and R.shape == (ly * lz, ly * lz)
        ev = np.linalg.eigvalsh(R)
        assert ev[-2] / ev[-1] < 1e-8

    def test_2d_zero(self):
        g = build_pna(1, 3, 1, 3)
        v = vectorize_covariance(np.zeros((g.M, g.M)), g)
        assert not np.any(spatial_smoothing_2d(v)[0])

    def test_2d_non_rectangular(self):
        lags = np.array([[0, 0], [1, 0], [0, 1]])
        with pytest.raises(NonContiguousError):
            spatial_smoothing_2d(VirtualSignal(lags, np.ones(3)))

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 1000))
    def test_psd(self, seed):
        rng = make_rng(seed)
        Y = cscg(rng, (len(NA44), 30))
        v = vectorize_covariance(Y @ Y.conj().T / 30, NA44)
        R = spatial_smoothing_1d(v)
        assert np.allclose(R, R.conj().T)


class TestMusic:
    def test_single_source_noiseless(self):
        v = vectorize_covariance(ula_cov(NA44, 0.3, [1.0]), NA44)
        res = music_1d(spatial_smoothing_1d(v), 1)
        assert abs(np.arcsin(res.u[0]) - np.arcsin(0.3)) < 1e-4 and not res.degraded

    def test_noiseless_within_grid_step(self):
        u = np.array([-0.52, 0.013, 0.377])
        v = vectorize_covariance(ula_cov(NA44, u, [1, 1, 2]), NA44)
        res = music_1d(spatial_smoothing_1d(v), 3)
        assert np.abs(np.sort(res.u) - u).max() < res.grid_step

    def test_two_sources_monte_carlo(self):
        # 20 dB per source, N = 2000: both within 0.5 degrees in >= 95% of seeds.
        u = np.array([-0.2, 0.2])
        A = np.exp(1j * np.pi * np.multiply.outer(NA44, u))
        ok = 0
        for seed in range(40):
            rng = make_rng(seed)
            Y = A @ (10 * cscg(rng, (2, 2000))) + cscg(rng, (8, 2000))
            v = vectorize_covariance(Y @ Y.conj().T / 2000, NA44)
            est = np.sort(music_1d(spatial_smoothing_1d(v), 2).u)
            ok += np.degrees(np.abs(np.arcsin(est) - np.arcsin(u))).max() < 0.5
        assert ok >= 38

    def test_no_noise_subspace(self):
        with pytest.raises(ValueError):
            music_1d(np.eye(4), 4)

    def test_degraded_flag(self):
        v = vectorize_covariance(ula_cov(NA44, [0.3, 0.5], [1.0, 1.0]), NA44)
        res = music_1d(spatial_smoothing_1d(v), 2, grid=5, min_sep=10)
        assert res.degraded and len(res.u) < 2

    def test_2d_single_source(self):
        g = build_pna(1, 3, 1, 3)
        v = vectorize_covariance(planar_cov(g, 0.21, -0.13, [1.0]), g)
        R, shape = spatial_smoothing_2d(v)
        res = music_2d(R, 1, shape)
        assert np.allclose(res.u[0], [0.21, -0.13], atol=res.grid_step)

    def test_2d_same_elevation(self):
        g = build_pna(1, 6, 2, 3)
        uy = np.array([-0.15, 0.15])
        uz = np.array([0.1, 0.1])
        v = vectorize_covariance(planar_cov(g, uy, uz, [1.0, 1.0], 0.01), g)
        R, shape = spatial_smoothing_2d(v)
        res = music_2d(R, 2, shape)
        got = res.u[np.argsort(res.u[:, 0])]
        assert np.allclose(got, np.c_[uy, uz], atol=1e-3)


class TestPowers:
    def test_single(self):
        v = vectorize_covariance(ula_cov(NA44, 0.4, [3.0], 1.0), NA44)
        assert estimate_rs([0.4], v) == pytest.approx([3.0])

    def test_three(self):
        u, p = [-0.5, 0.1, 0.6], [1.0, 0.2, 4.0]
        v = vectorize_covariance(ula_cov(NA44, u, p, 2.0), NA44)
        assert np.allclose(estimate_rs(u, v), p)

    def test_coincident(self):
        v = vectorize_covariance(ula_cov(NA44, 0.1, [1.0]), NA44)
        with pytest.raises(SingularManifoldError):
            estimate_rs([0.1, 0.1], v)

    def test_clamped(self):
        v = VirtualSignal(np.arange(-2, 3), -np.ones(5, complex))
        assert estimate_rs([0.0], v)[0] == 0.0


class TestPairing:
    py = np.array(nested_positions(3, 3))
    pz = np.array([p for p in nested_positions(3, 3)])

    def cross(self, uy, uz, r):
        Ay = np.exp(1j * np.pi * np.multiply.outer(self.py, uy))
        Az = np.exp(1j * np.pi * np.multiply.outer(self.pz, uz))
        return (Ay * r) @ Az.conj().T

    def test_swap(self):
        uz, uy, r = np.array([0.1, -0.3]), np.array([0.2, 0.5]), np.array([1.0, 2.0])
        R = self.cross(uy[::-1], uz, r)  # true pairing is uy[1]<->uz[0]
        assert pair_angles_lna(uz, uy, r, R, self.py, self.pz) == (1, 0)

    def test_single(self):
        assert pair_angles_lna([0.1], [0.2], [1.0], np.zeros((7, 7)), self.py, self.pz) == (0,)

    def test_tie_lexicographic(self):
        uz, uy, r = np.array([0.1, -0.3]), np.array([0.2, 0.2]), np.array([1.0, 1.0])
        R = self.cross(uy, uz, r)
        assert pair_angles_lna(uz, uy, r, R, self.py, self.pz) == (0, 1)

    def test_too_many(self):
        n = 10
        with pytest.raises(UnsupportedSizeError):
            pair_angles_lna(np.zeros(n), np.zeros(n), np.ones(n), None, self.py, self.pz)

    @pytest.mark.parametrize("n", [3, 4, 5, 6])
    def test_optimal_against_enumeration(self, n):
        rng = make_rng(n)
        uz, uy = rng.uniform(-0.8, 0.8, (2, n))
        r = rng.uniform(0.2, 2.0, n)
        R = self.cross(uy[rng.permutation(n)], uz, r) + 0.3 * cscg(rng, (6, 6))
        Ay = np.exp(1j * np.pi * np.multiply.outer(self.py, uy))
        Az = np.exp(1j * np.pi * np.multiply.outer(self.pz, uz))
        perm = pair_angles_lna(uz, uy, r, R, self.py, self.pz)
        best = min(pairing_cost(p, Ay, Az, r, R) for p in itertools.permutations(range(n)))
        assert pairing_cost(perm, Ay, Az, r, R) <= best + 1e-9


class TestAzimuth:
    def test_zero_elevation(self):
        assert np.degrees(azimuth_from_varphi(0.0, np.radians(30))) == pytest.approx(60)
        assert azimuth_from_varphi(0.0, np.pi / 2) == pytest.approx(0.0, abs=1e-15)

    def test_clamp(self):
        # cos(varphi)/cos(theta) = 1.02
        th = np.arccos(0.5)
        assert azimuth_from_varphi(th, np.arccos(0.51)) == pytest.approx(np.pi / 2)

    def test_inverse_of_geometry(self):
        th, ph = 0.15, -0.12
        vphi = np.arccos(np.cos(th) * np.sin(ph))
        assert azimuth_from_varphi(th, vphi) == pytest.approx(ph)


def scenario_k1(sigma2=0.0, n=400):
    return Scenario(np.radians([4.0, -6.0]), np.radians([-5.0, 7.0]), [1.0, 0.8j],
                    p_t=100, p_d=100, sigma2=sigma2, tau=4, n_snapshots=n)


class TestPipelines:
    @pytest.mark.parametrize("g", [build_lna(4, 4, 4, 5), build_pna(1, 6, 2, 3), build_upa(8, 4)])
    def test_noiseless_k1(self, g):
        sc = scenario_k1(sigma2=1e-8)
        blocks = [generate_block(g, sc, "data", 1)]
        est = sense(g, blocks, 2).aligned_to(sc.thetas, sc.phis)
        assert np.abs(est.thetas - sc.thetas).max() < 1e-3
        assert np.abs(est.phis - sc.phis).max() < 1e-3

    def test_deterministic(self):
        g = build_lna(4, 4, 4, 5)
        sc = scenario_k1(sigma2=1.0)
        blocks = [generate_block(g, sc, "pilot", 5), generate_block(g, sc, "data", 6)]
        a, b = sense_lna(g, blocks, 2), sense_lna(g, blocks, 2)
        assert np.array_equal(a.thetas, b.thetas) and a.pairing == b.pairing

    def test_pna_meta(self):
        g = build_pna(1, 6, 2, 3)
        est = sense_pna(g, generate_block(g, scenario_k1(1.0), "data", 0), 2)
        assert est.spectrum_meta["grid"] == 4096 and est.pairing is None

    def test_pooling_helps(self):
        # Pilot-only covariance (tau snapshots) vs pilot + data.
        g = build_lna(4, 4, 4, 5)
        err_p, err_b = [], []
        for seed in range(10):
            sc = Scenario(np.radians([3.0, -5.0]), np.radians([4.0, -6.0]), [1.0, 0.5],
                          p_t=10, p_d=10, tau=16, n_snapshots=1000)
            pilot = generate_block(g, sc, "pilot", 100 + seed,
                                   pilot_symbols=np.exp(2j * np.pi * make_rng(seed).random(16)))
            data = generate_block(g, sc, "data", 200 + seed)
            for blocks, acc in (([pilot], err_p), ([pilot, data], err_b)):
                e = sense_lna(g, blocks, 2).aligned_to(sc.thetas, sc.phis)
                acc.append(np.mean((e.thetas - sc.thetas) ** 2 + (e.phis - sc.phis) ** 2))
        assert np.mean(err_b) < np.mean(err_p)

    def test_unknown_kind(self):
        g = build_nested_1d(2, 2)
        with pytest.raises(ValueError):
            sense(g, [], 1)

    def test_aligned_pads_duplicates(self):
        from sparse_isac.doa import DoaEstimate
        e = DoaEstimate(np.array([0.1]), np.array([0.2])).aligned_to([0.1, 0.3], [0.2, 0.1])
        assert len(e.thetas) == 2 and not np.isnan(e.thetas).any()
