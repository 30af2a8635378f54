import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparse_isac.channel import (
    Scenario,
    SnapshotBlock,
    cscg,
    direction_cosines,
    generate_block,
    make_rng,
    manifold_matrix,
    sample_covariance,
    steering_vector,
    synthesize_channels,
    trial_rng,
    varphi_from,
)
from sparse_isac.geometry import build_lna, build_pna, build_upa


def three_source(p_t=100.0, p_d=100.0, sigma2=1.0, n=2000):
    return Scenario(np.radians([2.0, -5.0, 7.0]), np.radians([3.0, 9.0, -6.0]),
                    [0.8 + 0.3j, 0.2 - 0.25j, -0.3j], p_t=p_t, p_d=p_d,
                    sigma2=sigma2, tau=8, n_snapshots=n)


class TestSteering:
    def test_broadside_all_ones(self):
        g = build_pna(1, 3, 1, 3)
        assert np.array_equal(steering_vector(g, 0.0, 0.0), np.ones(g.M))

    def test_two_element_phase(self):
        a = steering_vector(build_upa(2, 1), np.pi / 6, np.pi / 2)
        assert np.allclose(a, [1, np.exp(1j * np.pi * np.cos(np.pi / 6))], atol=1e-15)

    def test_lna_concatenation(self):
        g = build_lna(2, 3, 3, 2)
        theta, phi = 0.3, -0.4
        a = steering_vector(g, theta, phi)
        vphi = varphi_from(theta, phi)
        iy, iz = g.axis_indices("y"), g.axis_indices("z")
        assert np.allclose(a[iy], np.exp(1j * np.pi * g.y[iy] * np.cos(vphi)))
        assert np.allclose(a[iz], np.exp(1j * np.pi * g.z[iz] * np.sin(theta)))

    def test_lna_axis_dependence(self):
        g = build_lna(3, 3, 3, 3)
        theta = 0.2
        uy = 0.3
        # two (theta, phi) with the same cos(theta) sin(phi) but different theta
        phi1 = np.arcsin(uy / np.cos(theta))
        theta2 = -0.45
        phi2 = np.arcsin(uy / np.cos(theta2))
        iy = g.axis_indices("y")
        a1, a2 = steering_vector(g, theta, phi1), steering_vector(g, theta2, phi2)
        assert np.allclose(a1[iy], a2[iy], atol=1e-14)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(-1.5, 1.5), st.floats(-3.1, 3.1))
    def test_unit_modulus(self, theta, phi):
        a = steering_vector(build_pna(1, 6, 2, 3), theta, phi)
        assert np.allclose(np.abs(a), 1.0, atol=1e-14)

    def test_direction_cosines(self):
        uy, uz = direction_cosines(0.5, 0.25)
        assert uy == pytest.approx(np.cos(0.5) * np.sin(0.25))
        assert uz == pytest.approx(np.sin(0.5))


class TestScenario:
    def test_manifold_shapes(self):
        g = build_upa(8, 4)
        sc = Scenario(np.zeros(4), np.linspace(-0.2, 0.2, 4), np.ones(4))
        A = manifold_matrix(g, sc)
        assert A.shape == (32, 4) and np.allclose(np.abs(A), 1)

    def test_single_column(self):
        g = build_upa(3, 3)
        sc = Scenario([0.1], [0.2], [1.0])
        assert np.allclose(manifold_matrix(g, sc)[:, 0], steering_vector(g, 0.1, 0.2))

    def test_coincident_columns(self):
        g = build_pna(1, 3, 1, 3)
        A = manifold_matrix(g, Scenario([0.1, 0.1], [0.2, 0.2], [1, 1]))
        assert np.array_equal(A[:, 0], A[:, 1])

    def test_channel_norms(self):
        g = build_lna(4, 4, 4, 4)
        sc = three_source()
        h_pt, C = synthesize_channels(g, sc)
        assert C.shape == (g.M, 2)
        assert np.allclose(np.sum(np.abs(C) ** 2, axis=0), np.abs(sc.gains[1:]) ** 2 * g.M)
        assert np.allclose(h_pt, sc.gains[0] * steering_vector(g, sc.thetas[0], sc.phis[0]))

    def test_zero_direct_gain(self):
        g = build_upa(2, 2)
        h_pt, _ = synthesize_channels(g, Scenario([0.0, 0.1], [0.0, 0.1], [0.0, 1.0]))
        assert not np.any(h_pt)

    def test_cascaded_energy_monte_carlo(self):
        g = build_upa(8, 4)
        rng = make_rng(7)
        gains = cscg(rng, 20000, 0.1)
        # |alpha beta|^2 M averaged over draws
        assert np.mean(np.abs(gains) ** 2) * g.M == pytest.approx(0.1 * g.M, rel=0.03)

    def test_json_roundtrip(self):
        sc = three_source(p_t=10 ** 1.3, p_d=5.0, sigma2=0.5)
        back = Scenario.from_json(sc.to_json())
        assert np.allclose(back.thetas, sc.thetas) and np.allclose(back.gains, sc.gains)
        assert back.p_t == pytest.approx(sc.p_t) and back.sigma2 == 0.5
        assert sc.to_dict()["p_d_db"] == pytest.approx(10 * np.log10(5.0))

    @pytest.mark.parametrize("kw", [dict(p_t=0.0), dict(sigma2=-1.0), dict(tau=0), dict(n_snapshots=0)])
    def test_validation(self, kw):
        with pytest.raises(ValueError):
            Scenario([0.0], [0.0], [1.0], **kw)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            Scenario([0.0, 0.1], [0.0], [1.0, 1.0])

    def test_varphi(self):
        sc = three_source()
        assert np.allclose(np.cos(sc.varphis), np.cos(sc.thetas) * np.sin(sc.phis))


class TestBlocks:
    def test_noiseless_single_pilot(self):
        g = build_pna(1, 3, 1, 3)
        sc = Scenario([0.2], [0.3], [0.6 - 0.1j], p_t=4.0, sigma2=0.0, tau=1)
        b = generate_block(g, sc, "pilot", 0)
        assert np.allclose(b.samples[:, 0], 2.0 * (0.6 - 0.1j) * steering_vector(g, 0.2, 0.3))

    def test_deterministic(self):
        g = build_lna(2, 3, 2, 3)
        sc = three_source()
        for phase in ("pilot", "data"):
            a = generate_block(g, sc, phase, 123).samples
            b = generate_block(g, sc, phase, 123).samples
            assert np.array_equal(a, b)
        assert not np.array_equal(generate_block(g, sc, "data", 1).samples,
                                  generate_block(g, sc, "data", 2).samples)

    def test_pilot_shapes(self):
        g = build_upa(4, 2)
        b = generate_block(g, three_source(), "pilot", 0)
        assert b.samples.shape == (8, 8) and b.phase == "pilot" and b.n == 8
        assert np.array_equal(b.pilot_symbols, np.ones(8))

    def test_custom_pilots_checked(self):
        g = build_upa(2, 2)
        with pytest.raises(ValueError):
            generate_block(g, three_source(), "pilot", 0, pilot_symbols=2 * np.ones(8))
        psi = np.exp(1j * np.arange(8))
        assert np.array_equal(generate_block(g, three_source(), "pilot", 0, psi).pilot_symbols, psi)

    def test_bad_phase(self):
        with pytest.raises(ValueError):
            generate_block(build_upa(2, 2), three_source(), "uplink", 0)

    def test_data_covariance_converges(self):
        g = build_pna(1, 3, 1, 3)
        sc = three_source(p_d=4.0, n=100_000)
        R = sample_covariance(generate_block(g, sc, "data", 9))
        A = manifold_matrix(g, sc)
        R_true = (A * sc.source_powers) @ A.conj().T + sc.sigma2 * np.eye(g.M)
        assert np.linalg.norm(R - R_true) / np.linalg.norm(R_true) < 0.01

    def test_noise_only_covariance(self):
        g = build_upa(3, 3)
        sc = Scenario([0.0], [0.0], [0.0], sigma2=2.0, n_snapshots=100_000)
        R = sample_covariance(generate_block(g, sc, "data", 4))
        assert np.abs(R - 2.0 * np.eye(9)).max() < 0.02 * 2.0 * 3  # ~3 sigma of entry noise

    def test_rows(self):
        b = SnapshotBlock(np.arange(12).reshape(3, 4).astype(complex), "data")
        assert b.rows([0, 2]).samples.shape == (2, 4)


class TestCovariance:
    def test_single_snapshot_rank_one(self):
        y = np.array([[1 + 1j], [2.0], [-1j]])
        R = sample_covariance(SnapshotBlock(y, "data"))
        assert np.allclose(R, y @ y.conj().T) and np.linalg.matrix_rank(R) == 1

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 30))
    def test_hermitian_psd(self, seed, n):
        Y = cscg(make_rng(seed), (6, n))
        R = sample_covariance(SnapshotBlock(Y, "data"))
        assert np.array_equal(R, R.conj().T)
        assert np.linalg.eigvalsh(R).min() >= -1e-10

    def test_pooled(self):
        rng = make_rng(0)
        b1 = SnapshotBlock(cscg(rng, (4, 5)), "pilot")
        b2 = SnapshotBlock(cscg(rng, (4, 7)), "data")
        Y = np.hstack([b1.samples, b2.samples])
        assert np.allclose(sample_covariance([b1, b2]), Y @ Y.conj().T / 12)


class TestSeeding:
    def test_trial_streams_independent(self):
        a = trial_rng(0, 3, 0).standard_normal(4)
        assert np.array_equal(a, trial_rng(0, 3, 0).standard_normal(4))
        assert not np.array_equal(a, trial_rng(0, 3, 1).standard_normal(4))
        assert not np.array_equal(a, trial_rng(0, 4, 0).standard_normal(4))

    def test_pcg64(self):
        assert isinstance(make_rng(1).bit_generator, np.random.PCG64)

    def test_cscg_variance(self):
        z = cscg(make_rng(2), 200_000, 0.5)
        assert np.mean(np.abs(z) ** 2) == pytest.approx(0.5, rel=0.01)
        assert abs(np.mean(z * z)) < 0.01  # circular
