"""One trial end to end: sense directions, estimate gains, evaluate rates.

    python3 demos/02_one_trial.py [seed]

The same random scenario (one PT and three BDs) is observed by each of the
three M=32 arrays.  For every array we print the angle errors after co-array
MUSIC, the error of the LS gain estimate and of the summed channel,
and the BD sum rate with estimated versus perfect CSI.
"""

import sys

import numpy as np

from sparse_isac.channel import generate_block, synthesize_channels, trial_rng
from sparse_isac.doa import sense
from sparse_isac.gains import assemble_channels, estimate_gains, estimated_manifold, mse_theoretical
from sparse_isac.rates import rates_with_estimated_csi, sum_rate_bd
from sparse_isac.sim import ExperimentConfig, sample_scenario

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
base = ExperimentConfig(seed=seed, min_sep_deg=3.0)
sc = sample_scenario(base, 0)
print("true elevations (deg):", np.round(np.degrees(sc.thetas), 2))
print("true azimuths   (deg):", np.round(np.degrees(sc.phis), 2))
print(f"pilot length {sc.tau}, {sc.n_snapshots} data snapshots, "
      f"P_t = P_d = {10 * np.log10(sc.p_t):.0f} dB")

for kind in ("LNA", "PNA", "UPA"):
    cfg = base.replace(kind=kind)
    g = cfg.geometry()
    rng = trial_rng(seed, 0, 1)
    pilot = generate_block(g, sc, "pilot", rng)
    data = generate_block(g, sc, "data", rng)

    est = sense(g, [pilot, data], sc.K + 1).aligned_to(sc.thetas, sc.phis)
    err = np.degrees(np.r_[est.thetas - sc.thetas, est.phis - sc.phis])

    gamma_hat = estimate_gains(g, est, pilot, sc.p_t)
    h_pt, C = synthesize_channels(g, sc)
    perfect = sum_rate_bd(C, sc.p_d, sc.sigma2, h_pt)
    estimated = rates_with_estimated_csi(h_pt, C, assemble_channels(est, gamma_hat, g),
                                         sc.p_d, sc.sigma2)

    print(f"\n{kind} {g.params}")
    print(f"  angle RMSE {np.sqrt(np.mean(err ** 2)):.3f} deg (worst {np.abs(err).max():.3f})")
    h_err = estimated_manifold(g, est) @ gamma_hat - (h_pt + C.sum(axis=1))
    print(f"  |gamma_hat - gamma|^2 = {np.sum(np.abs(gamma_hat - sc.gains) ** 2):.3g}, "
          f"|h_sum error|^2 = {np.vdot(h_err, h_err).real:.3g} "
          f"(perfect-angle mean {mse_theoretical(sc.K, 1.0, sc.tau, sc.p_t):.3g})")
    print(f"  R_BD perfect {perfect.r_bd_sum:.3f}, estimated {estimated.r_bd_sum:.3f} bit/s/Hz")
