"""Small Monte Carlo curves written as CSV.

    python3 demos/03_curves.py [n_trials] [out_dir]

Produces two files per array: the gain MSE versus transmit SNR and the BD
sum rate versus SNR.  With the default 100 trials the whole run takes about
a minute on one core; the acceptance suite uses 500.
"""

import pathlib
import sys

from sparse_isac.sim import ExperimentConfig, curve_csv, default_threads, run_mse_curve, run_rate_curve

n_trials = int(sys.argv[1]) if len(sys.argv) > 1 else 100
out = pathlib.Path(sys.argv[2] if len(sys.argv) > 2 else "demo_out")
out.mkdir(exist_ok=True)
threads = default_threads()

for kind in ("LNA", "PNA", "UPA"):
    cfg = ExperimentConfig(kind=kind, n_trials=n_trials)
    mse = run_mse_curve(cfg, ("p_db", [0, 10, 20, 30]), threads)
    (out / f"mse_{kind.lower()}.csv").write_text(curve_csv(mse, cfg, {"experiment": "mse"}))
    rate = run_rate_curve(cfg, ("p_db", [0, 10, 20, 30]), threads)
    (out / f"rate_{kind.lower()}.csv").write_text(curve_csv(rate, cfg, {"experiment": "rate"}))

    row = {p.value: p.mean for p in mse if p.metric == "mse_gamma"}
    print(kind, "MSE_gamma:", ", ".join(f"{v:g} dB {m:.3g}" for v, m in row.items()))
    perf = {p.value: p.mean for p in rate if p.metric == "r_bd_perfect"}
    est = {p.value: p.mean for p in rate if p.metric == "r_bd_estimated"}
    print(kind, "R_BD perfect/estimated:",
          ", ".join(f"{v:g} dB {perf[v]:.2f}/{est[v]:.2f}" for v in perf))

print("CSV files in", out.resolve())
