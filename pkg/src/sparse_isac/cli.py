"""Command-line interface: ``sparse-isac <subcommand> [flags]``.

Angles are given in degrees and powers in dB at this boundary.  Every output
embeds the command line and a hash of the resolved configuration, so
``--replay FILE`` can regenerate it byte for byte.

Exit codes: 0 success, 1 invalid arguments or configuration, 2 pipeline error.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import os
import sys

import numpy as np

from . import __version__
from .beampattern import pattern_closed, pattern_direct, verify_theorems
from .channel import RNG_ALGORITHM, generate_block, synthesize_channels, trial_rng
from .doa import sense
from .gains import assemble_channels, estimate_gains, mse_theoretical, mse_traditional
from .geometry import InvalidParameterError, build, difference_coarray
from .rates import rates_with_estimated_csi, sum_rate_bd
from .sim import (PRESETS_M32, SWEEP_VARIABLES, ExperimentConfig, curve_csv, default_threads,
                  run_mse_curve, run_rate_curve, sample_scenario)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
SEED_ENV = "SPARSE_ISAC_SEED"

_GEOM_FLAGS = {
    "UPA": ("myu", "mzu"),
    "NA1D": ("m1", "m2"),
    "LNA": ("my1", "my2", "mz1", "mz2"),
    "PNA": ("m1d", "m2d", "m1s", "m2s"),
}


class UsageError(Exception):
    pass


class PipelineError(Exception):
    pass


class _pipeline:
    """Context manager that tags any failure inside it as a pipeline error."""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, (UsageError, PipelineError)):
            raise PipelineError(f"{exc_type.__name__}: {exc}") from exc
        return False


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _add_geometry(p, kinds):
    p.add_argument("--kind", type=str.upper, choices=kinds, help="array family")
    flags = sorted({f for k in kinds for f in _GEOM_FLAGS[k]})
    for f in flags:
        p.add_argument(f"--{f}", type=int, default=None)
    if "NA1D" in kinds:
        p.add_argument("--axis", choices=("y", "z"), default="z", help="NA1D axis")


def _add_experiment(p):
    p.add_argument("--K", type=int, default=None, help="number of BDs")
    p.add_argument("--M", type=int, default=None, help="element count for presets")
    p.add_argument("--theta-max", type=float, default=None, help="elevation spread (deg)")
    p.add_argument("--varphi-max", type=float, default=None, help="y-axis angle spread (deg)")
    p.add_argument("--p-t-db", type=float, default=None, help="pilot SNR (dB)")
    p.add_argument("--p-d-db", type=float, default=None, help="data SNR (dB)")
    p.add_argument("--tau", type=int, default=None, help="pilot length (default 2(K+1))")
    p.add_argument("--n-snapshots", type=int, default=None)
    p.add_argument("--min-sep", type=float, default=None, help="minimum angle separation (deg)")
    p.add_argument("--grid", type=int, default=None, help="MUSIC grid points per dimension")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--out", default=None, help="output file (default: stdout)")
    common.add_argument("--seed", type=int, default=None,
                        help=f"RNG seed (fallback: ${SEED_ENV}, then 0)")
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: CPU count)")
    common.add_argument("--config", default=None, help="experiment config (JSON or TOML)")
    common.add_argument("--replay", default=None, help="rerun the command embedded in FILE")

    p = _Parser(prog="sparse-isac", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("coarray", parents=[common], help="difference co-array summary (JSON)")
    _add_geometry(s, ("UPA", "NA1D", "LNA", "PNA"))

    s = sub.add_parser("beampattern", parents=[common], help="pattern on a square grid (CSV)")
    _add_geometry(s, ("UPA", "LNA", "PNA"))
    s.add_argument("--grid", type=int, default=201, help="points per axis")
    s.add_argument("--extent", type=float, default=1.0, help="grid spans [-extent, extent]")
    s.add_argument("--closed", action="store_true", help="use the closed-form kernels")

    s = sub.add_parser("verify-theorems", parents=[common], help="main-lobe bound table (CSV)")
    s.add_argument("--sweep", choices=("small", "full"), default="small")

    for name, text in (("sense", "DoA estimates for one trial (JSON)"),
                       ("estimate", "gain estimates for one trial (JSON)"),
                       ("rates", "perfect/estimated CSI rates for one trial (JSON)")):
        s = sub.add_parser(name, parents=[common], help=text)
        _add_geometry(s, ("UPA", "LNA", "PNA"))
        _add_experiment(s)
        s.add_argument("--trial", type=int, default=0, help="trial index")
        if name == "estimate":
            s.add_argument("--oracle-doa", action="store_true", help="use the true angles")
        if name == "sense":
            s.add_argument("--spectrum", default=None, help="also write the MUSIC peaks CSV here")

    s = sub.add_parser("sweep", parents=[common], help="Monte Carlo curve (CSV)")
    _add_geometry(s, ("UPA", "LNA", "PNA"))
    _add_experiment(s)
    s.add_argument("--experiment", choices=("mse", "rate"), default="mse")
    s.add_argument("--variable", choices=SWEEP_VARIABLES, default=None)
    s.add_argument("--values", default=None, help="comma-separated sweep values")
    s.add_argument("--n-trials", type=int, default=None)
    s.add_argument("--oracle-doa", action="store_true")
    return p


def _geometry_params(args):
    kind = args.kind
    if kind is None:
        return None, None
    names = _GEOM_FLAGS[kind]
    vals = [getattr(args, n, None) for n in names]
    if all(v is None for v in vals):
        return kind, None
    if any(v is None for v in vals):
        missing = [n for n, v in zip(names, vals) if v is None]
        raise UsageError(f"--kind {kind.lower()} needs " + ", ".join("--" + m for m in missing))
    if kind == "NA1D":
        vals.append(args.axis)
    return kind, tuple(vals)


def _explicit_geometry(args):
    kind, params = _geometry_params(args)
    if kind is None:
        raise UsageError("--kind is required")
    if params is None:
        if kind not in PRESETS_M32:
            raise UsageError(f"--kind {kind.lower()} needs its size flags")
        params = PRESETS_M32[kind]
    return build(kind, *params)


def _resolve_seed(args, cfg_seed=None):
    if args.seed is not None:
        return args.seed
    if cfg_seed is not None:
        return cfg_seed
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"${SEED_ENV} must be an integer") from None
    return 0


def _config_seed(args):
    if not getattr(args, "config", None):
        return None
    with open(args.config, "rb") as fh:
        raw = fh.read()
    if args.config.endswith(".toml"):
        from .sim import tomllib

        return tomllib.loads(raw.decode()).get("seed")
    return json.loads(raw).get("seed")


def _experiment_config(args) -> ExperimentConfig:
    base = {}
    if args.config:
        base = ExperimentConfig.from_file(args.config).to_dict()
    kind, params = _geometry_params(args)
    if kind is not None:
        base["kind"] = kind
        base["params"] = list(params) if params is not None else None
    mapping = {"K": "K", "M": "M", "theta_max": "theta_max", "varphi_max": "varphi_max",
               "p_t_db": "p_t_db", "p_d_db": "p_d_db", "tau": "tau",
               "n_snapshots": "n_snapshots", "min_sep": "min_sep_deg", "grid": "grid",
               "n_trials": "n_trials"}
    for attr, key in mapping.items():
        v = getattr(args, attr, None)
        if v is not None:
            base[key] = v
    if getattr(args, "oracle_doa", False):
        base["oracle_doa"] = True
    base["seed"] = _resolve_seed(args, base.get("seed") if args.config else None)
    if "params" in base and base["params"] is not None:
        base["params"] = tuple(base["params"])
    return ExperimentConfig.from_dict(base)


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (complex, np.complexfloating)):
        return [float(x.real), float(x.imag)]
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    return x


def _dump_json(payload: dict) -> str:
    payload = dict(payload, version=__version__, rng=RNG_ALGORITHM)
    return json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n"


def _config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(_jsonable(obj), sort_keys=True).encode()).hexdigest()[:16]


def _cmd_coarray(args, argv):
    g = _explicit_geometry(args)
    with _pipeline():
        ca = difference_coarray(g)
    ly, lz = ca.half_extent
    if g.kind == "NA1D":
        coord = g.z if args.axis == "z" else g.y
        L = ly if args.axis == "y" else lz
        lags = list(range(-(L - 1), L))
    else:
        lags = ca.contiguous_lags().tolist()
    resolved = {"geometry": g.to_dict()}
    payload = {
        "command": argv, "config": resolved, "config_hash": _config_hash(resolved),
        "n_elements": g.M, "half_extent": [ly, lz],
        "n_distinct_lags": len(ca.weights), "n_contiguous_lags": len(lags),
        "contiguous_lags": lags,
    }
    if g.kind == "NA1D":
        payload["positions"] = sorted(int(c) for c in coord)
    return _dump_json(payload), resolved


def _cmd_beampattern(args, argv):
    g = _explicit_geometry(args)
    if args.grid < 2:
        raise UsageError("--grid must be >= 2")
    x = np.linspace(-args.extent, args.extent, args.grid)
    dy, dz = np.meshgrid(x, x, indexing="ij")
    with _pipeline():
        if args.closed:
            G = pattern_closed(g.kind, g.params, dy, dz)
        else:
            G = pattern_direct(g, dy, dz)
    resolved = {"geometry": g.to_dict(), "grid": args.grid, "extent": args.extent,
                "closed": bool(args.closed)}
    buf = io.StringIO()
    _csv_header(buf, argv, resolved)
    buf.write("dy,dz,gain,gain_db\n")
    with np.errstate(divide="ignore"):
        gdb = 10 * np.log10(np.maximum(G, 1e-30))
    for a, b, v, d in zip(dy.ravel().tolist(), dz.ravel().tolist(), G.ravel().tolist(),
                          gdb.ravel().tolist()):
        buf.write(f"{a!r},{b!r},{v!r},{d!r}\n")
    return buf.getvalue(), resolved


def _csv_header(buf, argv, resolved):
    buf.write("# command: " + json.dumps(argv) + "\n")
    buf.write("# config: " + json.dumps(_jsonable(resolved), sort_keys=True) + "\n")
    buf.write(f"# config_hash: {_config_hash(resolved)}\n")
    buf.write(f"# version: {__version__}\n")


def _cmd_verify(args, argv):
    with _pipeline():
        rows = verify_theorems(args.sweep)
    resolved = {"sweep": args.sweep}
    buf = io.StringIO()
    _csv_header(buf, argv, resolved)
    n_fail = sum(not r.passed for r in rows)
    buf.write(f"# checks: {len(rows)} failed: {n_fail}\n")
    buf.write("kind,params,axis,bw_numeric,lower,upper,tight_upper,pass\n")
    for r in rows:
        buf.write(",".join(r.as_row()) + "\n")
    return buf.getvalue(), resolved


def _trial_setup(args):
    cfg = _experiment_config(args).replace(n_trials=1)
    g = cfg.geometry()
    if args.trial < 0:
        raise UsageError("--trial must be >= 0")
    with _pipeline():
        sc = sample_scenario(cfg, args.trial)
        rng = trial_rng(cfg.seed, args.trial, 1)
        pilot = generate_block(g, sc, "pilot", rng)
        data = generate_block(g, sc, "data", rng)
    return cfg, g, sc, pilot, data


def _doa_for(cfg, g, sc, pilot, data, oracle=False):
    from .doa import DoaEstimate

    if oracle:
        return DoaEstimate(sc.thetas.copy(), sc.phis.copy())
    return sense(g, [pilot, data], sc.K + 1, cfg.grid).aligned_to(sc.thetas, sc.phis)


def _cmd_sense(args, argv):
    cfg, g, sc, pilot, data = _trial_setup(args)
    with _pipeline():
        raw = sense(g, [pilot, data], sc.K + 1, cfg.grid)
        est = raw.aligned_to(sc.thetas, sc.phis)
    err_t = np.degrees(est.thetas - sc.thetas)
    err_p = np.degrees(est.phis - sc.phis)
    resolved = {"experiment": cfg.to_dict(), "trial": args.trial}
    payload = {
        "command": argv, "config": resolved, "config_hash": _config_hash(resolved),
        "geometry": g.to_dict(),
        "true": {"theta_deg": np.degrees(sc.thetas), "phi_deg": np.degrees(sc.phis)},
        "estimated": {"theta_deg": np.degrees(est.thetas), "phi_deg": np.degrees(est.phis)},
        "error_deg": {"theta": err_t, "phi": err_p},
        "rmse_deg": float(np.sqrt(np.mean(np.concatenate([err_t, err_p]) ** 2))),
        "pairing": list(raw.pairing) if raw.pairing is not None else None,
        "degraded": bool(raw.degraded),
        "spectrum_meta": raw.spectrum_meta,
    }
    if args.spectrum:
        buf = io.StringIO()
        _csv_header(buf, argv, resolved)
        buf.write("source,theta_deg,phi_deg\n")
        for i, (t, p) in enumerate(zip(raw.thetas, raw.phis)):
            buf.write(f"{i},{float(np.degrees(t))!r},{float(np.degrees(p))!r}\n")
        with open(args.spectrum, "w") as fh:
            fh.write(buf.getvalue())
    return _dump_json(payload), resolved


def _cmd_estimate(args, argv):
    cfg, g, sc, pilot, data = _trial_setup(args)
    with _pipeline():
        doa = _doa_for(cfg, g, sc, pilot, data, args.oracle_doa)
        gamma_hat = estimate_gains(g, doa, pilot, sc.p_t)
    sq = np.abs(gamma_hat - sc.gains) ** 2
    resolved = {"experiment": cfg.to_dict(), "trial": args.trial}
    payload = {
        "command": argv, "config": resolved, "config_hash": _config_hash(resolved),
        "gamma_true": sc.gains, "gamma_hat": gamma_hat, "squared_error": sq,
        "mse_gamma": float(sq.sum()),
        "mse_theoretical": mse_theoretical(sc.K, sc.sigma2, sc.tau, sc.p_t),
        "mse_traditional": mse_traditional(g.M, sc.sigma2, sc.tau, sc.p_t),
    }
    return _dump_json(payload), resolved


def _cmd_rates(args, argv):
    cfg, g, sc, pilot, data = _trial_setup(args)
    with _pipeline():
        h_pt, C = synthesize_channels(g, sc)
        perfect = sum_rate_bd(C, sc.p_d, sc.sigma2, h_pt)
        doa = _doa_for(cfg, g, sc, pilot, data)
        gamma_hat = estimate_gains(g, doa, pilot, sc.p_t)
        est = rates_with_estimated_csi(h_pt, C, assemble_channels(doa, gamma_hat, g),
                                       sc.p_d, sc.sigma2)
    resolved = {"experiment": cfg.to_dict(), "trial": args.trial}
    payload = {"command": argv, "config": resolved, "config_hash": _config_hash(resolved),
               "perfect": perfect.to_dict(), "estimated": est.to_dict()}
    return _dump_json(payload), resolved


def _cmd_sweep(args, argv):
    cfg = _experiment_config(args)
    sweep = None
    if args.variable is not None:
        if not args.values:
            raise UsageError("--variable needs --values")
        try:
            values = [float(v) if args.variable not in ("K", "M") else int(v)
                      for v in args.values.split(",")]
        except ValueError:
            raise UsageError("--values must be comma-separated numbers") from None
        sweep = (args.variable, values)
    threads = args.threads or default_threads()
    runner = run_rate_curve if args.experiment == "rate" else run_mse_curve
    cfg.geometry()
    with _pipeline():
        pts = runner(cfg, sweep, threads)
    text = curve_csv(pts, cfg, {"command": json.dumps(argv), "experiment": args.experiment})
    return text, cfg.to_dict()


_COMMANDS = {"coarray": _cmd_coarray, "beampattern": _cmd_beampattern,
             "verify-theorems": _cmd_verify, "sense": _cmd_sense, "estimate": _cmd_estimate,
             "rates": _cmd_rates, "sweep": _cmd_sweep}


def _replay_argv(path):
    """Recover the embedded command line from a previous output file."""
    with open(path) as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        return json.loads(text)["command"]
    for line in text.splitlines():
        if line.startswith("# command: "):
            return json.loads(line[len("# command: "):])
    raise UsageError(f"{path} has no embedded command")


def _strip_io_flags(argv):
    # --out, --replay and --threads do not affect results and are not embedded.
    out, skip = [], False
    for a in argv:
        if skip:
            skip = False
            continue
        if a in ("--out", "--replay", "--threads"):
            skip = True
            continue
        if a.split("=", 1)[0] in ("--out", "--replay", "--threads"):
            continue
        out.append(a)
    return out


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_CONFIG
        embedded = _strip_io_flags(argv)
        if not args.replay and args.seed is None and args.command in ("sense", "estimate", "rates", "sweep"):
            # Pin the resolved seed so the embedded command replays without the environment.
            args.seed = _resolve_seed(args, _config_seed(args))
            embedded += ["--seed", str(args.seed)]
        if args.replay:
            embedded = _replay_argv(args.replay)
            replay_args = parser.parse_args(embedded)
            replay_args.out = args.out
            replay_args.threads = args.threads
            args = replay_args
        text, resolved = _COMMANDS[args.command](args, embedded)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except PipelineError as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (InvalidParameterError, ValueError, OSError, KeyError, TypeError) as exc:
        # Everything outside a pipeline block is configuration handling.
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    seed = args.seed if args.seed is not None else _resolve_seed(args)
    print("config: " + json.dumps(_jsonable(resolved), sort_keys=True), file=sys.stderr)
    print(f"seed: {seed}", file=sys.stderr)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
