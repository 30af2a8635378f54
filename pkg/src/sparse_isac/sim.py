"""Monte Carlo experiments: scenario sampling, MSE and rate curves, CSV output.

Seeding: trial ``i`` of an experiment with seed ``s`` draws its scenario from
``SeedSequence(s, spawn_key=(i, 0))`` and its received samples from
``SeedSequence(s, spawn_key=(i, 1))``.  Sweep points reuse the same trial
seeds (common random numbers), so curves are smooth in the swept variable and
any subset of trials can be replayed in isolation.
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import __version__
from .channel import RNG_ALGORITHM, Scenario, cscg, generate_block, synthesize_channels, trial_rng
from .doa import DoaEstimate, sense
from .gains import CoincidentAnglesError, assemble_channels, estimate_gains, estimated_manifold
from .geometry import ArrayGeometry, build, difference_coarray, expected_count
from .rates import rates_with_estimated_csi, sum_rate_bd

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

PRESETS_M32 = {"UPA": (8, 4), "LNA": (8, 8, 8, 9), "PNA": (1, 6, 2, 3)}
SWEEP_VARIABLES = ("p_db", "p_t_db", "p_d_db", "K", "M")


def _nested_split(n):
    return n // 2, n - n // 2


@lru_cache(maxsize=None)
def preset_params(kind: str, M: int) -> tuple:
    """Default construction parameters for an ``M``-element array.

    ``M = 32`` uses the fixed presets.  Otherwise: UPA is ``(M/4) x 4``; LNA
    splits ``M + 1`` elements as evenly as possible between the axes with
    balanced nested levels; PNA is the parameter set with exactly ``M``
    elements and the largest hole-free co-array rectangle (lexicographic
    tie-break).
    """
    kind = kind.upper()
    if M == 32 and kind in PRESETS_M32:
        return PRESETS_M32[kind]
    if kind == "UPA":
        if M % 4:
            raise ValueError("UPA presets need M divisible by 4")
        return (M // 4, 4)
    if kind == "LNA":
        mz = (M + 2) // 2
        my = M + 1 - mz
        if min(my, mz) < 2:
            raise ValueError("LNA presets need M >= 3")
        return _nested_split(my) + _nested_split(mz)
    if kind == "PNA":
        best, best_area = None, -1
        for m1d in range(0, 4):
            for m2d in range(1, M + 1):
                for m1s in range(0, M + 1):
                    for m2s in range(1, M + 1):
                        p = (m1d, m2d, m1s, m2s)
                        n = expected_count("PNA", p)
                        if n > M:
                            break
                        if n != M:
                            continue
                        area = difference_coarray(build("PNA", *p)).n_contiguous
                        if area > best_area:
                            best, best_area = p, area
        if best is None:
            raise ValueError(f"no PNA with {M} elements")
        return best
    raise ValueError(f"no preset for {kind}")


@dataclass
class ExperimentConfig:
    """Monte Carlo settings.  Angles in degrees, powers in dB re noise."""

    kind: str = "PNA"
    params: tuple | None = None
    M: int = 32
    K: int = 3
    theta_max: float = 10.0
    varphi_max: float = 10.0
    p_t_db: float = 20.0
    p_d_db: float = 20.0
    tau: int | None = None
    n_snapshots: int = 2000
    n_trials: int = 500
    seed: int = 0
    min_sep_deg: float = 0.0
    oracle_doa: bool = False
    grid: int = 4096

    def __post_init__(self):
        self.kind = self.kind.upper()
        if self.params is not None:
            self.params = tuple(self.params)
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        for name in ("theta_max", "varphi_max"):
            v = getattr(self, name)
            if not 0.0 <= v < 90.0:
                raise ValueError(f"{name} must lie in [0, 90) degrees")
        if self.K < 0:
            raise ValueError("K must be >= 0")

    @property
    def pilot_length(self) -> int:
        return self.tau if self.tau is not None else 2 * (self.K + 1)

    def geometry(self) -> ArrayGeometry:
        params = self.params if self.params is not None else preset_params(self.kind, self.M)
        return build(self.kind, *params)

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["params"] = list(self.params) if self.params is not None else None
        return d

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        """Load a JSON or TOML file (chosen by extension, JSON otherwise)."""
        with open(path, "rb") as fh:
            raw = fh.read()
        if str(path).endswith(".toml"):
            return cls.from_dict(tomllib.loads(raw.decode()))
        return cls.from_dict(json.loads(raw))


def _uniform_separated(rng, n, lim, sep, max_tries=10000):
    if lim == 0:
        return np.zeros(n)
    for _ in range(max_tries):
        x = rng.uniform(-lim, lim, n)
        if n < 2 or sep <= 0 or np.min(np.diff(np.sort(x))) >= sep:
            return x
    raise ValueError("cannot honor the minimum separation within the angle spread")


def sample_scenario(cfg: ExperimentConfig, trial_index: int) -> Scenario:
    """Random positions and gains for one trial.

    Elevations are uniform on ``[-theta_max, theta_max]``.  The angle to the
    y axis is drawn as ``varphi = 90 deg - psi`` with ``psi`` uniform on
    ``[-varphi_max, varphi_max]`` and azimuth follows from
    ``sin(phi) = cos(varphi) / cos(theta)``.  ``min_sep_deg`` is enforced
    separately on the elevations and on the ``psi`` offsets by rejection.
    Draw order: elevations, offsets, PT gain, BD gains.
    """
    rng = trial_rng(cfg.seed, trial_index, 0)
    n = cfg.K + 1
    sep = np.radians(cfg.min_sep_deg)
    theta = _uniform_separated(rng, n, np.radians(cfg.theta_max), sep)
    psi = _uniform_separated(rng, n, np.radians(cfg.varphi_max), sep)
    phi = np.arcsin(np.clip(np.sin(psi) / np.cos(theta), -1.0, 1.0))
    gains = np.concatenate([cscg(rng, 1, 1.0), cscg(rng, cfg.K, 0.1)])
    return Scenario(theta, phi, gains, p_t=10 ** (cfg.p_t_db / 10), p_d=10 ** (cfg.p_d_db / 10),
                    sigma2=1.0, tau=cfg.pilot_length, n_snapshots=cfg.n_snapshots)


@dataclass
class TrialResult:
    """Outcome of one Monte Carlo trial; metrics are NaN when the trial failed."""

    trial_index: int
    failed: bool
    metrics: dict = field(default_factory=dict)


def simulate_trial(cfg: ExperimentConfig, g: ArrayGeometry, trial_index: int,
                   want_rates: bool = False) -> TrialResult:
    """Sample, sense, estimate gains (and optionally rates) for one trial."""
    sc = sample_scenario(cfg, trial_index)
    rng = trial_rng(cfg.seed, trial_index, 1)
    pilot = generate_block(g, sc, "pilot", rng)
    if cfg.oracle_doa:
        doa = DoaEstimate(sc.thetas.copy(), sc.phis.copy())
    else:
        data = generate_block(g, sc, "data", rng)
        doa = sense(g, [pilot, data], sc.K + 1, cfg.grid).aligned_to(sc.thetas, sc.phis)
    nan = float("nan")
    m = {"mse_gamma": nan, "mse_hsum": nan}
    if want_rates:
        m.update(r_bd_perfect=nan, r_bd_estimated=nan, r_pt_perfect=nan, r_pt_estimated=nan)
    failed = bool(doa.degraded)
    h_pt, C = synthesize_channels(g, sc)
    if want_rates:
        perfect = sum_rate_bd(C, sc.p_d, sc.sigma2, h_pt)
        m["r_bd_perfect"] = perfect.r_bd_sum
        m["r_pt_perfect"] = perfect.r_pt
    if not failed:
        try:
            gamma_hat = estimate_gains(g, doa, pilot, sc.p_t)
        except CoincidentAnglesError:
            failed = True
    if not failed:
        err = gamma_hat - sc.gains
        m["mse_gamma"] = float(np.vdot(err, err).real)
        h_err = estimated_manifold(g, doa) @ gamma_hat - (h_pt + C.sum(axis=1))
        m["mse_hsum"] = float(np.vdot(h_err, h_err).real)
        if want_rates:
            est = rates_with_estimated_csi(h_pt, C, assemble_channels(doa, gamma_hat, g),
                                           sc.p_d, sc.sigma2)
            m["r_bd_estimated"] = est.r_bd_sum
            m["r_pt_estimated"] = est.r_pt
    return TrialResult(trial_index, failed, m)


def run_trials(cfg: ExperimentConfig, want_rates: bool = False, threads: int | None = None):
    """All trials of ``cfg`` in trial-index order (independent of ``threads``)."""
    g = cfg.geometry()
    idx = range(cfg.n_trials)
    threads = threads or 1
    if threads == 1:
        return [simulate_trial(cfg, g, i, want_rates) for i in idx]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(lambda i: simulate_trial(cfg, g, i, want_rates), idx))


@dataclass
class CurvePoint:
    sweep_variable: str
    value: float
    metric: str
    mean: float
    stderr: float
    n_trials: int
    n_failed: int = 0

    def as_row(self) -> list:
        return [self.sweep_variable, _fmt(self.value), self.metric, _fmt(self.mean),
                _fmt(self.stderr), self.n_trials, self.n_failed]


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def summarize(values) -> tuple:
    """Mean and standard error of the finite entries (order independent)."""
    v = np.sort(np.asarray([x for x in values if np.isfinite(x)], float))
    n = len(v)
    if n == 0:
        return float("nan"), float("nan"), 0
    mean = math.fsum(v) / n
    se = math.sqrt(math.fsum((v - mean) ** 2) / (n - 1) / n) if n > 1 else 0.0
    return mean, se, n


def _apply_sweep(cfg, name, value):
    if name == "p_db":
        return cfg.replace(p_t_db=float(value), p_d_db=float(value))
    if name in ("p_t_db", "p_d_db"):
        return cfg.replace(**{name: float(value)})
    if name == "K":
        return cfg.replace(K=int(value))
    if name == "M":
        return cfg.replace(M=int(value), params=None)
    raise ValueError(f"unknown sweep variable {name!r}; choose from {SWEEP_VARIABLES}")


def _curve(cfg, sweep, metrics, want_rates, threads):
    name, values = sweep if sweep is not None else ("none", [0])
    out = []
    for val in values:
        c = cfg if name == "none" else _apply_sweep(cfg, name, val)
        res = run_trials(c, want_rates, threads)
        n_failed = sum(r.failed for r in res)
        for metric in metrics:
            mean, se, n = summarize(r.metrics[metric] for r in res)
            out.append(CurvePoint(name, val, metric, mean, se, n, n_failed))
    return out


def run_mse_curve(cfg: ExperimentConfig, sweep=None, threads: int | None = None) -> list:
    """MSE curves over ``sweep = (variable, values)``.

    Failed trials (MUSIC short of peaks, singular LS) are excluded from the
    means and counted in ``n_failed``.
    """
    return _curve(cfg, sweep, ("mse_gamma", "mse_hsum"), False, threads)


def run_rate_curve(cfg: ExperimentConfig, sweep=None, threads: int | None = None) -> list:
    """Perfect- and estimated-CSI sum-rate curves over ``sweep``."""
    metrics = ("r_bd_perfect", "r_bd_estimated", "r_pt_perfect", "r_pt_estimated")
    return _curve(cfg, sweep, metrics, True, threads)


CSV_COLUMNS = ("sweep_variable", "value", "metric", "mean", "stderr", "n_trials", "n_failed")


def curve_csv(points, cfg: ExperimentConfig, extra_meta: dict | None = None) -> str:
    """CSV text with ``#`` metadata lines (config, hash, seed, presets, version)."""
    buf = io.StringIO()
    buf.write(f"# config: {cfg.canonical_json()}\n")
    buf.write(f"# config_hash: {cfg.config_hash()}\n")
    buf.write(f"# seed: {cfg.seed}\n")
    buf.write("# presets_m32: " + json.dumps(PRESETS_M32, sort_keys=True) + "\n")
    buf.write(f"# geometry: {cfg.kind} {list(cfg.geometry().params)}\n")
    buf.write(f"# version: {__version__}\n")
    buf.write(f"# rng: {RNG_ALGORITHM} SeedSequence(seed, spawn_key=(trial, stream))\n")
    for k, v in sorted((extra_meta or {}).items()):
        buf.write(f"# {k}: {v}\n")
    buf.write(",".join(CSV_COLUMNS) + "\n")
    for p in points:
        buf.write(",".join(str(x) for x in p.as_row()) + "\n")
    return buf.getvalue()


def default_threads() -> int:
    return os.cpu_count() or 1
