"""Config-driven Monte-Carlo harness: channel/pilot synthesis, variant
dispatch, metrics, deterministic parallel execution, and CSV emission.

Determinism contract: trial i draws everything from the substream
SeedSequence(master_seed, spawn_key=(i,)), recreated per sweep value, so
sweep points are paired (same channel and noise innovations) and serial vs
parallel execution is byte-identical after the ordered reduction.
"""

import csv
import io
import itertools
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import yaml

from .arrays import (ArrayGeometry, GroundTruthChannel, PilotBlock, doa_to_freq,
                     full_ula, synthesize_channel, synthesize_observation)
from .crb import fim
from .estimator import (EstimatorConfig, aqnm_equivalent, estimate,
                        estimate_aqnm, estimate_ls, estimate_sequential)
from .quantizer import build_one_bit, build_uniform, quantize_complex


class ConfigError(ValueError):
    pass


_VARIANT_RE = re.compile(r"^(seq-)?(gl-qvbce|gl-vbce-aqnm|gl-vbce|ls)(?:-(\d+)bit)?$")
_SWEEPS = ("snr_db", "bit_depth", "m", "l", "t", "pilot_index", "iteration")
_CHANNELS = ("random", "fixed2path", "singletone")

TRIAL_COLUMNS = ["scenario", "variant", "sweep_name", "sweep_value", "trial",
                 "nmse_linear", "L_hat", "success", "mse_theta", "mse_g", "mse_phi"]
SUMMARY_COLUMNS = ["scenario", "variant", "sweep_name", "sweep_value", "trials",
                   "nmse_db", "success_rate", "mse_theta", "mse_g", "mse_phi"]
CRB_COLUMNS = ["scenario", "quantizer", "sweep_name", "sweep_value", "parameter",
               "path", "crb_db", "singular"]

SUCCESS_NMSE_DB = -5.0


@dataclass(frozen=True)
class ParsedVariant:
    name: str
    family: str          # gl-qvbce | gl-vbce-aqnm | gl-vbce | ls
    sequential: bool
    bit_depth: int       # None = take from config / sweep


def parse_variant(name):
    m = _VARIANT_RE.match(name)
    if not m:
        raise ConfigError(f"unknown variant {name!r}")
    seq, family, bits = bool(m.group(1)), m.group(2), m.group(3)
    bit_depth = int(bits) if bits else None
    if family in ("gl-vbce", "ls") and bit_depth is not None:
        raise ConfigError(f"{name!r}: bit depth only applies to quantized variants")
    if family == "ls" and seq:
        raise ConfigError("ls has no sequential form")
    if bit_depth is not None and bit_depth < 1:
        raise ConfigError("bit depth must be >= 1")
    return ParsedVariant(name=name, family=family, sequential=seq, bit_depth=bit_depth)


@dataclass
class ExperimentConfig:
    scenario: str
    sweep: str
    sweep_values: list
    variants: list = field(default_factory=list)
    trials: int = 100
    seed: int = 12345
    n: int = 64
    m: int = 64
    l: int = 2
    t: int = 2
    snr_db: float = 0.0
    bit_depth: int = 1
    power: float = 1.0
    channel: str = "random"
    seq_lambda: float = 0.1
    blocks: int = 1
    max_outer_iters: int = 20
    outer_tol: float = 1e-6
    quantizers: list = field(default_factory=lambda: ["1bit", "2bit", "unquantized"])

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.scenario:
            raise ConfigError("scenario name required")
        if self.sweep not in _SWEEPS:
            raise ConfigError(f"unknown sweep {self.sweep!r}; choose from {_SWEEPS}")
        if not self.sweep_values:
            raise ConfigError("sweep_values must be nonempty")
        if self.trials < 1:
            raise ConfigError("trials >= 1 required")
        for v in self.variants:
            parse_variant(v)
        if self.channel not in _CHANNELS:
            raise ConfigError(f"unknown channel model {self.channel!r}")
        if not (0 < self.m <= self.n):
            raise ConfigError("need 0 < m <= n")
        if self.l < 1 or self.t < 1:
            raise ConfigError("l and t must be >= 1")
        if self.power <= 0:
            raise ConfigError("power must be positive")
        if not 0 < self.seq_lambda <= 1:
            raise ConfigError("seq_lambda must be in (0, 1]")
        if self.sweep == "pilot_index":
            if self.blocks < max(int(v) for v in self.sweep_values):
                raise ConfigError("blocks must cover the pilot_index sweep values")
            if any(int(v) < 1 for v in self.sweep_values):
                raise ConfigError("pilot_index values are 1-based")
        if self.sweep == "iteration":
            if any(int(v) < 1 for v in self.sweep_values):
                raise ConfigError("iteration values are 1-based")
        if self.sweep == "m" and any(int(v) > self.n for v in self.sweep_values):
            raise ConfigError("m sweep values cannot exceed n")
        for q in self.quantizers:
            _parse_quantizer_label(q)

    def to_dict(self):
        return asdict(self)


_CONFIG_FIELDS = {f for f in ExperimentConfig.__dataclass_fields__}


def config_from_dict(data):
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(data) - _CONFIG_FIELDS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    missing = {"scenario", "sweep", "sweep_values"} - set(data)
    if missing:
        raise ConfigError(f"missing config keys: {sorted(missing)}")
    try:
        return ExperimentConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path):
    with open(path, "r") as fh:
        data = yaml.safe_load(fh)
    return config_from_dict(data)


def save_config(config, path):
    with open(path, "w") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=False)


def _parse_quantizer_label(label):
    if label == "unquantized":
        return None
    m = re.match(r"^(\d+)bit$", label)
    if not m or int(m.group(1)) < 1:
        raise ConfigError(f"bad quantizer label {label!r}")
    return int(m.group(1))


def build_quantizer(bit_depth, power):
    if bit_depth == 1:
        return build_one_bit()
    return build_uniform(bit_depth, math.sqrt(power))


# ---------------------------------------------------------------------------
# Channel and data synthesis


def _draw_gains(power, l, rng):
    """Ray gains: LoS carries mean power 0.45P (+0.05P spread), the rest split
    the remaining 0.45P evenly; negative draws are rejected and redrawn."""
    g = np.empty(l)
    for i in range(l):
        if i == 0:
            mean, var = math.sqrt(0.45 * power), 0.05 * power
        else:
            mean, var = math.sqrt(0.45 * power / (l - 1)), 0.05 * power / (l - 1)
        sd = math.sqrt(var)
        val = rng.normal(mean, sd)
        while val <= 0:
            val = rng.normal(mean, sd)
        g[i] = val
    varphi = rng.uniform(-np.pi, np.pi, l)
    return g, varphi


def generate_channel(power, l, rng):
    """Random L-path channel: gains/phases as above, DOAs uniform on
    [-pi/2, pi/2) mapped to spatial frequencies."""
    if l < 1 or power <= 0:
        raise ValueError("need L >= 1 and positive power")
    g, varphi = _draw_gains(power, l, rng)
    doa = rng.uniform(-np.pi / 2, np.pi / 2, l)
    return GroundTruthChannel(theta=doa_to_freq(doa), g=g, varphi=varphi)


def fixed_truth(channel):
    """Deterministic scenarios used by the CRB figures and criterion tests."""
    if channel == "fixed2path":
        doa = np.deg2rad([-30.0, 60.0])
        return GroundTruthChannel(theta=doa_to_freq(doa), g=np.array([0.8, 0.6]),
                                  varphi=np.array([-0.3 * np.pi, 0.2 * np.pi]))
    if channel == "singletone":
        return GroundTruthChannel(theta=np.array([0.5]), g=np.array([1.0]),
                                  varphi=np.array([0.3]))
    raise ConfigError(f"channel {channel!r} has no fixed truth")


def trial_rng(seed, trial):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial,)))


def _draw_geometry(n, m, rng):
    """Element subset for sparse operation: index 0 always kept, the rest
    uniform without replacement; full arrays (m == n) skip the draw."""
    if m == n:
        return full_ula(n)
    extra = np.sort(rng.choice(np.arange(1, n), size=m - 1, replace=False))
    return ArrayGeometry(indices=np.concatenate(([0], extra)), n_virtual=n)


def _draw_pilot(t, rng):
    return PilotBlock(x=np.exp(1j * rng.uniform(-np.pi, np.pi, t)))


def match_paths(theta_true, theta_est):
    """Assignment of estimated to true paths minimizing total wrapped
    frequency distance; ties break toward the lexicographically first
    permutation."""
    l = len(theta_true)
    if len(theta_est) != l:
        raise ValueError("match_paths needs equal path counts")
    best, best_cost = None, np.inf
    for perm in itertools.permutations(range(l)):
        d = _wrap_angle(np.asarray(theta_est)[list(perm)] - np.asarray(theta_true))
        cost = float(np.abs(d).sum())
        if cost < best_cost - 1e-15:
            best, best_cost = perm, cost
    return best


def _wrap_angle(x):
    return np.mod(np.asarray(x) + np.pi, 2.0 * np.pi) - np.pi


# ---------------------------------------------------------------------------
# Metrics


@dataclass
class MetricsRecord:
    scenario: str
    variant: str
    sweep_name: str
    sweep_value: object
    trial: int
    nmse_linear: float
    l_hat: int = None
    success: bool = None
    mse_theta: float = None
    mse_g: float = None
    mse_phi: float = None
    sweep_index: int = 0
    variant_index: int = 0


def _score(est, truth, cfg, record_paths=True):
    """NMSE, model-order success, and per-path squared errors (when L matches)."""
    h = truth.h
    nmse = float(np.sum(np.abs(est.h_hat - h) ** 2) / np.sum(np.abs(h) ** 2))
    out = {"nmse_linear": nmse}
    if est.l_hat is None:
        return out
    l = truth.n_paths
    success = (est.l_hat == l) and (10.0 * math.log10(nmse) <= SUCCESS_NMSE_DB
                                    if nmse > 0 else True)
    out["l_hat"] = int(est.l_hat)
    out["success"] = bool(success)
    if record_paths and est.l_hat == l:
        perm = match_paths(truth.theta, est.theta_hat)
        th = est.theta_hat[list(perm)]
        g = est.g_hat[list(perm)]
        ph = est.varphi_hat[list(perm)]
        out["mse_theta"] = float(np.mean(_wrap_angle(th - truth.theta) ** 2))
        out["mse_g"] = float(np.mean((g - truth.g) ** 2))
        out["mse_phi"] = float(np.mean(_wrap_angle(ph - truth.varphi) ** 2))
    return out


# ---------------------------------------------------------------------------
# Per-trial execution


@dataclass(frozen=True)
class _CellParams:
    n: int
    m: int
    l: int
    t: int
    snr_db: float
    bit_depth: int


def _resolve(cfg, sweep_value):
    p = {"n": cfg.n, "m": cfg.m, "l": cfg.l, "t": cfg.t,
         "snr_db": cfg.snr_db, "bit_depth": cfg.bit_depth}
    if cfg.sweep in ("m", "l", "t", "bit_depth"):
        p[cfg.sweep] = int(sweep_value)
    elif cfg.sweep == "snr_db":
        p["snr_db"] = float(sweep_value)
    return _CellParams(**p)


def _estimator_config(cfg, **overrides):
    kw = {"max_outer_iters": cfg.max_outer_iters, "outer_tol": cfg.outer_tol}
    kw.update(overrides)
    return EstimatorConfig(**kw)


def _make_truth(cfg, params, rng):
    if cfg.channel == "random":
        truth = generate_channel(cfg.power, params.l, rng)
    else:
        truth = fixed_truth(cfg.channel)
    return truth


def _run_variant(pv, cfg, params, data, est_cfg):
    geom, truth, pilot, sigma2, y = data
    if pv.family == "ls":
        return estimate_ls(y, pilot)
    if pv.family == "gl-vbce":
        return estimate(y, pilot, geom, sigma2, config=est_cfg, power=cfg.power)
    bits = pv.bit_depth if pv.bit_depth is not None else params.bit_depth
    spec = build_quantizer(bits, cfg.power)
    codes = quantize_complex(spec, y)
    if pv.family == "gl-qvbce":
        return estimate(codes, pilot, geom, sigma2, quantizer=spec, config=est_cfg,
                        power=cfg.power)
    return estimate_aqnm(codes, pilot, geom, sigma2, spec, config=est_cfg,
                         power=cfg.power)


def _standard_trial(cfg, trial, parsed):
    records = []
    for s_idx, sv in enumerate(cfg.sweep_values):
        params = _resolve(cfg, sv)
        rng = trial_rng(cfg.seed, trial)
        geom = _draw_geometry(params.n, params.m, rng)
        truth = _make_truth(cfg, params, rng)
        synthesize_channel(geom, truth)
        pilot = _draw_pilot(params.t, rng)
        sigma2 = cfg.power / 10.0 ** (params.snr_db / 10.0)
        y = synthesize_observation(truth, pilot, sigma2, rng)
        data = (geom, truth, pilot, sigma2, y)
        est_cfg = _estimator_config(cfg)
        for v_idx, pv in enumerate(parsed):
            est = _run_variant(pv, cfg, params, data, est_cfg)
            records.append(MetricsRecord(scenario=cfg.scenario, variant=pv.name,
                                         sweep_name=cfg.sweep, sweep_value=sv,
                                         trial=trial, sweep_index=s_idx,
                                         variant_index=v_idx,
                                         **_score(est, truth, cfg)))
    return records


def _iteration_trial(cfg, trial, parsed):
    """One data draw; every variant reports its NMSE trajectory at the
    requested outer-iteration counts (path metrics are trajectory-undefined
    and stay empty)."""
    its = [int(v) for v in cfg.sweep_values]
    params = _resolve(cfg, None)
    rng = trial_rng(cfg.seed, trial)
    geom = _draw_geometry(params.n, params.m, rng)
    truth = _make_truth(cfg, params, rng)
    synthesize_channel(geom, truth)
    pilot = _draw_pilot(params.t, rng)
    sigma2 = cfg.power / 10.0 ** (params.snr_db / 10.0)
    y = synthesize_observation(truth, pilot, sigma2, rng)
    data = (geom, truth, pilot, sigma2, y)
    h_energy = float(np.sum(np.abs(truth.h) ** 2))

    records = []
    for v_idx, pv in enumerate(parsed):
        est_cfg = _estimator_config(cfg, max_outer_iters=max(its),
                                    track_iterates=True)
        est = _run_variant(pv, cfg, params, data, est_cfg)
        for s_idx, it in enumerate(its):
            if est.history:
                # Converged-early runs hold their last iterate.
                h_it = est.history[min(it, len(est.history)) - 1]
            else:
                h_it = est.h_hat
            nmse = float(np.sum(np.abs(h_it - truth.h) ** 2) / h_energy)
            records.append(MetricsRecord(scenario=cfg.scenario, variant=pv.name,
                                         sweep_name=cfg.sweep, sweep_value=it,
                                         trial=trial, nmse_linear=nmse,
                                         sweep_index=s_idx, variant_index=v_idx))
    return records


def _block_stream(cfg, trial):
    """Fixed-DOA stream: one DOA draw per trial, fresh amplitudes, pilots and
    noise per block."""
    rng = trial_rng(cfg.seed, trial)
    geom = _draw_geometry(cfg.n, cfg.m, rng)
    if cfg.channel == "random":
        base = generate_channel(cfg.power, cfg.l, rng)
    else:
        base = fixed_truth(cfg.channel)
    sigma2 = cfg.power / 10.0 ** (cfg.snr_db / 10.0)
    blocks = []
    for b in range(cfg.blocks):
        if b == 0 or cfg.channel != "random":
            truth = GroundTruthChannel(theta=base.theta.copy(), g=base.g.copy(),
                                       varphi=base.varphi.copy())
        else:
            g, varphi = _draw_gains(cfg.power, cfg.l, rng)
            truth = GroundTruthChannel(theta=base.theta.copy(), g=g, varphi=varphi)
        synthesize_channel(geom, truth)
        pilot = _draw_pilot(cfg.t, rng)
        y = synthesize_observation(truth, pilot, sigma2, rng)
        blocks.append((truth, pilot, y))
    return geom, sigma2, blocks


def _pilot_index_trial(cfg, trial, parsed):
    geom, sigma2, blocks = _block_stream(cfg, trial)
    wanted = {int(v): i for i, v in enumerate(cfg.sweep_values)}
    est_cfg = _estimator_config(cfg)
    records = []
    for v_idx, pv in enumerate(parsed):
        bits = pv.bit_depth if pv.bit_depth is not None else cfg.bit_depth
        if pv.sequential:
            if pv.family == "gl-qvbce":
                spec = build_quantizer(bits, cfg.power)
                seq_blocks = [(quantize_complex(spec, y), pilot)
                              for (_, pilot, y) in blocks]
                ests = estimate_sequential(seq_blocks, geom, sigma2, quantizer=spec,
                                           config=est_cfg, power=cfg.power,
                                           lam=cfg.seq_lambda)
            elif pv.family == "gl-vbce-aqnm":
                spec = build_quantizer(bits, cfg.power)
                sigma_eff = sigma2
                seq_blocks = []
                for (_, pilot, y) in blocks:
                    y_eq, sigma_eff = aqnm_equivalent(quantize_complex(spec, y),
                                                      spec, sigma2, cfg.power)
                    seq_blocks.append((y_eq, pilot))
                ests = estimate_sequential(seq_blocks, geom, sigma_eff,
                                           config=est_cfg, power=cfg.power,
                                           lam=cfg.seq_lambda)
            else:
                seq_blocks = [(y, pilot) for (_, pilot, y) in blocks]
                ests = estimate_sequential(seq_blocks, geom, sigma2, config=est_cfg,
                                           power=cfg.power, lam=cfg.seq_lambda)
        else:
            ests = []
            for (truth, pilot, y) in blocks:
                params = _CellParams(n=cfg.n, m=cfg.m, l=cfg.l, t=cfg.t,
                                     snr_db=cfg.snr_db, bit_depth=bits)
                ests.append(_run_variant(pv, cfg, params,
                                         (geom, truth, pilot, sigma2, y), est_cfg))
        for b, ((truth, _, _), est) in enumerate(zip(blocks, ests)):
            if (b + 1) not in wanted:
                continue
            records.append(MetricsRecord(scenario=cfg.scenario, variant=pv.name,
                                         sweep_name=cfg.sweep, sweep_value=b + 1,
                                         trial=trial, sweep_index=wanted[b + 1],
                                         variant_index=v_idx,
                                         **_score(est, truth, cfg)))
    return records


def _run_trial(cfg, trial):
    parsed = [parse_variant(v) for v in cfg.variants]
    if cfg.sweep == "iteration":
        return _iteration_trial(cfg, trial, parsed)
    if cfg.sweep == "pilot_index":
        return _pilot_index_trial(cfg, trial, parsed)
    return _standard_trial(cfg, trial, parsed)


# ---------------------------------------------------------------------------
# Experiment driver, aggregation, CSV


def run_experiment(config, workers=1):
    """All trials, deterministically ordered records."""
    config.validate()
    if not config.variants:
        raise ConfigError("at least one variant required")
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_trial = list(pool.map(_run_trial, itertools.repeat(config),
                                      range(config.trials), chunksize=1))
    else:
        per_trial = [_run_trial(config, i) for i in range(config.trials)]
    records = [r for rows in per_trial for r in rows]
    records.sort(key=lambda r: (r.sweep_index, r.trial, r.variant_index))
    return records


def aggregate(records):
    """Ordered reduction to per-(variant, sweep value) summary rows."""
    groups = {}
    order = []
    for r in records:
        key = (r.sweep_index, r.variant_index)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(r)
    order.sort()
    rows = []
    for key in order:
        rs = groups[key]
        head = rs[0]
        nmse_mean = float(np.mean([r.nmse_linear for r in rs]))
        nmse_db = 10.0 * math.log10(nmse_mean) if nmse_mean > 0 else -math.inf
        flagged = [r for r in rs if r.success is not None]
        succ = [r for r in rs if r.success]
        row = {"scenario": head.scenario, "variant": head.variant,
               "sweep_name": head.sweep_name, "sweep_value": head.sweep_value,
               "trials": len(rs), "nmse_db": nmse_db,
               "success_rate": (len(succ) / len(flagged)) if flagged else None,
               "mse_theta": None, "mse_g": None, "mse_phi": None}
        scored = [r for r in succ if r.mse_theta is not None]
        if scored:
            for k in ("mse_theta", "mse_g", "mse_phi"):
                row[k] = float(np.mean([getattr(r, k) for r in scored]))
        rows.append(row)
    return rows


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path, columns, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def write_trial_csv(records, path):
    rows = [[r.scenario, r.variant, r.sweep_name, r.sweep_value, r.trial,
             r.nmse_linear, r.l_hat, r.success, r.mse_theta, r.mse_g, r.mse_phi]
            for r in records]
    _write_csv(path, TRIAL_COLUMNS, rows)


def write_summary_csv(summary_rows, path):
    rows = [[row[c] for c in SUMMARY_COLUMNS] for row in summary_rows]
    _write_csv(path, SUMMARY_COLUMNS, rows)


# ---------------------------------------------------------------------------
# CRB curves


def run_crb_curves(config):
    """Per-parameter CRB diagonals (dB) for each configured quantizer over the
    sweep; deterministic (unit pilots, fixed scenario truth)."""
    config.validate()
    if config.channel == "random":
        raise ConfigError("crb curves need a fixed channel scenario")
    if config.sweep != "snr_db":
        raise ConfigError("crb curves sweep snr_db")
    truth = fixed_truth(config.channel)
    geom = full_ula(config.m)
    synthesize_channel(geom, truth)
    pilot = PilotBlock(x=np.ones(config.t, dtype=complex))
    names = ("theta", "g", "phi")
    rows = []
    for label in config.quantizers:
        bits = _parse_quantizer_label(label)
        spec = None if bits is None else build_quantizer(bits, config.power)
        for sv in config.sweep_values:
            sigma2 = config.power / 10.0 ** (float(sv) / 10.0)
            res = fim(truth, pilot, geom, sigma2, spec=spec)
            l = truth.n_paths
            diag = None if res.crb is None else np.diag(res.crb)
            for p_i, pname in enumerate(names):
                for path in range(l):
                    val = None
                    if diag is not None:
                        val = 10.0 * math.log10(float(diag[p_i * l + path]))
                    rows.append([config.scenario, label, config.sweep, sv, pname,
                                 path, val, res.singular])
    return rows


def write_crb_csv(rows, path):
    _write_csv(path, CRB_COLUMNS, rows)
