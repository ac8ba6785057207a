"""Experiment orchestration: deterministic seeding, Monte Carlo BER sweeps,
CSV/JSON artifact writing and the run manifest.

Reproducibility contract: identical config+seed produce byte-identical CSVs
regardless of the worker count. Frames draw from counter-based substreams
(SeedSequence over (seed, sweep index, frame, role)) and results are reduced
in frame order; early stopping is evaluated at fixed chunk boundaries.
"""

from __future__ import annotations

import json
import math
import subprocess
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import asc as asc_mod
from .denoise import (Denoiser, code_from_spec, default_rho_grid,
                      mmse_scalar, psi_estimate)
from .evolve import (PhiAwgn, TransferCurve, capacity_threshold_db, coupled_se,
                     gaussian_threshold_db, se_fixed_point, varphi_curve)
from .model import SystemConfig, channel_from_spec, constellation_by_name
from .recon import amp_run, gamp_run
from .sensing import build_operator

CSV_SCHEMA = "# ampcc-csv v1"

_ROLE_BITS = 1
_ROLE_NOISE = 2
_ROLE_OPERATOR = 3


@dataclass
class BerPoint:
    snr_db: float
    ber: float
    mse: float
    frames: int
    bit_errors: int
    mean_iterations: float
    wilson_lo: float
    wilson_hi: float

    def __post_init__(self):
        if not 0.0 <= self.ber <= 1.0:
            raise ValueError("ber must be in [0, 1]")
        if self.frames < 1:
            raise ValueError("frames must be >= 1")


@dataclass
class Experiment:
    kind: str
    config: dict
    sweep: list
    out: str
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.kind not in ("se", "couple-se", "rate", "mi", "ber", "asc"):
            raise ValueError("unknown experiment kind %r" % self.kind)
        if not self.sweep:
            raise ValueError("sweep must be nonempty")


def wilson_interval(errors, trials, z=1.959963984540054):
    """Wilson score interval for a binomial proportion."""
    if trials == 0:
        return 0.0, 1.0
    p = errors / trials
    denom = 1.0 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials ** 2)) / denom
    lo = 0.0 if errors == 0 else max(center - half, 0.0)
    hi = 1.0 if errors == trials else min(center + half, 1.0)
    return lo, hi


def write_csv(path, columns, rows):
    """Schema-v1 CSV with stable float formatting (byte-reproducible)."""

    def fmt(x):
        if isinstance(x, (int, np.integer)):
            return str(int(x))
        if isinstance(x, float) and math.isnan(x):
            return "nan"
        return "%.10g" % x

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(CSV_SCHEMA + "\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(fmt(x) for x in row) + "\n")
    return str(path)


def read_csv(path):
    with open(path) as fh:
        header = fh.readline().strip()
        if header != CSV_SCHEMA:
            raise ValueError("not an %s file: %s" % (CSV_SCHEMA, path))
        columns = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    return columns, rows


def _git_describe():
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             cwd=Path(__file__).parent, capture_output=True,
                             text=True, timeout=10)
        return out.stdout.strip() or "unknown"
    except Exception:
        return "unknown"


def write_manifest(out_dir, kind, config, seed, outputs, wall_s):
    manifest = {
        "kind": kind,
        "config": config,
        "seed": seed,
        "csv_schema": CSV_SCHEMA.lstrip("# "),
        "git_describe": _git_describe(),
        "wall_time_s": round(wall_s, 3),
        "outputs": sorted(outputs),
    }
    path = Path(out_dir) / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return str(path)


# ---------------------------------------------------------------------------
# Monte Carlo frames
# ---------------------------------------------------------------------------

def _frame_seed(seed, snr_idx, frame, role):
    return np.random.SeedSequence([seed, snr_idx, frame, role])


def _frame_impl(config, sigma2, snr_idx, frame):
    code = code_from_spec(config.code)
    constellation = constellation_by_name(config.constellation)
    den = Denoiser(code, constellation)
    channel = channel_from_spec(config.channel, sigma2)
    op = build_operator(config.operator, config.m, config.n,
                        _frame_seed(config.seed, snr_idx, frame, _ROLE_OPERATOR))
    rng_bits = np.random.default_rng(_frame_seed(config.seed, snr_idx, frame, _ROLE_BITS))
    bits, c = code.random_codeword(rng_bits, config.n)
    rng_noise = np.random.default_rng(_frame_seed(config.seed, snr_idx, frame, _ROLE_NOISE))
    y = channel.transmit(op.forward(c), rng_noise)
    from .model import ClipChannel
    if isinstance(channel, ClipChannel) and channel.is_awgn:
        c_hat, tr = amp_run(y, op, den, sigma2, t_max=config.t_max, c_true=c,
                            damping=config.damping, rho_mode=config.rho_mode)
    else:
        c_hat, tr = gamp_run(y, op, den, channel, t_max=config.t_max, c_true=c,
                             damping=config.damping)
    errs = int(np.sum(code.hard_bits(c_hat) != bits))
    return errs, bits.size, float(np.mean((c_hat - c) ** 2)), tr


def run_frame(config, sigma2, snr_idx, frame):
    """One coded frame: encode, transmit, reconstruct, count bit errors."""
    errs, nbits, mse, tr = _frame_impl(config, sigma2, snr_idx, frame)
    return errs, nbits, mse, tr.iterations


def ber_sweep(config, snr_list, min_errors=100, max_frames=200, workers=1,
              frame_fn=None, chunk=8):
    """Monte Carlo BER over an SNR sweep; Wilson intervals included.

    Stops a point once min_errors bit errors are seen (checked at fixed
    chunk boundaries) or max_frames frames are spent.
    """
    frame_fn = frame_fn or run_frame
    points = []
    for snr_idx, snr_db in enumerate(snr_list):
        sigma2 = 10.0 ** (-snr_db / 10.0)
        errs = bits = frames = 0
        mse_sum = iters_sum = 0.0
        while frames < max_frames and errs < min_errors:
            todo = list(range(frames, min(frames + chunk, max_frames)))
            if workers > 1:
                with ThreadPoolExecutor(max_workers=workers) as ex:
                    results = list(ex.map(
                        lambda f: frame_fn(config, sigma2, snr_idx, f), todo))
            else:
                results = [frame_fn(config, sigma2, snr_idx, f) for f in todo]
            for e, b, mse, its in results:
                errs += e
                bits += b
                mse_sum += mse
                iters_sum += its
                frames += 1
        lo, hi = wilson_interval(errs, bits)
        points.append(BerPoint(snr_db=float(snr_db), ber=errs / bits,
                               mse=mse_sum / frames, frames=frames,
                               bit_errors=errs, mean_iterations=iters_sum / frames,
                               wilson_lo=lo, wilson_hi=hi))
    return points


def ber_points_rows(points):
    cols = ["snr_db", "ber", "wilson_lo", "wilson_hi", "mse", "frames",
            "bit_errors", "mean_iterations"]
    rows = [(p.snr_db, p.ber, p.wilson_lo, p.wilson_hi, p.mse, p.frames,
             p.bit_errors, p.mean_iterations) for p in points]
    return cols, rows


# ---------------------------------------------------------------------------
# ASC frames
# ---------------------------------------------------------------------------

def _asc_frame_impl(bundle, sigma2, snr_idx, frame):
    cfg0, code, constellation, channel_spec, t_max = bundle
    # matrices are redrawn per frame: derive a frame-specific master seed
    frame_master = int(np.random.default_rng(
        _frame_seed(cfg0.seed, snr_idx, frame, _ROLE_OPERATOR)).integers(0, 2 ** 62))
    cfg = replace(cfg0, seed=frame_master)
    channel = channel_from_spec(channel_spec, sigma2)
    den = Denoiser(code, constellation)
    rng_bits = np.random.default_rng(_frame_seed(cfg0.seed, snr_idx, frame, _ROLE_BITS))
    sections_bits, sections = [], []
    for k in range(cfg.k):
        bits, c = code.random_codeword(rng_bits, cfg.n)
        sections_bits.append(bits)
        sections.append(c)
    blocks, book = asc_mod.asc_encode(sections, cfg)
    y = asc_mod.asc_transmit(blocks, channel,
                             seed=int(np.random.default_rng(
                                 _frame_seed(cfg0.seed, snr_idx, frame, _ROLE_NOISE)
                             ).integers(0, 2 ** 62)))
    c_hats, trace = asc_mod.asc_decode(y, cfg, den, channel, t_max=t_max,
                                       c_true=sections, codebook=book)
    errs = bits_n = 0
    mse = 0.0
    for bits, c, ch in zip(sections_bits, sections, c_hats):
        errs += int(np.sum(code.hard_bits(ch) != bits))
        bits_n += bits.size
        mse += float(np.mean((ch - c) ** 2))
    return errs, bits_n, mse / cfg.k, trace


def run_asc_frame(bundle, sigma2, snr_idx, frame):
    """One coupled frame over K sections; returns (errors, bits, mse, iters)."""
    errs, bits_n, mse, trace = _asc_frame_impl(bundle, sigma2, snr_idx, frame)
    return errs, bits_n, mse, trace.iterations


def asc_ber_sweep(cfg, code, constellation, channel_spec, snr_list, t_max=80,
                  min_errors=100, max_frames=50, workers=1, chunk=4):
    bundle = (cfg, code, constellation, channel_spec, t_max)
    return ber_sweep(None, snr_list, min_errors=min_errors,
                     max_frames=max_frames, workers=workers, chunk=chunk,
                     frame_fn=lambda _cfg, s2, i, f: run_asc_frame(bundle, s2, i, f))


# ---------------------------------------------------------------------------
# Experiment driver
# ---------------------------------------------------------------------------

def run_experiment(exp):
    """Dispatch one experiment; writes artifacts plus manifest, returns paths."""
    t0 = time.time()
    out = Path(exp.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    if exp.kind in ("se", "rate", "mi", "ber"):
        config = SystemConfig.from_dict(exp.config)
        if exp.kind == "se":
            outputs += _run_se(exp, config, out)
        elif exp.kind == "rate":
            outputs += _run_rate(exp, config, out)
        elif exp.kind == "mi":
            outputs += _run_mi(exp, config, out)
        else:
            outputs += _run_ber(exp, config, out)
    elif exp.kind in ("couple-se", "asc"):
        outputs += _run_coupled(exp, out)
    write_manifest(out, exp.kind, exp.config, exp.seed, outputs, time.time() - t0)
    return outputs


def make_psi_curve(code, constellation, delta, sigma2, seed=0, workers=1,
                   trials=16):
    """Decoder transfer curve: exact mmse grid for uncoded, MC otherwise."""
    grid = default_rho_grid(delta, sigma2)
    if code.kind == "uncoded":
        vals = np.array([mmse_scalar(constellation, r) for r in grid])
        rho = np.concatenate(([0.0], grid))
        vals = np.concatenate(([1.0], vals))
        err = np.zeros_like(vals)
    else:
        rho, vals, err = psi_estimate(code, constellation, grid, trials=trials,
                                      seed=seed, workers=workers)
    tail = np.vectorize(lambda r: mmse_scalar(constellation, r))
    return TransferCurve(axis="rho", knots=rho, values=vals, stderr=err,
                         tail=tail)


def _psi_for_config(config, seed, workers=1):
    code = code_from_spec(config.code)
    constellation = constellation_by_name(config.constellation)
    return code, make_psi_curve(code, constellation, config.delta,
                                config.sigma2, seed=seed, workers=workers)


def _phi_for_config(config, seed):
    channel = config.make_channel()
    from .model import ClipChannel
    if isinstance(channel, ClipChannel) and channel.is_awgn:
        return PhiAwgn(config.delta, config.sigma2), None
    curve = varphi_curve(config.delta, channel, seed=seed, method="quadrature")
    from .evolve import PhiCurve
    return PhiCurve(curve), curve

def _run_se(exp, config, out):
    from .evolve import potential_report
    code, psi = _psi_for_config(config, exp.seed, exp.threads)
    phi, curve = _phi_for_config(config, exp.seed)
    fp = se_fixed_point(phi, psi)
    rows = [(r, float(psi(r)), float(phi.inverse(r)),
             float(psi.stderr[i]) if psi.stderr is not None else 0.0)
            for i, r in enumerate(psi.knots)]
    p1 = write_csv(out / "transfer.csv", ["rho", "psi", "phi_inv", "stderr"], rows)
    pot = potential_report(phi, psi)
    p3 = write_csv(out / "potential.csv", ["v", "u"],
                   list(zip(pot.v_grid, pot.u)))
    report = {
        "rho_star": fp.rho_star, "v_star": fp.v_star,
        "error_free": fp.error_free, "converged": fp.converged,
        "intersections": [[r, v] for r, v in fp.intersections],
        "potential_minimizer_v": pot.minimizer_v,
        "snr_db": config.snr_db, "delta": config.delta,
    }
    p2 = out / "se_report.json"
    with open(p2, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    return [p1, str(p2), p3]


def _run_rate(exp, config, out):
    from .evolve import area_rate_report, mutual_info_channel
    constellation = constellation_by_name(config.constellation)
    channel = config.make_channel()
    from .model import ClipChannel
    is_awgn = isinstance(channel, ClipChannel) and channel.is_awgn
    rep = area_rate_report(config.delta, config.sigma2,
                           constellation=constellation,
                           channel=None if is_awgn else channel)
    d = rep.to_dict()
    d["r_ac_bits"] = rep.r_ac / math.log(2.0)
    d["c_g_bits"] = rep.c_g / math.log(2.0)
    path = out / "rate.json"
    with open(path, "w") as fh:
        json.dump(d, fh, indent=2, sort_keys=True)
    return [str(path)]


def _run_mi(exp, config, out):
    from .evolve import mi_identity_check, mutual_info_channel
    channel = config.make_channel()
    report = {
        "i_yx_nats": mutual_info_channel(channel),
        "identity_max_dev": mi_identity_check(channel, [0.3, 0.6, 0.9]),
        "snr_db": config.snr_db,
    }
    path = out / "mi.json"
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    return [str(path)]


def _run_ber(exp, config, out):
    points = ber_sweep(config, exp.sweep, workers=exp.threads)
    cols, rows = ber_points_rows(points)
    p1 = write_csv(out / "ber.csv", cols, rows)
    # one traced frame (first sweep point) for the per-iteration artifact
    sigma2 = 10.0 ** (-float(exp.sweep[0]) / 10.0)
    _, _, _, tr = _frame_impl(config, sigma2, 0, 0)
    p3 = write_csv(out / "trace.csv", ["t", "mse", "rho", "v"], list(tr.rows()))
    code = code_from_spec(config.code)
    constellation = constellation_by_name(config.constellation)
    r_ac_bits = code.rate / config.delta
    thresholds = [
        {"label": "Gaussian capacity", "snr_db": gaussian_threshold_db(r_ac_bits)},
    ]
    if r_ac_bits < math.log2(len(constellation.points)):
        thresholds.append({"label": "%s capacity" % constellation.name.upper(),
                           "snr_db": capacity_threshold_db(r_ac_bits, constellation)})
    sidecar = {
        "rate_bits_per_use": r_ac_bits,
        "thresholds": thresholds,
    }
    p2 = out / "ber_thresholds.json"
    with open(p2, "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
    return [p1, str(p2), p3]


def _parse_coupled_config(raw):
    raw = dict(raw)
    asc_cfg = asc_mod.AscConfig.from_dict(raw.pop("asc"))
    code = code_from_spec(raw.pop("code", {"kind": "uncoded"}))
    constellation = constellation_by_name(raw.pop("constellation", "bpsk"))
    channel_spec = raw.pop("channel", {"kind": "awgn"})
    t_max = int(raw.pop("t_max", 80))
    extra = {}
    for key in ("min_errors", "max_frames", "boundary"):
        if key in raw:
            extra[key] = raw.pop(key)
    if raw:
        raise ValueError("unknown coupled config keys: %s" % ", ".join(sorted(raw)))
    return asc_cfg, code, constellation, channel_spec, t_max, extra


def _run_coupled(exp, out):
    asc_cfg, code, constellation, channel_spec, t_max, extra = \
        _parse_coupled_config(exp.config)
    outputs = []
    if exp.kind == "couple-se":
        eff_delta = asc_cfg.kept_rows / asc_cfg.n
        sigma2_ref = 10.0 ** (-float(exp.sweep[0]) / 10.0)
        psi = make_psi_curve(code, constellation, eff_delta, sigma2_ref,
                             seed=exp.seed, workers=exp.threads)
        rows = []
        boundary = extra.get("boundary", "absent-blocks")
        for snr_db in exp.sweep:
            sigma2 = 10.0 ** (-snr_db / 10.0)
            phi = PhiAwgn(eff_delta, sigma2)
            res = coupled_se(asc_cfg.k, asc_cfg.w, phi, psi, boundary=boundary,
                             record_history=True)
            for t, v in enumerate(res.history):
                for j, vj in enumerate(v):
                    rows.append((snr_db, t + 1, j, vj))
        outputs.append(write_csv(out / "couple_se.csv",
                                 ["snr_db", "t", "block", "v"], rows))
        return outputs

    points = asc_ber_sweep(asc_cfg, code, constellation, channel_spec,
                           exp.sweep, t_max=t_max,
                           min_errors=int(extra.get("min_errors", 100)),
                           max_frames=int(extra.get("max_frames", 50)),
                           workers=exp.threads)
    cols, rows = ber_points_rows(points)
    outputs.append(write_csv(out / "asc_ber.csv", cols, rows))
    # per-section MSE trajectory of one traced frame (first sweep point)
    bundle = (asc_cfg, code, constellation, channel_spec, t_max)
    _, _, _, trace = _asc_frame_impl(bundle, 10.0 ** (-float(exp.sweep[0]) / 10.0),
                                     0, 0)
    sec_rows = [(t + 1, k, trace.section_mse[t][k])
                for t in range(len(trace.section_mse))
                for k in range(asc_cfg.k)]
    outputs.append(write_csv(out / "section_mse.csv", ["t", "section", "mse"],
                             sec_rows))
    eff = 1.0 / (1.0 - asc_cfg.puncture_fraction)
    r_ac_bits = code.rate / (asc_cfg.m / asc_cfg.n) * eff
    from .evolve import asc_rate
    sidecar = {
        "rate_bits_per_use": asc_rate(r_ac_bits, asc_cfg.k, asc_cfg.w),
        "thresholds": [
            {"label": "Gaussian capacity",
             "snr_db": gaussian_threshold_db(asc_rate(r_ac_bits, asc_cfg.k, asc_cfg.w))},
        ],
    }
    p2 = out / "ber_thresholds.json"
    with open(p2, "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
    outputs.append(str(p2))
    return outputs
