"""Core domain types: constellations, scalar channel laws and the system config.

Conventions used across the package:
  - unit signal power, snr = 1/sigma2, snr_db = -10*log10(sigma2)
  - all information quantities are computed in nats internally;
    the CLI converts to bits.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

LN2 = math.log(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)


def norm_pdf(x, loc=0.0, scale=1.0):
    z = (np.asarray(x, dtype=float) - loc) / scale
    return np.exp(-0.5 * z * z) / (_SQRT2PI * scale)


# ---------------------------------------------------------------------------
# Constellations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Constellation:
    """Equiprobable real constellation with unit average power."""

    points: tuple
    name: str = ""

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.size == 0:
            raise ValueError("constellation must have at least one point")
        power = float(np.mean(pts ** 2))
        if abs(power - 1.0) > 1e-12:
            raise ValueError("constellation power %.15g != 1" % power)
        object.__setattr__(self, "points", tuple(float(p) for p in pts))

    @property
    def is_symmetric(self):
        """True if s in S implies -s in S (QPSK/QAM-style constellations)."""
        pts = np.sort(np.asarray(self.points))
        return bool(np.allclose(pts, np.sort(-pts), atol=1e-12))

    def sample(self, rng, size):
        return rng.choice(np.asarray(self.points), size=size)


def bpsk():
    return Constellation(points=(1.0, -1.0), name="bpsk")


def pam4():
    # real part of 16-QAM, scaled to unit power
    s = 1.0 / math.sqrt(5.0)
    return Constellation(points=(-3.0 * s, -s, s, 3.0 * s), name="pam4")


_NAMED_CONSTELLATIONS = {"bpsk": bpsk, "pam4": pam4}


def constellation_by_name(name):
    try:
        return _NAMED_CONSTELLATIONS[name]()
    except KeyError:
        raise ValueError("unknown constellation %r" % (name,)) from None


# ---------------------------------------------------------------------------
# Clipping
# ---------------------------------------------------------------------------

def clip(x, z):
    """Saturate x to [-z, +z]. z = inf acts as the identity."""
    if not z > 0:
        raise ValueError("clip threshold must be positive")
    if math.isinf(z):
        return np.asarray(x, dtype=float) + 0.0
    return np.clip(x, -z, z)


def clipped_power(z):
    """E[clip(x, z)^2] for x ~ N(0,1), via the closed error-function form."""
    if math.isinf(z):
        return 1.0
    core = special.erf(z / math.sqrt(2.0)) - 2.0 * z * norm_pdf(z)
    tail = 2.0 * z * z * special.ndtr(-z)
    return float(core + tail)


def clipped_power_quadrature(z):
    """Quadrature cross-check of clipped_power (independent of the closed form)."""
    if math.isinf(z):
        return 1.0
    body = integrate.quad(lambda x: x * x * norm_pdf(x), -z, z, limit=200)[0]
    return body + 2.0 * z * z * special.ndtr(-z)


def clip_params_from_cr(cr_db):
    """Map a clipping ratio in dB to (Z, alpha) for unit-power input.

    Z = 10^(cr_db/20); alpha renormalizes alpha*clip(x) to unit power.
    """
    if isinstance(cr_db, float) and math.isnan(cr_db):
        raise ValueError("cr_db must not be NaN")
    if cr_db == -math.inf:
        raise ValueError("cr_db = -inf is not a valid clipping ratio")
    if cr_db == math.inf:
        return math.inf, 1.0
    z = 10.0 ** (cr_db / 20.0)
    alpha = 1.0 / math.sqrt(clipped_power(z))
    return z, alpha


# ---------------------------------------------------------------------------
# Scalar channel laws p(y|x)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClipChannel:
    """y = alpha*clip(x, Z) + n with n ~ N(0, sigma2); Z = inf is plain AWGN."""

    Z: float
    sigma2: float
    cr_db: float = math.inf
    alpha: float = 1.0

    def __post_init__(self):
        if not self.Z > 0:
            raise ValueError("Z must be positive")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")

    @classmethod
    def from_cr(cls, cr_db, sigma2):
        z, alpha = clip_params_from_cr(cr_db)
        return cls(Z=z, sigma2=sigma2, cr_db=cr_db, alpha=alpha)

    @property
    def is_awgn(self):
        return math.isinf(self.Z)

    def front_end(self, x):
        """alpha * clip(x): the deterministic part of the channel."""
        return self.alpha * clip(x, self.Z)

    def transmit(self, x, rng):
        return self.front_end(x) + math.sqrt(self.sigma2) * rng.standard_normal(np.shape(x))


def awgn(sigma2):
    return ClipChannel(Z=math.inf, sigma2=sigma2)


@dataclass(frozen=True)
class QuantChannel:
    """y = f(x + n): additive noise followed by a scalar quantizer.

    Cell i is (thresholds[i-1], thresholds[i]] with reproduction value levels[i];
    the outermost thresholds are -inf/+inf implicitly.
    """

    thresholds: tuple
    levels: tuple
    sigma2: float

    def __post_init__(self):
        thr = np.asarray(self.thresholds, dtype=float)
        lev = np.asarray(self.levels, dtype=float)
        if lev.size != thr.size + 1:
            raise ValueError("need len(levels) == len(thresholds) + 1")
        if thr.size and not np.all(np.diff(thr) > 0):
            raise ValueError("thresholds must be strictly increasing")
        lo = np.concatenate(([-math.inf], thr))
        hi = np.concatenate((thr, [math.inf]))
        if not np.all((lev > lo) & (lev <= hi) | ((lev >= lo) & (lev < hi))):
            raise ValueError("each reproduction value must lie inside its cell")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        object.__setattr__(self, "thresholds", tuple(float(t) for t in thr))
        object.__setattr__(self, "levels", tuple(float(v) for v in lev))

    @classmethod
    def uniform(cls, n_levels, step, sigma2):
        """Uniform midrise quantizer with n_levels cells of width `step`."""
        if n_levels < 2:
            raise ValueError("need at least two levels")
        edges = step * (np.arange(1, n_levels) - n_levels / 2.0)
        levels = step * (np.arange(n_levels) - (n_levels - 1) / 2.0)
        return cls(thresholds=tuple(edges), levels=tuple(levels), sigma2=sigma2)

    def cell_of_output(self, y):
        """Cell indices for observed reproduction values; rejects unknown values."""
        lev = np.asarray(self.levels)
        y = np.asarray(y, dtype=float)
        idx = np.argmin(np.abs(y[..., None] - lev), axis=-1)
        if not np.allclose(lev[idx], y, rtol=0.0, atol=1e-9):
            raise ValueError("observation is not a quantizer reproduction value")
        return idx

    def cell_bounds(self, idx):
        thr = np.asarray(self.thresholds)
        lo = np.concatenate(([-math.inf], thr))[idx]
        hi = np.concatenate((thr, [math.inf]))[idx]
        return lo, hi

    def quantize(self, u):
        idx = np.searchsorted(np.asarray(self.thresholds), u, side="left")
        return np.asarray(self.levels)[idx]

    def transmit(self, x, rng):
        return self.quantize(x + math.sqrt(self.sigma2) * rng.standard_normal(np.shape(x)))


def likelihood(channel, y, x):
    """p(y|x): density for the clip channel, cell mass for the quantizer."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if isinstance(channel, ClipChannel):
        mu = channel.front_end(x)
        return norm_pdf(y, loc=mu, scale=math.sqrt(channel.sigma2))
    if isinstance(channel, QuantChannel):
        idx = channel.cell_of_output(y)
        lo, hi = channel.cell_bounds(idx)
        sig = math.sqrt(channel.sigma2)
        return special.ndtr((hi - x) / sig) - special.ndtr((lo - x) / sig)
    raise TypeError("unsupported channel type %r" % type(channel).__name__)


def channel_from_spec(spec, sigma2):
    """Build a channel from a JSON-style dict, e.g. {"kind": "clip", "cr_db": 1.0}."""
    spec = dict(spec)
    kind = spec.pop("kind", "awgn")
    if kind == "awgn":
        _reject_unknown(spec, ())
        return awgn(sigma2)
    if kind == "clip":
        cr_db = spec.pop("cr_db")
        _reject_unknown(spec, ())
        return ClipChannel.from_cr(float(cr_db), sigma2)
    if kind == "quantize":
        n_levels = int(spec.pop("n_levels", 4))
        step = float(spec.pop("step", 1.0))
        _reject_unknown(spec, ())
        return QuantChannel.uniform(n_levels, step, sigma2)
    raise ValueError("unknown channel kind %r" % kind)


def _reject_unknown(extra, allowed):
    unknown = set(extra) - set(allowed)
    if unknown:
        raise ValueError("unknown config keys: %s" % ", ".join(sorted(unknown)))


# ---------------------------------------------------------------------------
# System configuration
# ---------------------------------------------------------------------------

_CONFIG_KEYS = {
    "n", "m", "delta", "sigma2", "snr_db", "constellation", "code",
    "channel", "seed", "t_max", "operator", "damping", "rho_mode",
}


@dataclass(frozen=True)
class SystemConfig:
    """One uncoupled compressed-coding experiment: y = f(Ac) + n."""

    n: int
    m: int
    sigma2: float
    constellation: str = "bpsk"
    code: dict = field(default_factory=lambda: {"kind": "uncoded"})
    channel: dict = field(default_factory=lambda: {"kind": "awgn"})
    operator: dict = field(default_factory=lambda: {"kind": "dense-gaussian"})
    seed: int = 0
    t_max: int = 50
    damping: float = 1.0
    rho_mode: str = "formula"

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError("dimensions must be >= 1")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")

    @property
    def delta(self):
        return self.m / self.n

    @property
    def snr_db(self):
        return -10.0 * math.log10(self.sigma2)

    def make_channel(self):
        return channel_from_spec(self.channel, self.sigma2)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - _CONFIG_KEYS
        if unknown:
            raise ValueError("unknown config keys: %s" % ", ".join(sorted(unknown)))
        if "sigma2" in d and "snr_db" in d:
            implied = 10.0 ** (-float(d.pop("snr_db")) / 10.0)
            if not math.isclose(implied, d["sigma2"], rel_tol=1e-9):
                raise ValueError("sigma2 and snr_db disagree")
        elif "snr_db" in d:
            d["sigma2"] = 10.0 ** (-float(d.pop("snr_db")) / 10.0)
        n, m = int(d.pop("n")), int(d.pop("m"))
        if "delta" in d:
            delta = float(d.pop("delta"))
            if delta != m / n:
                raise ValueError("delta %r != m/n" % delta)
        return cls(n=n, m=m, **d)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return {
            "n": self.n, "m": self.m, "delta": self.delta, "sigma2": self.sigma2,
            "snr_db": self.snr_db, "constellation": self.constellation,
            "code": dict(self.code), "channel": dict(self.channel),
            "operator": dict(self.operator), "seed": self.seed,
            "t_max": self.t_max, "damping": self.damping, "rho_mode": self.rho_mode,
        }
