"""Posterior-mean denoisers under the AWGN proxy model r = c + rho^{-1/2} w,
scalar MMSE curves, and Monte Carlo estimation of the decoder transfer
function psi(rho).

All denoisers here are Bayes-exact for their code family, and all are
exponential families in r, so the average divergence <eta'> equals
rho * (average posterior variance) exactly; a Monte Carlo probe estimator
is provided to validate that identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special
from scipy.linalg import hadamard as _hadamard_matrix

from .model import Constellation, bpsk
from .sensing import is_power_of_2


@dataclass(frozen=True)
class DenoiseResult:
    mean: np.ndarray
    avg_var: float
    divergence: float


# ---------------------------------------------------------------------------
# Code specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CodeSpec:
    """FEC code attached to the NLE: uncoded, repetition(L), or the
    bi-orthogonal Hadamard block code of length n (rows of H_n and their
    negations, 2n codewords)."""

    kind: str = "uncoded"
    param: int = 0

    def __post_init__(self):
        if self.kind == "uncoded":
            pass
        elif self.kind == "repetition":
            if self.param < 1:
                raise ValueError("repetition factor must be >= 1")
        elif self.kind == "hadamard-block":
            if not is_power_of_2(self.param) or self.param < 2:
                raise ValueError("hadamard-block length must be a power of two >= 2")
        else:
            raise ValueError("unknown code kind %r" % self.kind)

    @property
    def block_len(self):
        return 1 if self.kind == "uncoded" else self.param

    @property
    def bits_per_block(self):
        if self.kind == "uncoded":
            return 1
        if self.kind == "repetition":
            return 1
        return 1 + int(round(math.log2(self.param)))

    @property
    def rate(self):
        return self.bits_per_block / self.block_len

    def encode(self, bits):
        """Map information bits to +-1 code symbols."""
        bits = np.asarray(bits, dtype=int)
        k = self.bits_per_block
        if bits.size % k:
            raise ValueError("bit count must be a multiple of %d" % k)
        if self.kind == "uncoded":
            return 1.0 - 2.0 * bits
        if self.kind == "repetition":
            return np.repeat(1.0 - 2.0 * bits, self.param)
        n = self.param
        blocks = bits.reshape(-1, k)
        sign = 1.0 - 2.0 * blocks[:, 0]
        idx = np.zeros(len(blocks), dtype=int)
        for b in range(k - 1):
            idx = (idx << 1) | blocks[:, 1 + b]
        h = hadamard_codebook(n)
        return (sign[:, None] * h[idx]).ravel()

    def hard_bits(self, estimate):
        """Hard decisions back to information bits (block-ML on the estimate)."""
        est = np.asarray(estimate, dtype=float)
        if self.kind == "uncoded":
            return (est < 0).astype(int)
        if self.kind == "repetition":
            s = est.reshape(-1, self.param).sum(axis=1)
            return (s < 0).astype(int)
        n = self.param
        k = self.bits_per_block
        h = hadamard_codebook(n)
        corr = est.reshape(-1, n) @ h.T
        idx = np.argmax(np.abs(corr), axis=1)
        sign = corr[np.arange(len(idx)), idx] < 0
        bits = np.empty((len(idx), k), dtype=int)
        bits[:, 0] = sign
        for b in range(k - 1):
            bits[:, 1 + b] = (idx >> (k - 2 - b)) & 1
        return bits.ravel()

    def random_codeword(self, rng, n_symbols):
        blk = self.block_len
        if n_symbols % blk:
            raise ValueError("symbol count must be a multiple of the block length")
        bits = rng.integers(0, 2, size=(n_symbols // blk) * self.bits_per_block)
        return bits, self.encode(bits)


def hadamard_codebook(n):
    return _hadamard_matrix(n).astype(float)


def code_from_spec(spec):
    spec = dict(spec)
    kind = spec.pop("kind", "uncoded")
    if kind == "uncoded":
        param = 0
    elif kind == "repetition":
        param = int(spec.pop("l"))
    elif kind == "hadamard-block":
        param = int(spec.pop("n"))
    else:
        raise ValueError("unknown code kind %r" % kind)
    if spec:
        raise ValueError("unknown code keys: %s" % ", ".join(sorted(spec)))
    return CodeSpec(kind=kind, param=param)


# ---------------------------------------------------------------------------
# Denoisers
# ---------------------------------------------------------------------------

def denoise_bpsk(r, rho):
    """Posterior mean tanh(rho*r) for c in {+1,-1} under r = c + rho^{-1/2} w."""
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    r = np.asarray(r, dtype=float)
    mean = np.tanh(rho * r)
    var = 1.0 - mean ** 2
    avg_var = float(np.mean(var))
    return DenoiseResult(mean=mean, avg_var=avg_var, divergence=rho * avg_var)


def denoise_constellation(constellation, r, rho):
    """Symbol-wise posterior mean for an arbitrary equiprobable constellation."""
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    r = np.asarray(r, dtype=float)
    pts = np.asarray(constellation.points)
    # posterior weights prop. to exp(rho*(r*s - s^2/2)), stabilized per entry
    expo = rho * (np.outer(r, pts) - 0.5 * pts ** 2)
    expo -= expo.max(axis=1, keepdims=True)
    w = np.exp(expo)
    w /= w.sum(axis=1, keepdims=True)
    mean = w @ pts
    second = w @ pts ** 2
    avg_var = float(np.mean(second - mean ** 2))
    return DenoiseResult(mean=mean, avg_var=avg_var, divergence=rho * avg_var)


def denoise_block_app(code, r, rho):
    """Exact symbol-wise APP means for a block code by codebook enumeration.

    For hadamard-block codes the 2n codeword correlations come from a
    single Hadamard product per block (soft-output fast transform).
    """
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    r = np.asarray(r, dtype=float)
    blk = code.block_len
    if r.size % blk:
        raise ValueError("input length %d not divisible by block length %d"
                         % (r.size, blk))
    if code.kind == "uncoded":
        return denoise_bpsk(r, rho)
    if code.kind == "repetition":
        s = r.reshape(-1, blk).sum(axis=1)
        mb = np.tanh(rho * s)
        mean = np.repeat(mb, blk)
        avg_var = float(np.mean(1.0 - mb ** 2))
        return DenoiseResult(mean=mean, avg_var=avg_var, divergence=rho * avg_var)

    n = code.param
    h = hadamard_codebook(n)
    blocks = r.reshape(-1, n)
    m = rho * (blocks @ h.T)                  # codeword correlations, +rows
    mstar = np.abs(m).max(axis=1, keepdims=True)
    a = np.exp(m - mstar)                     # weights of +h_i
    b = np.exp(-m - mstar)                    # weights of -h_i
    zsum = (a + b).sum(axis=1, keepdims=True)
    w = (a - b) / zsum
    mean = (w @ h).ravel()
    avg_var = float(np.mean(1.0 - mean ** 2))
    return DenoiseResult(mean=mean, avg_var=avg_var, divergence=rho * avg_var)


class Denoiser:
    """Callable denoiser bound to a code (and constellation for uncoded use)."""

    def __init__(self, code=None, constellation=None):
        self.code = code if code is not None else CodeSpec()
        self.constellation = constellation if constellation is not None else bpsk()

    @property
    def block_len(self):
        return self.code.block_len

    def __call__(self, r, rho):
        if self.code.kind == "uncoded":
            if self.constellation.name == "bpsk":
                return denoise_bpsk(r, rho)
            return denoise_constellation(self.constellation, r, rho)
        return denoise_block_app(self.code, r, rho)


def divergence_probe(denoiser, r, rho, seed=0, eps=1e-6):
    """Monte Carlo estimate of <eta'> via a random directional derivative.

    Validation mode for the rho*avg_var identity used by the Onsager term.
    """
    r = np.asarray(r, dtype=float)
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(r.shape)
    d = denoiser(r + eps * u, rho).mean - denoiser(r - eps * u, rho).mean
    return float(u @ d / (2.0 * eps * r.size))


# ---------------------------------------------------------------------------
# Scalar MMSE curves
# ---------------------------------------------------------------------------

_GH_NODES = 201

# probabilists' Hermite rule: integrates f against the standard normal pdf
_GH_X, _GH_W = np.polynomial.hermite_e.hermegauss(_GH_NODES)
_GH_W = _GH_W / _GH_W.sum()


def mmse_scalar(constellation, rho):
    """MMSE for detecting one constellation symbol from AWGN at SNR rho.

    Gauss-Hermite evaluation of E[Var(c|r)] = 1 - E[E(c|r)^2] under
    r = c + rho^{-1/2} w.
    """
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    if rho == 0:
        return 1.0
    pts = np.asarray(constellation.points)
    sd = 1.0 / math.sqrt(rho)
    # r-grid: one GH cloud per transmitted point
    r = pts[:, None] + sd * _GH_X[None, :]
    expo = rho * (r[..., None] * pts - 0.5 * pts ** 2)
    expo -= expo.max(axis=-1, keepdims=True)
    w = np.exp(expo)
    w /= w.sum(axis=-1, keepdims=True)
    post_mean = w @ pts
    # average over transmitted points of E[posterior mean^2]
    e_m2 = float(np.mean((post_mean ** 2) @ _GH_W))
    return max(1.0 - e_m2, 0.0)


def mmse_bpsk(rho):
    """BPSK MMSE via the tanh integral 1 - E[tanh(rho - sqrt(rho) x)]."""
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    if rho == 0:
        return 1.0
    vals = np.tanh(rho - math.sqrt(rho) * _GH_X)
    return float(1.0 - vals @ _GH_W)


def bpsk_capacity_nats(rho):
    """I(c; c + rho^{-1/2} w) for BPSK, in nats (direct entropy quadrature)."""
    if rho == 0:
        return 0.0
    # h(r) - h(r|c) with r|c=1 ~ N(1, 1/rho); by symmetry condition on c=+1
    arg = -2.0 * rho - 2.0 * math.sqrt(rho) * _GH_X
    vals = np.logaddexp(0.0, arg)
    return float(math.log(2.0) - vals @ _GH_W)


def constellation_capacity_nats(constellation, rho):
    """I(c; c + rho^{-1/2} w) in nats for an equiprobable constellation."""
    if rho == 0:
        return 0.0
    pts = np.asarray(constellation.points)
    sd = 1.0 / math.sqrt(rho)
    r = pts[:, None] + sd * _GH_X[None, :]
    # log p(r) up to the common Gaussian factor: logsumexp over points
    expo = rho * (r[..., None] * pts - 0.5 * pts ** 2)
    lse = special.logsumexp(expo, axis=-1) - math.log(len(pts))
    own = rho * (r * pts[:, None] - 0.5 * pts[:, None] ** 2)
    kl = (own - lse) @ _GH_W
    return float(np.mean(kl))


def mmse_tail_integral(rho_max):
    """Analytic upper estimate of int_{rho_max}^inf mmse(B, rho) drho,
    from mmse(B, rho) <= 4 Q(sqrt(rho))."""
    a = math.sqrt(rho_max)
    q = special.ndtr(-a)
    phi = math.exp(-0.5 * a * a) / math.sqrt(2.0 * math.pi)
    return float(4.0 * ((1.0 - a * a) * q + a * phi))


# ---------------------------------------------------------------------------
# Transfer-curve estimation
# ---------------------------------------------------------------------------

def default_rho_grid(delta, sigma2, points=64):
    """Log-spaced SNR grid covering [1e-3, 50*max(1, delta/sigma2)]."""
    rho_max = 50.0 * max(1.0, delta / sigma2)
    return np.logspace(-3.0, math.log10(rho_max), points)


def psi_estimate(code, constellation, rho_grid, trials, seed,
                 symbols_per_trial=4096, workers=None):
    """Monte Carlo psi(rho) = E||c - eta(c + rho^{-1/2} w)||^2 / N.

    Returns (rho, psi, stderr) with rho = [0, *rho_grid]; the curve is forced
    monotone nonincreasing by an isotonic pass. Trials use common random
    numbers across the grid and a fixed reduction order, so the output is
    seed-deterministic regardless of worker count.
    """
    rho_grid = np.asarray(rho_grid, dtype=float)
    if rho_grid.size == 0:
        raise ValueError("empty rho grid")
    if np.any(np.diff(rho_grid) <= 0):
        raise ValueError("rho grid must be sorted ascending")
    if trials < 1:
        raise ValueError("need at least one trial")
    den = Denoiser(code, constellation)
    blk = den.block_len
    nsym = symbols_per_trial - symbols_per_trial % blk

    def one_trial(t):
        rng = np.random.default_rng(np.random.SeedSequence([seed, t]))
        if code.kind == "uncoded":
            c = constellation.sample(rng, nsym)
        else:
            _, c = code.random_codeword(rng, nsym)
        w = rng.standard_normal(nsym)
        out = np.empty(rho_grid.size)
        for i, rho in enumerate(rho_grid):
            r = c + w / math.sqrt(rho)
            out[i] = np.mean((den(r, rho).mean - c) ** 2)
        return out

    if workers and workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(one_trial, range(trials)))
    else:
        rows = [one_trial(t) for t in range(trials)]
    mat = np.stack(rows)
    psi = mat.mean(axis=0)
    stderr = mat.std(axis=0, ddof=1) / math.sqrt(trials) if trials > 1 \
        else np.zeros_like(psi)

    rho = np.concatenate(([0.0], rho_grid))
    psi = np.concatenate(([1.0], psi))
    stderr = np.concatenate(([0.0], stderr))
    iso = -optimize.isotonic_regression(-psi).x      # enforce nonincreasing
    return rho, np.clip(iso, 0.0, 1.0), stderr
