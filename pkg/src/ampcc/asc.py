"""Analog spatially coupled compressed coding: banded encoder, channel,
coupled AMP/GAMP decoder, random puncturing and the multiuser arrangement.

K codeword sections are spread over K+W-1 measurement blocks; block j sums
the matrices A_{j+1-k,k} applied to sections k in [j-W+1, j]. The default
scaling 1/sqrt(W) keeps interior block power at one, which is the
normalization under which the coupled vector SE holds verbatim.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import ClipChannel, channel_from_spec
from .recon import output_mmse
from .sensing import build_operator

_ROLE_MATRIX = 101
_ROLE_PERM = 202
_ROLE_NOISE = 303
_ROLE_PUNCT = 404


@dataclass(frozen=True)
class AscConfig:
    """Coupled-system geometry plus the per-section compression settings."""

    k: int
    w: int
    n: int                      # symbols per section
    m: int                      # measurements per block (before puncturing)
    scaling: str = "power-normalized"   # or "paper-literal"
    mode: str = "shared"                # shared | interleaved | multiuser
    operator: dict = field(default_factory=lambda: {"kind": "subsampled-hadamard"})
    puncture_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.k < 1 or self.w < 1:
            raise ValueError("need K >= 1 and W >= 1")
        if self.scaling not in ("power-normalized", "paper-literal"):
            raise ValueError("unknown scaling %r" % self.scaling)
        if self.mode not in ("shared", "interleaved", "multiuser"):
            raise ValueError("unknown mode %r" % self.mode)
        if not 0.0 <= self.puncture_fraction < 1.0:
            raise ValueError("puncture fraction must be in [0, 1)")

    @property
    def n_blocks(self):
        return self.k + self.w - 1

    @property
    def scale(self):
        return 1.0 / math.sqrt(self.w) if self.scaling == "power-normalized" \
            else 1.0 / self.w

    @property
    def kept_rows(self):
        return self.m - int(round(self.puncture_fraction * self.m))

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {"k", "w", "n", "m", "scaling", "mode", "operator",
                 "puncture_fraction", "seed"}
        unknown = set(d) - known
        if unknown:
            raise ValueError("unknown asc config keys: %s" % ", ".join(sorted(unknown)))
        return cls(**d)


def _rng(cfg, role, *idx):
    return np.random.default_rng(np.random.SeedSequence([cfg.seed, role, *idx]))


@dataclass(frozen=True)
class SectionLink:
    """One (block j, section k) edge: operator plus optional interleaver."""

    op: object
    perm: np.ndarray = None

    def forward(self, c):
        return self.op.forward(c[self.perm] if self.perm is not None else c)

    def adjoint(self, w):
        u = self.op.adjoint(w)
        if self.perm is None:
            return u
        out = np.empty_like(u)
        out[self.perm] = u
        return out


class AscCodebook:
    """All per-(w, k) operators and interleavers for one config.

    Matrix and permutation seeds are derived from the master seed by a
    counter construction, so encoder and decoder can regenerate them
    independently; `checksum` guards against seed mismatch.
    """

    def __init__(self, cfg):
        self.cfg = cfg
        self.links = {}
        keep_masks = {}
        for j in range(cfg.n_blocks):
            if cfg.puncture_fraction > 0.0:
                rng = _rng(cfg, _ROLE_PUNCT, j)
                keep_masks[j] = np.sort(rng.permutation(cfg.m)[:cfg.kept_rows])
            else:
                keep_masks[j] = None
        self.keep_masks = keep_masks
        for k in range(cfg.k):
            for w in range(cfg.w):
                j = k + w
                op = build_operator(cfg.operator, cfg.m, cfg.n,
                                    np.random.SeedSequence([cfg.seed, _ROLE_MATRIX, w, k]))
                if keep_masks[j] is not None:
                    op = op.take_rows(keep_masks[j])
                perm = None
                if cfg.mode in ("interleaved", "multiuser"):
                    perm = _rng(cfg, _ROLE_PERM, j, k).permutation(cfg.n)
                self.links[(j, k)] = SectionLink(op=op, perm=perm)

    def sections_of_block(self, j):
        return [k for k in range(self.cfg.k) if 0 <= j - k < self.cfg.w]

    def blocks_of_section(self, k):
        return list(range(k, k + self.cfg.w))

    def block_rows(self, j):
        return self.links[(j, self.sections_of_block(j)[0])].op.m

    def checksum(self):
        val = 0
        for key in sorted(self.links):
            val = (val * 1000003 + self.links[key].op.checksum()) % (1 << 61)
        return val


def asc_encode(codewords, cfg, codebook=None):
    """Blocks x_1..x_{K+W-1}: x_j = scale * sum_k A_{j+1-k,k} c_k.

    Returns (blocks, codebook); reuse the codebook for decoding.
    """
    if len(codewords) != cfg.k:
        raise ValueError("need K = %d codeword sections" % cfg.k)
    for c in codewords:
        if np.shape(c) != (cfg.n,):
            raise ValueError("each section must have length N = %d" % cfg.n)
    if codebook is None:
        codebook = AscCodebook(cfg)
    blocks = []
    for j in range(cfg.n_blocks):
        acc = np.zeros(codebook.block_rows(j))
        for k in codebook.sections_of_block(j):
            # scale each contribution (not the sum) so that the multiuser
            # superposition, which adds per-user scaled signals, is bit-equal
            acc += cfg.scale * codebook.links[(j, k)].forward(
                np.asarray(codewords[k], dtype=float))
        blocks.append(acc)
    return blocks, codebook


def asc_transmit(blocks, channel, seed=0):
    """Per-block channel use: y_j = alpha*clip(x_j) + n_j (AWGN when Z=inf)."""
    out = []
    for j, x in enumerate(blocks):
        rng = np.random.default_rng(np.random.SeedSequence([seed, _ROLE_NOISE, j]))
        out.append(channel.transmit(np.asarray(x, dtype=float), rng))
    return out


def puncture(blocks, fraction, seed, m_full=None):
    """Randomly drop a fraction of the measurements of each block.

    Returns (reduced blocks, per-block kept-row indices). The effective
    compression rate delta and R_AC rescale by 1/(1 - fraction).
    """
    if not 0.0 <= fraction < 1.0:
        raise ValueError("fraction must be in [0, 1)")
    kept_blocks, masks = [], []
    for j, x in enumerate(blocks):
        x = np.asarray(x)
        m = m_full if m_full is not None else x.shape[0]
        keep_n = m - int(round(fraction * m))
        if keep_n < 1:
            raise ValueError("puncturing would leave no measurements")
        cfg_rng = np.random.default_rng(np.random.SeedSequence([seed, _ROLE_PUNCT, j]))
        keep = np.sort(cfg_rng.permutation(m)[:keep_n])
        masks.append(keep)
        kept_blocks.append(x[keep])
    return kept_blocks, masks


@dataclass
class AscTrace:
    """Per-iteration per-section diagnostics of a coupled decode."""

    section_mse: list = field(default_factory=list)   # arrays of length K
    rho: list = field(default_factory=list)           # arrays of length K
    v_blocks: list = field(default_factory=list)      # arrays of length K+W-1
    iterations: int = 0
    converged: bool = False


def asc_decode(observations, cfg, denoiser, channel, t_max=100, c_true=None,
               codebook=None, checksum=None, stop_tol=1e-10):
    """Coupled AMP (AWGN) / GAMP (general channel) over the banded operator.

    Per-section SNRs rho_k aggregate the W observing blocks; per-block
    residuals carry their own Onsager/variance bookkeeping. At K = W = 1
    with shared mode this performs the recon-module algorithms verbatim
    (it delegates to them).
    """
    if codebook is None:
        codebook = AscCodebook(cfg)
    if checksum is not None and codebook.checksum() != checksum:
        raise ValueError("operator checksum mismatch: encoder/decoder seeds differ")
    if len(observations) != cfg.n_blocks:
        raise ValueError("need %d observation blocks" % cfg.n_blocks)

    if cfg.k == 1 and cfg.w == 1 and cfg.mode == "shared":
        from .recon import amp_run, gamp_run
        link = codebook.links[(0, 0)]
        y = np.asarray(observations[0], dtype=float) / cfg.scale
        if isinstance(channel, ClipChannel) and channel.is_awgn:
            scaled = ClipChannel(Z=channel.Z, sigma2=channel.sigma2 / cfg.scale ** 2,
                                 cr_db=channel.cr_db, alpha=channel.alpha)
            c_hat, tr = amp_run(y, link.op, denoiser, scaled.sigma2, t_max,
                                c_true=c_true, stop_tol=stop_tol)
        else:
            if cfg.scale != 1.0:
                raise ValueError("nonlinear channel requires scale 1 at K=W=1")
            c_hat, tr = gamp_run(np.asarray(observations[0], dtype=float), link.op,
                                 denoiser, channel, t_max, c_true=c_true,
                                 stop_tol=stop_tol)
        trace = AscTrace(section_mse=[np.array([m]) for m in tr.mse],
                         rho=[np.array([r]) for r in tr.rho],
                         v_blocks=[np.array([v]) for v in tr.v],
                         iterations=tr.iterations, converged=tr.converged)
        return [c_hat], trace

    K, W, J = cfg.k, cfg.w, cfg.n_blocks
    s = cfg.scale
    s2 = s * s
    awgn_path = isinstance(channel, ClipChannel) and channel.is_awgn
    sigma2 = channel.sigma2

    y = [np.asarray(obs, dtype=float) for obs in observations]
    deltas = np.array([codebook.block_rows(j) / cfg.n for j in range(J)])
    c_hat = [np.zeros(cfg.n) for _ in range(K)]
    v_k = np.ones(K)
    z = [np.zeros_like(y[j]) for j in range(J)]       # AMP residuals
    sv = [np.zeros_like(y[j]) for j in range(J)]      # GAMP s vectors
    tau_prev = None
    trace = AscTrace()

    for t in range(1, t_max + 1):
        V = np.array([s2 * sum(v_k[k] for k in codebook.sections_of_block(j))
                      for j in range(J)])
        fwd = [np.zeros_like(y[j]) for j in range(J)]
        for j in range(J):
            for k in codebook.sections_of_block(j):
                fwd[j] += codebook.links[(j, k)].forward(c_hat[k])
            fwd[j] *= s

        if awgn_path:
            tau = V + sigma2
            for j in range(J):
                if t == 1:
                    z[j] = y[j].copy()
                else:
                    z[j] = y[j] - fwd[j] + (V[j] / tau_prev[j]) * z[j]
            per_block_info = deltas * s2 / tau
            back_in = [z[j] / tau[j] for j in range(J)]
            tau_prev = tau
        else:
            one_minus_gp = np.empty(J)
            for j in range(J):
                p_hat = fwd[j] - V[j] * sv[j]
                g, var_x = output_mmse(channel, p_hat, V[j], y[j])
                sv[j] = (g - p_hat) / V[j]
                one_minus_gp[j] = 1.0 - float(np.mean(var_x)) / V[j]
            per_block_info = deltas * s2 * one_minus_gp / V
            back_in = sv

        rho = np.zeros(K)
        for k in range(K):
            rho[k] = sum(per_block_info[j] for j in codebook.blocks_of_section(k))
        mse_row = np.zeros(K)
        v_new = np.empty(K)
        for k in range(K):
            acc = np.zeros(cfg.n)
            for j in codebook.blocks_of_section(k):
                acc += codebook.links[(j, k)].adjoint(back_in[j])
            r = c_hat[k] + (s / rho[k]) * acc
            if not np.all(np.isfinite(r)):
                raise FloatingPointError("non-finite LE output in section %d "
                                         "at iteration %d" % (k, t))
            res = denoiser(r, rho[k])
            c_hat[k] = res.mean
            v_new[k] = res.avg_var
            if c_true is not None:
                mse_row[k] = float(np.mean((res.mean - c_true[k]) ** 2))
        delta_v = float(np.max(np.abs(v_new - v_k)))
        v_k = v_new
        trace.rho.append(rho.copy())
        trace.v_blocks.append(np.array(
            [sum(v_k[k] for k in codebook.sections_of_block(j)) / W for j in range(J)]))
        if c_true is not None:
            trace.section_mse.append(mse_row.copy())
        trace.iterations = t
        if delta_v < stop_tol:
            trace.converged = True
            break
    return c_hat, trace


# ---------------------------------------------------------------------------
# Multiuser arrangement (IDMA-style)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UserPlan:
    """Transmission schedule of one user: slots k..k+W-1 carry its section."""

    user: int
    slots: tuple

    def signals(self, codeword, codebook, cfg):
        out = {}
        for j in self.slots:
            out[j] = cfg.scale * codebook.links[(j, self.user)].forward(
                np.asarray(codeword, dtype=float))
        return out


def multiuser_build(cfg):
    """Per-user encoders plus the slot schedule of the K-user system.

    User k transmits over W slots starting at slot k; the fused observation
    equals the interleaved single-encoder output on shared seeds.
    """
    if cfg.mode != "multiuser":
        raise ValueError("config mode must be 'multiuser'")
    codebook = AscCodebook(cfg)
    plans = []
    busy = {}
    for k in range(cfg.k):
        slots = tuple(range(k, k + cfg.w))
        for j in slots:
            busy.setdefault(j, []).append(k)
            if len(busy[j]) > cfg.w:
                raise ValueError("slot %d oversubscribed" % j)
        plans.append(UserPlan(user=k, slots=slots))
    return plans, codebook


def multiuser_fuse(plans, codewords, codebook, cfg):
    """Superpose per-user transmissions slot by slot (the channel does this)."""
    blocks = [np.zeros(codebook.block_rows(j)) for j in range(cfg.n_blocks)]
    for plan, c in zip(plans, codewords):
        for j, sig in plan.signals(c, codebook, cfg).items():
            blocks[j] += sig
    return blocks
