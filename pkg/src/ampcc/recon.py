"""AMP and GAMP reconstruction engines for y = Ac + n and y = f(Ac) + n.

Matrix normalization note: with A entries ~ N(0, 1/N) the LE residual
backprojection carries a 1/delta factor (r = c_hat + A^T z / delta); this is
what makes the scalar SE rho = delta/(v + sigma2) exact and makes GAMP with
a Gaussian output law reduce to AMP identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .model import ClipChannel, QuantChannel

_SQRT2PI = math.sqrt(2.0 * math.pi)


@dataclass
class ReconTrace:
    """Per-iteration diagnostics of one reconstruction run."""

    mse: list = field(default_factory=list)
    rho: list = field(default_factory=list)
    v: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False

    def rows(self):
        for t in range(self.iterations):
            m = self.mse[t] if self.mse else math.nan
            yield t + 1, m, self.rho[t], self.v[t]


# ---------------------------------------------------------------------------
# Output-channel MMSE (the GAMP g step)
# ---------------------------------------------------------------------------

def _norm_logpdf(x, mu, var):
    return -0.5 * (x - mu) ** 2 / var - 0.5 * np.log(2.0 * math.pi * var)


def _trunc_moments_above(mu, s, a):
    """Mean/variance of N(mu, s^2) truncated to [a, inf); erfcx-stable.

    erfcx overflows to inf for deeply negative arguments, which correctly
    collapses the hazard to zero (truncation point far below the mean).
    """
    alpha = (a - mu) / s
    with np.errstate(over="ignore"):
        lam = 2.0 / (_SQRT2PI * special.erfcx(alpha / math.sqrt(2.0)))
    mean = mu + s * lam
    var = s * s * np.clip(1.0 + alpha * lam - lam * lam, 0.0, 1.0)
    return mean, var


def _trunc_moments_two_sided(mu, s, a, b):
    """Mean/variance of N(mu, s^2) truncated to [a, b].

    Pieces whose truncation mass underflows get clamped moments; their
    mixture weight vanishes identically, so the values are never used.
    """
    alpha = (a - mu) / s
    beta = (b - mu) / s
    # evaluate the mass on the side with better conditioning
    flip = (alpha + beta) > 0
    al = np.where(flip, -beta, alpha)
    be = np.where(flip, -alpha, beta)
    mass = special.ndtr(be) - special.ndtr(al)
    phi_a = np.exp(-0.5 * al * al) / _SQRT2PI
    phi_b = np.exp(-0.5 * be * be) / _SQRT2PI
    safe = np.maximum(mass, 1e-300)
    d1 = (phi_a - phi_b) / safe
    d2 = (al * phi_a - be * phi_b) / safe
    mean_std = np.where(flip, -d1, d1)
    var_std = np.clip(1.0 + d2 - d1 * d1, 0.0, 1.0)
    mid = np.clip(mu, a, b)
    mean = np.where(mass > 1e-300, mu + s * mean_std, mid)
    var = np.where(mass > 1e-300, s * s * var_std, 0.0)
    return mean, var, mass


def _clip_posterior(channel, p_hat, v, y):
    """Posterior mean/variance of x ~ N(p_hat, v) given y = a*clip(x,Z) + n.

    The posterior is an exact three-piece mixture of truncated Gaussians
    (left saturation, linear interior, right saturation).
    """
    z, a, s2 = channel.Z, channel.alpha, channel.sigma2
    p_hat = np.asarray(p_hat, dtype=float)
    y = np.asarray(y, dtype=float)
    sv = np.sqrt(v)

    # interior piece: N(y; a x, s2) * N(x; p_hat, v) on [-Z, Z]
    denom = a * a * v + s2
    m_in = p_hat + a * v * (y - a * p_hat) / denom
    s_in = math.sqrt(v * s2 / denom)
    lw_in = _norm_logpdf(y, a * p_hat, denom)
    mean_in, var_in, mass_in = _trunc_moments_two_sided(m_in, s_in, -z, z)
    lw_in = lw_in + np.log(np.maximum(mass_in, 1e-300))

    # saturation pieces: flat likelihood, prior truncated to the tails
    lw_lo = _norm_logpdf(y, -a * z, s2) + special.log_ndtr((-z - p_hat) / sv)
    lw_hi = _norm_logpdf(y, a * z, s2) + special.log_ndtr((p_hat - z) / sv)
    mean_hi, var_hi = _trunc_moments_above(p_hat, sv, z)
    mean_lo, var_lo = _trunc_moments_above(-p_hat, sv, z)
    mean_lo, var_lo = -mean_lo, var_lo

    lw = np.stack([lw_lo, lw_in, lw_hi])
    means = np.stack([mean_lo, mean_in, mean_hi])
    varis = np.stack([var_lo, var_in, var_hi])
    lw -= lw.max(axis=0, keepdims=True)
    w = np.exp(lw)
    w /= w.sum(axis=0, keepdims=True)
    mean = (w * means).sum(axis=0)
    second = (w * (varis + means ** 2)).sum(axis=0)
    var = np.maximum(second - mean ** 2, 0.0)
    return mean, var


def _quant_posterior(channel, p_hat, v, y):
    """Posterior mean/variance of x ~ N(p_hat, v) given y = f(x + n).

    Uses the closed Gaussian-cdf moment identities
    E[Phi(a+bu)] = Phi(t), E[u Phi] = c phi(t), E[u^2 Phi] = Phi(t) - c^2 t phi(t)
    with t = a/sqrt(1+b^2), c = b/sqrt(1+b^2).
    """
    p_hat = np.asarray(p_hat, dtype=float)
    idx = channel.cell_of_output(y)
    lo, hi = channel.cell_bounds(idx)
    s2 = channel.sigma2
    tot = np.sqrt(s2 + v)
    c2 = v / (s2 + v)

    def terms(t):
        t = np.asarray(t, dtype=float)
        finite = np.isfinite(t)
        alpha = (np.where(finite, t, 0.0) - p_hat) / tot
        cdf = np.where(finite, special.ndtr(alpha), (t > 0).astype(float))
        pdf = np.where(finite, np.exp(-0.5 * alpha * alpha) / _SQRT2PI, 0.0)
        return cdf, pdf, np.where(finite, alpha * pdf, 0.0)

    cdf_hi, pdf_hi, apdf_hi = terms(hi)
    cdf_lo, pdf_lo, apdf_lo = terms(lo)
    mass = cdf_hi - cdf_lo
    ok = mass > 1e-250
    safe = np.where(ok, mass, 1.0)
    # x = p_hat + sqrt(v) u; E[u * cell] = -c (pdf_hi - pdf_lo) with c = sqrt(c2)
    c = np.sqrt(c2)
    eu = -c * (pdf_hi - pdf_lo) / safe
    eu2 = 1.0 - c2 * (apdf_hi - apdf_lo) / safe
    mean = p_hat + math.sqrt(v) * eu
    var = np.maximum(v * (eu2 - eu ** 2), 0.0)
    # cells with vanishing prior mass: park the estimate at the nearest edge
    edge = np.clip(p_hat, np.where(np.isfinite(lo), lo, -1e300),
                   np.where(np.isfinite(hi), hi, 1e300))
    mean = np.where(ok, mean, edge)
    var = np.where(ok, var, 0.0)
    return mean, var


def output_mmse(channel, p_hat, v, y, method="closed"):
    """E[x | p_hat, y] and Var[x | p_hat, y] under prior N(p_hat, v).

    Vectorized over (p_hat, y). method="quadrature" integrates the posterior
    on p_hat +- 8 sqrt(v) with panel refinement (validation path).
    """
    if not v > 0:
        raise ValueError("prior variance must be positive")
    if method == "quadrature":
        return _output_mmse_quadrature(channel, p_hat, v, y)
    if isinstance(channel, ClipChannel):
        if channel.is_awgn:
            a, s2 = channel.alpha, channel.sigma2
            denom = a * a * v + s2
            p_hat = np.asarray(p_hat, dtype=float)
            y = np.asarray(y, dtype=float)
            mean = p_hat + a * v * (y - a * p_hat) / denom
            var = np.broadcast_to(v * s2 / denom, mean.shape).copy()
            return mean, var
        return _clip_posterior(channel, p_hat, v, y)
    if isinstance(channel, QuantChannel):
        return _quant_posterior(channel, p_hat, v, y)
    raise TypeError("unsupported channel type %r" % type(channel).__name__)


def _output_mmse_quadrature(channel, p_hat, v, y, n_panels=64, max_refine=8,
                            rtol=1e-8):
    """Adaptive composite-Simpson moments of the posterior on p_hat +- 8 sqrt(v).

    The integration window is cut at the channel's kink points (clip
    thresholds) so each segment is smooth. Validation path; loops entrywise.
    """
    from .model import likelihood

    p_hat = np.atleast_1d(np.asarray(p_hat, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    kinks = []
    if isinstance(channel, ClipChannel) and not channel.is_awgn:
        kinks = [-channel.Z, channel.Z]
    half = 8.0 * math.sqrt(v)
    means = np.empty(p_hat.shape)
    varis = np.empty(p_hat.shape)
    for i in range(p_hat.size):
        lo, hi = p_hat.flat[i] - half, p_hat.flat[i] + half
        edges = [lo] + [k for k in kinks if lo < k < hi] + [hi]
        prev = None
        for it in range(max_refine):
            npts = n_panels * 2 ** it + 1
            z0 = z1 = z2 = 0.0
            for a, b in zip(edges[:-1], edges[1:]):
                x = np.linspace(a, b, npts)
                f = likelihood(channel, np.full(npts, y.flat[i]), x) \
                    * np.exp(-0.5 * (x - p_hat.flat[i]) ** 2 / v)
                w = np.ones(npts)
                w[1:-1:2], w[2:-1:2] = 4.0, 2.0
                scale = (b - a) / (3.0 * (npts - 1))
                z0 += scale * (f @ w)
                z1 += scale * ((f * x) @ w)
                z2 += scale * ((f * x * x) @ w)
            z0 = max(z0, 1e-300)
            m = z1 / z0
            va = max(z2 / z0 - m * m, 0.0)
            if prev is not None and abs(m - prev[0]) <= rtol * (1 + abs(m)) \
                    and abs(va - prev[1]) <= rtol * (1 + va):
                break
            prev = (m, va)
        else:
            raise RuntimeError("output_mmse quadrature did not converge "
                               "after refinement cap")
        means.flat[i], varis.flat[i] = m, va
    return means, varis


# ---------------------------------------------------------------------------
# AMP
# ---------------------------------------------------------------------------

def _check_finite(name, arr, t):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError("non-finite %s at iteration %d" % (name, t))


def amp_run(y, op, denoiser, sigma2, t_max=50, c_true=None, damping=1.0,
            rho_mode="formula", onsager=True, stop_tol=1e-10):
    """AMP for y = Ac + n: LE with Onsager correction, then posterior-mean NLE.

    rho_mode "formula" uses the SE value delta/(v + sigma2); "residual"
    estimates rho from the measurement residual as delta * M / ||z||^2.
    Returns (c_hat, ReconTrace).
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (op.m,):
        raise ValueError("y must have length M = %d" % op.m)
    delta = op.m / op.n
    c_hat = np.zeros(op.n)
    z = None
    v_hat = 1.0
    div_prev = 0.0
    trace = ReconTrace()
    for t in range(1, t_max + 1):
        if t == 1:
            z = y.copy()                      # c_hat = 0, Onsager term zero
        else:
            z = y - op.forward(c_hat)
            if onsager:
                z += (div_prev / delta) * z_prev
        r = c_hat + op.adjoint(z) / delta
        _check_finite("LE output", r, t)
        if rho_mode == "formula":
            rho = delta / (v_hat + sigma2)
        elif rho_mode == "residual":
            rho = delta * op.m / max(float(z @ z), 1e-300)
        else:
            raise ValueError("unknown rho_mode %r" % rho_mode)
        res = denoiser(r, rho)
        c_new = res.mean if damping == 1.0 else \
            damping * res.mean + (1.0 - damping) * c_hat
        _check_finite("NLE output", c_new, t)
        trace.rho.append(rho)
        trace.v.append(res.avg_var)
        if c_true is not None:
            trace.mse.append(float(np.mean((c_new - c_true) ** 2)))
        trace.iterations = t
        converged = abs(res.avg_var - v_hat) < stop_tol
        z_prev = z
        div_prev = res.divergence
        c_hat = c_new
        v_hat = res.avg_var
        if converged:
            trace.converged = True
            break
    return c_hat, trace


# ---------------------------------------------------------------------------
# GAMP
# ---------------------------------------------------------------------------

def gamp_run(y, op, denoiser, channel, t_max=50, c_true=None, damping=1.0,
             stop_tol=1e-10):
    """GAMP for y = f(Ac) + n with a generalized LE (output-MMSE step).

    The output derivative average <dg/dp> is computed analytically as
    mean(Var[x|p,y]) / v. Returns (c_hat, ReconTrace).
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (op.m,):
        raise ValueError("y must have length M = %d" % op.m)
    delta = op.m / op.n
    c_hat = np.zeros(op.n)
    s = np.zeros(op.m)
    v = 1.0
    grow = 0
    trace = ReconTrace()
    for t in range(1, t_max + 1):
        p_hat = op.forward(c_hat) - v * s
        g, var_x = output_mmse(channel, p_hat, v, y)
        _check_finite("GLE output", g, t)
        s = (g - p_hat) / v
        gp = float(np.mean(var_x)) / v
        r = c_hat + (v / delta) / (1.0 - gp) * op.adjoint(s)
        _check_finite("LE output", r, t)
        rho = delta * (1.0 - gp) / v
        res = denoiser(r, rho)
        c_new = res.mean if damping == 1.0 else \
            damping * res.mean + (1.0 - damping) * c_hat
        _check_finite("NLE output", c_new, t)
        trace.rho.append(rho)
        trace.v.append(res.avg_var)
        if c_true is not None:
            trace.mse.append(float(np.mean((c_new - c_true) ** 2)))
        trace.iterations = t
        converged = abs(res.avg_var - v) < stop_tol
        grow = grow + 1 if res.avg_var > v + 1e-12 else 0
        if grow >= 8:
            raise FloatingPointError("GAMP variance diverging at iteration %d" % t)
        c_hat = c_new
        v = res.avg_var
        if converged:
            trace.converged = True
            break
    return c_hat, trace
