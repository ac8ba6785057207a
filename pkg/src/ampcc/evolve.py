"""State evolution, area/rate analysis, potential functions and the
mutual-information identities.

Transfer-function conventions: rho = phi(v) maps the LE input variance to
the NLE input SNR (delta/(v+sigma2) for the linear channel, the output-MMSE
form for generalized channels); v = psi(rho) is the decoder MMSE transfer.
All information quantities are in nats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize, special

from .denoise import (bpsk_capacity_nats, constellation_capacity_nats,
                      mmse_scalar)
from .model import ClipChannel, QuantChannel, bpsk, norm_pdf
from .recon import output_mmse

LN2 = math.log(2.0)

_GH_X, _GH_W = np.polynomial.hermite_e.hermegauss(151)
_GH_W = _GH_W / _GH_W.sum()


# ---------------------------------------------------------------------------
# Transfer curves
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TransferCurve:
    """Tabulated monotone transfer function with linear interpolation.

    axis "rho": v = psi(rho), defined on [0, rho_max], extended past the last
    knot by `tail` (a callable, e.g. the scalar mmse curve) or by holding the
    final value. axis "v": rho = phi(v) on [0, 1].
    """

    axis: str
    knots: np.ndarray
    values: np.ndarray
    stderr: np.ndarray = None
    tail: object = None

    def __post_init__(self):
        k = np.asarray(self.knots, dtype=float)
        va = np.asarray(self.values, dtype=float)
        if k.ndim != 1 or k.shape != va.shape or k.size < 2:
            raise ValueError("knots/values must be matching 1-d arrays")
        if np.any(np.diff(k) <= 0):
            raise ValueError("knots must be strictly increasing")
        object.__setattr__(self, "knots", k)
        object.__setattr__(self, "values", va)
        if self.stderr is not None:
            object.__setattr__(self, "stderr", np.asarray(self.stderr, dtype=float))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.interp(x, self.knots, self.values)
        if self.tail is not None:
            hi = x > self.knots[-1]
            if np.any(hi):
                out = np.where(hi, np.minimum(self.tail(np.maximum(x, self.knots[-1])),
                                              self.values[-1]), out)
        return out if out.ndim else float(out)

    @property
    def is_nonincreasing(self):
        return bool(np.all(np.diff(self.values) <= 1e-12))

    def inverse(self, y):
        """Inverse of a decreasing curve, clamped to the knot range."""
        if not self.is_nonincreasing:
            raise ValueError("inverse requires a nonincreasing curve")
        y = np.asarray(y, dtype=float)
        out = np.interp(y, self.values[::-1], self.knots[::-1])
        return out if out.ndim else float(out)

    def integrate(self, a, b):
        """Exact trapezoid integral of the interpolant over [a, b]."""
        if b < a:
            return -self.integrate(b, a)
        xs = self.knots[(self.knots > a) & (self.knots < b)]
        grid = np.concatenate(([a], xs, [b]))
        return float(np.trapezoid(self(grid), grid))


@dataclass(frozen=True)
class PhiAwgn:
    """Analytic linear-channel transfer rho = delta/(v + sigma2)."""

    delta: float
    sigma2: float

    def __call__(self, v):
        return self.delta / (np.asarray(v, dtype=float) + self.sigma2)

    @property
    def rho0(self):
        return self.delta / (1.0 + self.sigma2)

    def inverse(self, rho):
        rho = np.asarray(rho, dtype=float)
        with np.errstate(divide="ignore"):
            dec = np.clip(self.delta / rho - self.sigma2, 0.0, 1.0)
        out = np.where(rho < self.rho0, 1.0, dec)
        return out if out.ndim else float(out)

    def integrate(self, a, b):
        """int_a^b phi(v) dv in closed form."""
        return self.delta * math.log((b + self.sigma2) / (a + self.sigma2))


def phi_awgn(v, delta, sigma2, inverse=False):
    f = PhiAwgn(delta, sigma2)
    return f.inverse(v) if inverse else f(v)


# ---------------------------------------------------------------------------
# Generalized transfer function (GAMP SE)
# ---------------------------------------------------------------------------

def _joint_phat_samples(v, rng, n):
    """Draw (x, p_hat) from the joint N(0, [[1, 1-v], [1-v, 1-v]])."""
    x = rng.standard_normal(n)
    xi = rng.standard_normal(n)
    p_hat = (1.0 - v) * x + math.sqrt(v * (1.0 - v)) * xi
    return x, p_hat


def varphi_general(v, delta, channel, mc_samples=200_000, seed=0,
                   method="mc", allow_limit=False):
    """rho = (delta/v) (1 - mmse(x|p_hat, y)/v) for a general scalar law.

    method "mc": Monte Carlo over (x, p_hat, y); returns (value, stderr).
    method "quadrature": deterministic tensor-grid integration; stderr 0.
    """
    if v == 0:
        if not allow_limit:
            raise ValueError("varphi is undefined at v = 0; pass allow_limit=True")
        v = 1e-6
    if not 0 < v <= 1:
        raise ValueError("v must be in (0, 1]")
    if isinstance(channel, ClipChannel) and channel.is_awgn:
        # closed form: mmse = v*sigma2/(v+sigma2) reduces to delta/(v+sigma2)
        return delta / (v + channel.sigma2), 0.0
    if method == "quadrature":
        m = _mmse_phat_y_quadrature(channel, v)
        return (delta / v) * (1.0 - m / v), 0.0
    rng = np.random.default_rng(seed)
    x, p_hat = _joint_phat_samples(v, rng, mc_samples)
    y = channel.transmit(x, rng)
    _, var = output_mmse(channel, p_hat, v, y)
    m = float(np.mean(var))
    se = float(np.std(var, ddof=1) / math.sqrt(mc_samples))
    return (delta / v) * (1.0 - m / v), (delta / v) * se / v


def _y_grid_clip(channel, n=1601):
    z = channel.alpha * channel.Z if not channel.is_awgn else channel.alpha * 10.0
    half = z + 10.0 * math.sqrt(channel.sigma2)
    return np.linspace(-half, half, n)


def channel_marginal(channel, p_hat, v, y):
    """q(y | p_hat) under x ~ N(p_hat, v): density (clip) or mass (quantizer)."""
    p_hat = np.asarray(p_hat, dtype=float)
    y = np.asarray(y, dtype=float)
    if isinstance(channel, ClipChannel):
        a, z, s2 = channel.alpha, channel.Z, channel.sigma2
        sv = math.sqrt(v)
        if channel.is_awgn:
            return norm_pdf(y, a * p_hat, math.sqrt(a * a * v + s2))
        w_lo = norm_pdf(y, -a * z, math.sqrt(s2)) * special.ndtr((-z - p_hat) / sv)
        w_hi = norm_pdf(y, a * z, math.sqrt(s2)) * special.ndtr((p_hat - z) / sv)
        den = a * a * v + s2
        m_in = p_hat + a * v * (y - a * p_hat) / den
        s_in = math.sqrt(v * s2 / den)
        mass = special.ndtr((z - m_in) / s_in) - special.ndtr((-z - m_in) / s_in)
        w_in = norm_pdf(y, a * p_hat, math.sqrt(den)) * mass
        return w_lo + w_in + w_hi
    if isinstance(channel, QuantChannel):
        idx = channel.cell_of_output(y)
        lo, hi = channel.cell_bounds(idx)
        tot = math.sqrt(channel.sigma2 + v)
        lo_c = special.ndtr(np.where(np.isfinite(lo), (lo - p_hat) / tot, -np.inf))
        hi_c = special.ndtr(np.where(np.isfinite(hi), (hi - p_hat) / tot, np.inf))
        return hi_c - lo_c
    raise TypeError("unsupported channel type %r" % type(channel).__name__)


def _mmse_phat_y_quadrature(channel, v):
    """E[Var(x|p_hat, y)] by Gauss-Hermite over p_hat and a y-grid/level sum."""
    sd_p = math.sqrt(max(1.0 - v, 1e-300))
    p_nodes = sd_p * _GH_X
    if isinstance(channel, QuantChannel):
        total = 0.0
        for lev in channel.levels:
            y = np.full(p_nodes.shape, lev)
            _, var = output_mmse(channel, p_nodes, v, y)
            q = channel_marginal(channel, p_nodes, v, y)
            total += float((var * q) @ _GH_W)
        return total
    y = _y_grid_clip(channel)
    pp, yy = np.meshgrid(p_nodes, y, indexing="ij")
    _, var = output_mmse(channel, pp, v, yy)
    q = channel_marginal(channel, pp, v, yy)
    inner = np.trapezoid(var * q, y, axis=1)
    return float(inner @ _GH_W)


def varphi_curve(delta, channel, v_grid=None, mc_samples=200_000, seed=0,
                 method="mc"):
    """Tabulate varphi on a v-grid into a TransferCurve (axis 'v').

    MC mode uses common random numbers across the grid so the curve is smooth.
    """
    if v_grid is None:
        v_grid = np.concatenate((np.logspace(-3, -1, 24), np.linspace(0.12, 1.0, 45)))
    v_grid = np.asarray(v_grid, dtype=float)
    vals = np.empty(v_grid.size)
    errs = np.zeros(v_grid.size)
    if method == "mc" and not (isinstance(channel, ClipChannel) and channel.is_awgn):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal(mc_samples)
        xi = rng.standard_normal(mc_samples)
        y = channel.transmit(x, rng)
        for i, v in enumerate(v_grid):
            p_hat = (1.0 - v) * x + math.sqrt(v * (1.0 - v)) * xi
            _, var = output_mmse(channel, p_hat, v, y)
            m = float(np.mean(var))
            vals[i] = (delta / v) * (1.0 - m / v)
            errs[i] = (delta / v) * float(np.std(var, ddof=1)
                                          / math.sqrt(mc_samples)) / v
    else:
        for i, v in enumerate(v_grid):
            vals[i], errs[i] = varphi_general(v, delta, channel, mc_samples,
                                              seed, method=method)
    return TransferCurve(axis="v", knots=v_grid, values=vals, stderr=errs)


def varphi_inverse_from_curve(curve):
    """phi_bar^{-1}(rho) from a tabulated decreasing varphi(v) curve.

    Plateau convention matches phi^{-1}: 1 below varphi(1), 0 above varphi(0+).
    """
    v_knots = curve.knots
    r_vals = curve.values

    def inv(rho):
        rho = np.asarray(rho, dtype=float)
        out = np.interp(rho, r_vals[::-1], v_knots[::-1],
                        left=1.0, right=v_knots[0])
        out = np.where(rho <= r_vals[-1], 1.0, out)
        out = np.where(rho >= r_vals[0], 0.0, out)
        return out if out.ndim else float(out)

    return inv


class PhiCurve:
    """Analytic-like wrapper of a tabulated varphi curve: callable in v with
    an .inverse, so it can drive the potential/threshold machinery."""

    def __init__(self, curve):
        self.curve = curve
        self._inv = varphi_inverse_from_curve(curve)

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        lo = self.curve.knots[0]
        out = np.interp(np.maximum(v, lo), self.curve.knots, self.curve.values)
        return out if out.ndim else float(out)

    def inverse(self, rho):
        return self._inv(rho)


# ---------------------------------------------------------------------------
# Fixed points of the scalar SE
# ---------------------------------------------------------------------------

@dataclass
class FixedPointReport:
    trajectory_v: list
    trajectory_rho: list
    rho_star: float
    v_star: float
    intersections: list
    error_free: bool
    converged: bool


def se_fixed_point(phi, psi, v_tol=1e-12, t_max=10_000, grid_points=10_000,
                   error_free_tol=1e-6):
    """Iterate rho = phi(v), v = psi(rho) from v = 1; also scan and polish all
    intersections of psi(phi(v)) = v on a v-grid."""
    v = 1.0
    vs, rhos = [], []
    converged = False
    for _ in range(t_max):
        rho = float(phi(v))
        v_new = float(psi(rho))
        vs.append(v_new)
        rhos.append(rho)
        if abs(v_new - v) < v_tol:
            v = v_new
            converged = True
            break
        v = v_new
    grid = np.linspace(0.0, 1.0, grid_points)
    g = np.asarray(psi(phi(grid))) - grid
    cross = np.nonzero(np.diff(np.sign(g)) != 0)[0]
    inters = []
    for i in cross:
        f = lambda x: float(psi(phi(x))) - x
        try:
            v_i = optimize.brentq(f, grid[i], grid[i + 1], xtol=1e-13)
        except ValueError:
            v_i = grid[i]
        inters.append((float(phi(v_i)), v_i))
    inters.sort(key=lambda t: -t[1])          # from v = 1 downwards
    return FixedPointReport(
        trajectory_v=vs, trajectory_rho=rhos, rho_star=float(phi(v)), v_star=v,
        intersections=inters, error_free=bool(v <= error_free_tol),
        converged=converged)


# ---------------------------------------------------------------------------
# Coupled (vector) SE
# ---------------------------------------------------------------------------

@dataclass
class CoupledSEResult:
    v: np.ndarray                 # length K+W-1 block variances
    rho: np.ndarray               # length K section SNRs
    iterations: int
    converged: bool
    history: list = field(default_factory=list)


def coupled_se(K, W, phi, psi, boundary="paper-literal", v_tol=1e-10,
               t_max=50_000, record_history=False):
    """Vector SE of the spatially coupled system.

    rho_k = (1/W) sum_w phi(v_{k-1+w});  v_j = (1/W) sum_w psi(rho_{j-W+w}).
    boundary "paper-literal" sets rho_k = 0 outside [1, K] (so psi(0) = 1
    enters at the edges); "absent-blocks" lets out-of-range terms contribute
    zero variance instead.
    """
    if K < 1 or W < 1:
        raise ValueError("need K >= 1 and W >= 1")
    if boundary not in ("paper-literal", "absent-blocks"):
        raise ValueError("unknown boundary mode %r" % boundary)
    J = K + W - 1
    v = np.ones(J)
    rho = np.zeros(K)
    pad = np.full(W - 1, float(psi(0.0)) if boundary == "paper-literal" else 0.0)
    kern = np.full(W, 1.0 / W)
    hist = []
    converged = False
    it = 0
    for it in range(1, t_max + 1):
        rho = np.convolve(np.asarray(phi(v), dtype=float), kern, mode="valid")
        dec = np.asarray(psi(rho), dtype=float)
        v_new = np.convolve(np.concatenate((pad, dec, pad)), kern, mode="valid")
        delta = float(np.max(np.abs(v_new - v)))
        v = v_new
        if record_history:
            hist.append(v.copy())
        if delta < v_tol:
            converged = True
            break
    return CoupledSEResult(v=v, rho=np.atleast_1d(rho).copy(), iterations=it,
                           converged=converged, history=hist)


# ---------------------------------------------------------------------------
# Potential function and areas
# ---------------------------------------------------------------------------

def potential_value(phi, psi, v, quad_limit=400):
    """U(v) = int_{phi(1)}^{phi(v)} [psi(rho) - phi^{-1}(rho)] d rho."""
    lo, hi = float(phi(1.0)), float(phi(v))
    f = lambda r: float(psi(r)) - float(phi.inverse(r))
    val, _ = integrate.quad(f, lo, hi, limit=quad_limit)
    return val


@dataclass
class PotentialReport:
    v_grid: np.ndarray
    u: np.ndarray
    minimizer_v: float
    u_min: float
    intersections: list
    a1: float = None
    a2: float = None
    a3: float = None
    critical: bool = False


def potential_report(phi, psi, grid_points=2000):
    """Tabulated potential, its global minimizer (ties -> smaller v), and the
    a1/a2/a3 areas between phi^{-1} and psi when three intersections exist."""
    v_grid = np.linspace(0.0, 1.0, grid_points)
    rho_grid = np.asarray(phi(v_grid))
    h = np.asarray(psi(rho_grid)) - np.asarray(phi.inverse(rho_grid))
    # integrate along decreasing v (increasing rho), anchored at U(1) = 0
    u = np.zeros(grid_points)
    dr = np.diff(rho_grid[::-1])
    hh = h[::-1]
    u_rev = np.concatenate(([0.0], np.cumsum(0.5 * (hh[1:] + hh[:-1]) * dr)))
    u = u_rev[::-1]
    idx = int(np.argmin(u))   # argmin takes the first (smallest-v) tie
    fp = se_fixed_point(phi, psi, t_max=1)     # reuse the intersection scan
    inters = fp.intersections
    rep = PotentialReport(v_grid=v_grid, u=u, minimizer_v=float(v_grid[idx]),
                          u_min=float(u[idx]), intersections=inters)
    if len(inters) >= 3:
        (r1, _), (r2, _), (r3, _) = inters[0], inters[1], inters[2]

        def seg(a, b, n=20_000):
            # dense trapezoid; the integrand is piecewise linear up to phi^-1
            r = np.linspace(a, b, n)
            h = np.asarray(psi(r)) - np.asarray(phi.inverse(r))
            return float(np.trapezoid(h, r))

        a2 = seg(r1, r2)
        a3 = -seg(r2, r3)
        a1 = -seg(0.0, float(phi(1.0))) - seg(float(phi(1.0)), r1)
        rep.a1, rep.a2, rep.a3 = float(a1), float(a2), float(a3)
        rep.critical = abs(a2 - a3) <= 1e-4 * max(a2, a3)
    return rep


# ---------------------------------------------------------------------------
# Areas, rates and the closed-form crossing
# ---------------------------------------------------------------------------

def gaussian_capacity_nats(sigma2):
    return 0.5 * math.log(1.0 + 1.0 / sigma2)


@dataclass
class AreaReport:
    c_g: float
    i_yx: float
    a_s: float
    r_c: float
    r_ac: float
    gap: float
    area_identity_dev: float
    a1: float = None
    a2: float = None
    a3: float = None
    r_asc: float = None

    def to_dict(self):
        return {k: v for k, v in self.__dict__.items()}


def area_rate_report(delta, sigma2, psi_mmse=None, constellation=None,
                     channel=None, varphi=None, k_sections=None, w_width=None):
    """Curve-matching rate analysis.

    AWGN path (channel None): psi_opt = min(phi^{-1}, mmse(S, rho)),
    a_S = int (phi^{-1} - psi_opt), R_C = 0.5 int psi_opt, R_AC = R_C/delta,
    gap = a_S/(2 delta) = C_G - R_AC.  General path: pass a tabulated varphi
    curve; phi_bar^{-1} replaces phi^{-1} and I(y;x) replaces C_G.
    """
    if constellation is None:
        constellation = bpsk()
    if psi_mmse is None:
        psi_mmse = lambda rho: mmse_scalar(constellation, rho)
    c_g = gaussian_capacity_nats(sigma2)
    if channel is None:
        phi = PhiAwgn(delta, sigma2)
        inv = phi.inverse
        rho_end = delta / sigma2
        i_yx = c_g
        # linear-side area identity: (1/2) int_0^1 phi dv = delta * C_G
        num = integrate.quad(phi, 0.0, 1.0, limit=200)[0]
        area_identity_dev = abs(0.5 * num - delta * c_g)
    else:
        if varphi is None:
            varphi = varphi_curve(delta, channel, method="quadrature")
        inv = varphi_inverse_from_curve(varphi)
        rho_end = float(varphi.values[0]) * (1.0 + 1e-9)
        i_yx = mutual_info_channel(channel)
        area_identity_dev = abs(0.5 * varphi.integrate(varphi.knots[0], 1.0)
                         + 0.5 * varphi.values[0] * varphi.knots[0]
                         - delta * i_yx)

    gap_integrand = lambda r: max(float(inv(r)) - float(psi_mmse(r)), 0.0)
    a_s = integrate.quad(gap_integrand, 0.0, rho_end, limit=800)[0]
    psi_opt = lambda r: min(float(inv(r)), float(psi_mmse(r)))
    r_c = 0.5 * integrate.quad(psi_opt, 0.0, rho_end, limit=800)[0]
    gap = a_s / (2.0 * delta)
    rep = AreaReport(c_g=c_g, i_yx=i_yx, a_s=float(a_s), r_c=float(r_c),
                     r_ac=float(r_c / delta), gap=float(gap),
                     area_identity_dev=float(area_identity_dev))
    if k_sections is not None and w_width is not None:
        rep.r_asc = asc_rate(rep.r_ac, k_sections, w_width)
    return rep


def rho_b_closed_form(delta, sigma2):
    """Crossing of mmse(B, rho) with phi^{-1}(rho).

    Returns (exact bisection root, small-delta closed form, asymptote
    delta/(1+sigma2)).
    """
    half = (1.0 + sigma2) / 2.0
    disc = half * half - delta
    if disc < 0:
        raise ValueError("discriminant negative: delta too large for the closed form")
    closed = half - math.sqrt(disc)
    phi = PhiAwgn(delta, sigma2)
    f = lambda r: mmse_scalar(bpsk(), r) - float(phi.inverse(r))
    lo = phi.rho0 * (1.0 + 1e-12)
    hi = delta / sigma2
    exact = optimize.brentq(f, lo, hi, xtol=1e-14)
    return float(exact), float(closed), delta / (1.0 + sigma2)


# ---------------------------------------------------------------------------
# Mutual information of the scalar channel laws
# ---------------------------------------------------------------------------

def _clip_output_density(channel, y):
    """p(y) for y = a*clip(x,Z) + n with x ~ N(0,1); exact mixture form."""
    a, z, s2 = channel.alpha, channel.Z, channel.sigma2
    y = np.asarray(y, dtype=float)
    if channel.is_awgn:
        return norm_pdf(y, 0.0, math.sqrt(a * a + s2))
    q = special.ndtr(-z)
    point = q * (norm_pdf(y, -a * z, math.sqrt(s2)) + norm_pdf(y, a * z, math.sqrt(s2)))
    den = a * a + s2
    m_t = a * y / den
    s_t = math.sqrt(s2 / den)
    mass = special.ndtr((z - m_t) / s_t) - special.ndtr((-z - m_t) / s_t)
    return point + norm_pdf(y, 0.0, math.sqrt(den)) * mass


def mutual_info_channel(channel):
    """I(y; x) in nats for x ~ N(0,1) through the scalar channel law.

    The noise variance comes from the channel object itself.
    """
    if isinstance(channel, ClipChannel):
        s2 = channel.sigma2
        if channel.is_awgn:
            return 0.5 * math.log(1.0 + channel.alpha ** 2 / s2)
        f = lambda y: float(-_clip_output_density(channel, y)
                            * math.log(max(_clip_output_density(channel, y), 1e-300)))
        lim = channel.alpha * channel.Z + 12.0 * math.sqrt(s2)
        h_y = integrate.quad(f, -lim, lim, limit=800,
                             points=[-channel.alpha * channel.Z,
                                     channel.alpha * channel.Z])[0]
        return h_y - 0.5 * math.log(2.0 * math.pi * math.e * s2)
    if isinstance(channel, QuantChannel):
        thr = np.asarray(channel.thresholds)
        tot = math.sqrt(1.0 + channel.sigma2)
        edges = np.concatenate(([-np.inf], thr / tot, [np.inf]))
        p = np.diff(special.ndtr(edges))
        h_y = float(-np.sum(special.xlogy(p, p)))
        # H(Y|X) by Gauss-Hermite over x ~ N(0,1)
        sig = math.sqrt(channel.sigma2)
        lo = np.concatenate(([-np.inf], thr))
        hi = np.concatenate((thr, [np.inf]))
        x = _GH_X
        cond = np.zeros_like(x)
        pm = np.stack([
            special.ndtr(np.where(np.isfinite(h), (h - x) / sig, np.inf))
            - special.ndtr(np.where(np.isfinite(l), (l - x) / sig, -np.inf))
            for l, h in zip(lo, hi)])
        cond = -np.sum(special.xlogy(pm, pm), axis=0)
        return h_y - float(cond @ _GH_W)
    raise TypeError("unsupported channel type %r" % type(channel).__name__)


def _mi_phat_y(channel, v, y_points=3001, gh_nodes=151):
    """I(p_hat; y) for the Markov chain p_hat -> x -> y at prior variance v."""
    if isinstance(channel, ClipChannel) and channel.is_awgn:
        s2 = channel.sigma2
        return 0.5 * math.log((1.0 + s2) / (v + s2))
    x_nodes, x_w = np.polynomial.hermite_e.hermegauss(gh_nodes)
    x_w = x_w / x_w.sum()
    sd_p = math.sqrt(max(1.0 - v, 1e-300))
    p_nodes = sd_p * x_nodes
    if isinstance(channel, QuantChannel):
        # H(Y) - H(Y|p_hat), all sums exact over levels
        h_y = 0.0
        levels = np.asarray(channel.levels)
        tot_marg = np.zeros(levels.size)
        cond = np.zeros(p_nodes.size)
        for i, lev in enumerate(levels):
            y = np.full(p_nodes.shape, lev)
            q = channel_marginal(channel, p_nodes, v, y)
            tot_marg[i] = float(q @ x_w)
            cond -= special.xlogy(q, q)
        h_y = float(-np.sum(special.xlogy(tot_marg, tot_marg)))
        return h_y - float(cond @ x_w)
    y = np.linspace(*_clip_mi_range(channel), y_points)
    pp, yy = np.meshgrid(p_nodes, y, indexing="ij")
    q = channel_marginal(channel, pp, v, yy)
    h_cond = np.trapezoid(-special.xlogy(q, q), y, axis=1)
    marg = (q * x_w[:, None]).sum(axis=0)
    h_y = float(np.trapezoid(-special.xlogy(marg, marg), y))
    return h_y - float(h_cond @ x_w)


def _clip_mi_range(channel):
    lim = channel.alpha * channel.Z + 12.0 * math.sqrt(channel.sigma2)
    return -lim, lim


def mi_identity_check(channel, v_list, fd_step=None):
    """Max deviation of -dI(p_hat; y)/dv (central difference) from
    (1/2v)(1 - mmse(x|p_hat,y)/v)."""
    if fd_step is None:
        # the analytic AWGN path has no quadrature noise; a smaller step is safe
        awgn_like = isinstance(channel, ClipChannel) and channel.is_awgn
        fd_step = 1e-3 if awgn_like else 0.01
    worst = 0.0
    for v in v_list:
        if not 0 < v < 1:
            raise ValueError("v must be inside (0, 1)")
        h = min(fd_step, 0.5 * v, 0.5 * (1.0 - v))
        if h < 1e-5:
            raise ValueError("finite-difference step too small at v=%g" % v)
        lhs = (_mi_phat_y(channel, v - h) - _mi_phat_y(channel, v + h)) / (2.0 * h)
        if isinstance(channel, ClipChannel) and channel.is_awgn:
            m = v * channel.sigma2 / (v + channel.sigma2)
        else:
            m = _mmse_phat_y_quadrature(channel, v)
        rhs = (1.0 / (2.0 * v)) * (1.0 - m / v)
        worst = max(worst, abs(lhs - rhs))
    return worst


# ---------------------------------------------------------------------------
# Thresholds and coupled rates
# ---------------------------------------------------------------------------

def asc_rate(r_ac, k, w):
    """Rate of the coupled scheme after termination overhead."""
    if k < 1 or w < 1:
        raise ValueError("need K >= 1 and W >= 1")
    return r_ac * k / (k + w - 1)


def gaussian_threshold_db(rate_bits):
    """SNR (dB) where Gaussian capacity equals the target rate (closed form)."""
    return 10.0 * math.log10(2.0 ** (2.0 * rate_bits) - 1.0)


def capacity_threshold_db(rate_bits, constellation=None, bracket_db=(-10.0, 20.0)):
    """SNR (dB) where the constellation-constrained capacity meets the rate."""
    if constellation is None or constellation.name == "bpsk":
        cap = lambda rho: bpsk_capacity_nats(rho)
    else:
        cap = lambda rho: constellation_capacity_nats(constellation, rho)
    f = lambda db: cap(10.0 ** (db / 10.0)) / LN2 - rate_bits
    return optimize.brentq(f, bracket_db[0], bracket_db[1], xtol=1e-4)


def threshold_search(target, psi, delta, snr_bracket_db, tol_db=0.01):
    """Bisection (to tol_db) for the SNR where the target predicate flips.

    target "uncoupled-error-free": the scalar SE fixed point from v=1 reaches
    v <= 1e-6.  target "coupled-critical": the potential minimizer jumps to
    the low branch (a2 = a3 crossing).
    """
    lo, hi = snr_bracket_db
    v_ref = None
    if target == "coupled-critical":
        # reference scale separating the high- and low-variance branches,
        # used when fewer than three intersections leave a2/a3 undefined
        ends = [potential_report(PhiAwgn(delta, 10.0 ** (-db / 10.0)), psi).minimizer_v
                for db in (lo, hi)]
        v_ref = math.sqrt(max(ends[0], 1e-12) * max(ends[1], 1e-12))

    def predicate(db):
        sigma2 = 10.0 ** (-db / 10.0)
        phi = PhiAwgn(delta, sigma2)
        if target == "uncoupled-error-free":
            return se_fixed_point(phi, psi).error_free
        if target == "coupled-critical":
            rep = potential_report(phi, psi)
            if rep.a2 is not None:
                return rep.a3 >= rep.a2
            return rep.minimizer_v <= v_ref
        raise ValueError("unknown target %r" % target)

    p_lo, p_hi = predicate(lo), predicate(hi)
    if p_lo == p_hi:
        raise ValueError("no predicate sign change in bracket %r" % (snr_bracket_db,))
    while hi - lo > tol_db:
        mid = 0.5 * (lo + hi)
        if predicate(mid) == p_hi:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)
