import math

import numpy as np
import pytest

from ampcc.denoise import CodeSpec, mmse_bpsk, psi_estimate
from ampcc.evolve import (PhiAwgn, PhiCurve, TransferCurve, area_rate_report,
                          asc_rate, capacity_threshold_db, coupled_se,
                          gaussian_capacity_nats, gaussian_threshold_db,
                          mi_identity_check, mutual_info_channel,
                          potential_report, potential_value, rho_b_closed_form,
                          se_fixed_point, threshold_search, varphi_curve,
                          varphi_general, varphi_inverse_from_curve)
from ampcc.model import ClipChannel, QuantChannel, awgn, bpsk

PSI_B = np.vectorize(mmse_bpsk)


def test_phi_awgn_examples():
    phi = PhiAwgn(0.5, 1.0)
    assert phi(1.0) == 0.25
    assert phi.inverse(0.1) == 1.0          # below rho0 = 0.25
    assert phi.inverse(0.5) == 0.0          # delta/rho - sigma2 = 0
    grid = np.linspace(phi.rho0, 0.5, 50)
    assert np.allclose(phi(phi.inverse(grid)), grid)


def test_transfer_curve_basics():
    c = TransferCurve(axis="rho", knots=np.array([0.0, 1.0, 2.0]),
                      values=np.array([1.0, 0.5, 0.1]))
    assert c(0.5) == 0.75
    assert c.is_nonincreasing
    assert abs(c.integrate(0.0, 2.0) - (0.75 + 0.3)) < 1e-12
    assert abs(c.inverse(0.75) - 0.5) < 1e-12
    with pytest.raises(ValueError):
        TransferCurve(axis="rho", knots=np.array([0.0, 0.0]),
                      values=np.array([1.0, 0.5]))


def test_varphi_awgn_reduces_to_phi():
    val, err = varphi_general(0.3, 0.5, awgn(1.0))
    assert err == 0.0
    assert abs(val - 0.5 / 1.3) < 1e-12


def test_varphi_mc_matches_quadrature():
    ch = ClipChannel.from_cr(1.0, 1.0)
    vq, _ = varphi_general(0.3, 0.5, ch, method="quadrature")
    vm, se = varphi_general(0.3, 0.5, ch, mc_samples=200_000, seed=3)
    assert abs(vm - vq) < 3 * se + 1e-3


def test_varphi_value_at_v1():
    # frozen tensor-grid quadrature oracle: varphi(1; 0.5, CR=1dB, s2=1)
    val, _ = varphi_general(1.0, 0.5, ClipChannel.from_cr(1.0, 1.0),
                            method="quadrature")
    assert abs(val - 0.235542) < 1e-4


def test_varphi_requires_positive_v():
    ch = ClipChannel.from_cr(1.0, 1.0)
    with pytest.raises(ValueError):
        varphi_general(0.0, 0.5, ch)
    val, _ = varphi_general(0.0, 0.5, ch, method="quadrature", allow_limit=True)
    assert val > 0


def test_varphi_monotone_decreasing():
    ch = ClipChannel.from_cr(3.0, 1.0)
    curve = varphi_curve(0.5, ch, method="quadrature")
    assert np.all(np.diff(curve.values) <= 1e-9)
    inv = varphi_inverse_from_curve(curve)
    assert inv(curve.values[-1] * 0.5) == 1.0
    assert inv(curve.values[0] * 2.0) == 0.0


def test_se_fixed_point_perfect_decoder():
    phi = PhiAwgn(0.5, 1.0)
    rep = se_fixed_point(phi, lambda rho: np.zeros_like(np.asarray(rho, dtype=float)))
    assert rep.v_star == 0.0
    assert rep.error_free
    assert len(rep.trajectory_v) <= 2


def test_se_fixed_point_bpsk_against_grid_scan_oracle():
    delta, sigma2 = 0.5, 10 ** (-0.6)
    phi = PhiAwgn(delta, sigma2)
    rep = se_fixed_point(phi, PSI_B)
    # dense-scan oracle of psi(phi(v)) = v, first crossing from v = 1
    grid = np.linspace(1.0, 0.0, 200_001)
    g = PSI_B(phi(grid)) - grid
    idx = np.argmax(g >= 0)         # starts negative at v=1? g(1) = psi-1 < 0
    v_oracle = grid[idx]
    assert abs(rep.v_star - v_oracle) < 1e-4
    assert abs(rep.v_star - PSI_B(phi(rep.v_star))) <= 1e-9


def test_se_fixed_point_degenerate_matching():
    phi = PhiAwgn(0.5, 1.0)
    rep = se_fixed_point(phi, lambda rho: phi.inverse(rho))
    assert rep.v_star == 1.0                 # no progress from v = 1
    assert len(rep.intersections) > 100      # every grid point is a fixed point


def test_coupled_se_reduces_to_scalar():
    phi = PhiAwgn(0.5, 10 ** (-0.6))
    res = coupled_se(1, 1, phi, PSI_B)
    rep = se_fixed_point(phi, PSI_B)
    assert abs(res.v[0] - rep.v_star) < 1e-8
    assert res.rho.shape == (1,)


def test_coupled_se_perfect_decoder():
    phi = PhiAwgn(0.5, 1.0)
    zero = lambda rho: np.zeros_like(np.asarray(rho, dtype=float))
    res = coupled_se(5, 2, phi, zero)
    assert np.all(res.v == 0.0)
    assert res.iterations <= 2


def test_coupled_se_boundary_modes():
    phi = PhiAwgn(0.2, 10 ** (-1.05))
    # paper-literal boundaries weaken the edge (psi(0) = 1 contributes)
    lit = coupled_se(10, 3, phi, PSI_B, t_max=2, record_history=True)
    absent = coupled_se(10, 3, phi, PSI_B, t_max=2, record_history=True)
    lit1 = coupled_se(10, 3, phi, PSI_B, boundary="paper-literal", t_max=1)
    ab1 = coupled_se(10, 3, phi, PSI_B, boundary="absent-blocks", t_max=1)
    assert lit1.v[0] > ab1.v[0]
    with pytest.raises(ValueError):
        coupled_se(2, 2, phi, PSI_B, boundary="bogus")


def test_potential_basics():
    delta, sigma2 = 0.5, 10 ** (-0.6)
    phi = PhiAwgn(delta, sigma2)
    assert abs(potential_value(phi, PSI_B, 1.0)) < 1e-15   # U(1) = 0
    rep = potential_report(phi, PSI_B)
    assert abs(rep.u[-1]) < 1e-12
    # psi below phi^{-1} everywhere -> U decreasing, minimizer ~ 0
    tiny = lambda rho: 1e-6 * np.exp(-np.asarray(rho, dtype=float))
    rep2 = potential_report(phi, tiny)
    assert rep2.minimizer_v < 1e-2
    assert np.all(np.diff(rep2.u) >= -1e-12)


def test_potential_stationarity_at_intersections():
    # dU/dv = [psi(phi(v)) - v] phi'(v) vanishes at each intersection
    from scipy import integrate
    delta, sigma2 = 0.5, 10 ** (-1.35)     # three-intersection region
    phi = PhiAwgn(delta, sigma2)
    rep = se_fixed_point(phi, PSI_B)
    assert len(rep.intersections) == 3
    h = 1e-5
    f = lambda r: float(PSI_B(r)) - float(phi.inverse(r))
    for rho_i, v_i in rep.intersections:
        if not h < v_i < 1 - h:
            continue
        # U(v+h) - U(v-h) as a single well-conditioned segment integral
        du = integrate.quad(f, float(phi(v_i - h)), float(phi(v_i + h)),
                            limit=200)[0] / (2 * h)
        assert abs(du) < 1e-5


def test_potential_areas_three_intersections():
    delta = 0.5
    sigma2 = 10 ** (-1.35)
    phi = PhiAwgn(delta, sigma2)
    rep = potential_report(phi, PSI_B)
    assert rep.a1 is not None and rep.a2 is not None and rep.a3 is not None
    assert rep.a1 >= -1e-9 and rep.a2 >= -1e-9 and rep.a3 >= -1e-9
    # fewer than three intersections -> areas absent
    rep2 = potential_report(PhiAwgn(0.5, 1.0), PSI_B)
    assert rep2.a2 is None


def test_area_rate_report_gaussian_idealization():
    # psi_opt = phi^{-1} everywhere: a_S = 0 and R_AC = C_G
    phi = PhiAwgn(0.5, 1.0)
    rep = area_rate_report(0.5, 1.0, psi_mmse=lambda r: float(phi.inverse(r)))
    assert rep.a_s < 1e-9
    assert abs(rep.r_ac - rep.c_g) < 1e-6
    assert abs(rep.c_g - 0.5 * math.log(2.0)) < 1e-15   # 0.5 bits at sigma2=1


def test_area_rate_report_bpsk_gap_bound():
    rep = area_rate_report(0.1, 1.0)
    assert rep.gap <= 0.25 * 0.1 / 4 + 0.1 * 0.1
    assert abs(rep.gap - (rep.c_g - rep.r_ac)) < 1e-12
    assert rep.area_identity_dev < 1e-9


def test_rho_b_closed_form():
    exact, closed, asym = rho_b_closed_form(0.1, 1.0)
    assert abs(closed - (1.0 - math.sqrt(0.9))) < 1e-12
    exact2, closed2, _ = rho_b_closed_form(0.01, 1.0)
    assert abs(exact2 - 0.0050125001) < 1e-8      # bisection oracle value
    # asymptote ratio -> 1
    assert abs(exact2 / (0.01 / 2.0) - 1.0) < 0.02
    with pytest.raises(ValueError):
        rho_b_closed_form(1.5, 1.0)


def test_mutual_info_awgn_and_saturation():
    from ampcc.denoise import bpsk_capacity_nats
    assert abs(mutual_info_channel(awgn(1.0)) - 0.5 * math.log(2.0)) < 1e-12
    # Z -> 0: hard-limiter channel, BPSK at amplitude alpha*Z, at most 1 bit
    ch = ClipChannel.from_cr(-60.0, 0.05)
    val = mutual_info_channel(ch)
    assert 0 < val <= math.log(2.0) + 5e-3
    want = bpsk_capacity_nats((ch.alpha * ch.Z) ** 2 / ch.sigma2)
    assert abs(val - want) < 5e-3


def test_mutual_info_clip_against_area_theorem():
    ch = ClipChannel.from_cr(1.0, 1.0)
    curve = varphi_curve(0.5, ch, method="quadrature")
    area = (0.5 * curve.integrate(curve.knots[0], 1.0)
            + 0.5 * curve.values[0] * curve.knots[0]) / 0.5
    assert abs(area - mutual_info_channel(ch)) < 1e-2


def test_mi_identity_awgn_analytic():
    assert mi_identity_check(awgn(1.0), [0.3, 0.6, 0.9]) < 1e-6


def test_mi_identity_quantizer():
    q = QuantChannel.uniform(4, 1.0, 1.0)
    assert mi_identity_check(q, [0.5]) < 1e-2


def test_threshold_search_gaussian_idealized():
    # psi = phi^{-1} at 0 dB has rate 0.5 bits; recovered threshold = 0 dB
    assert gaussian_threshold_db(0.5) == 0.0
    delta = 1.0
    phi0 = PhiAwgn(delta, 1.0)
    rho_grid = np.linspace(0.0, phi0(0.0) * 1.05, 4000)
    psi = TransferCurve(axis="rho", knots=rho_grid,
                        values=np.asarray(phi0.inverse(rho_grid)))
    thr = threshold_search("uncoupled-error-free", psi, delta, (-3.0, 3.0))
    assert abs(thr) <= 0.03
    with pytest.raises(ValueError):
        threshold_search("uncoupled-error-free", psi, delta, (1.0, 3.0))


def test_capacity_thresholds():
    assert abs(capacity_threshold_db(0.9615) - 7.37) <= 0.1
    assert abs(gaussian_threshold_db(0.9615) - 4.46) <= 0.02


def test_asc_rate_examples():
    assert asc_rate(1.0, 50, 3) == 1.0 * 50 / 52
    assert abs(asc_rate(1.0, 50, 3) - 0.9615) < 5e-5
    assert abs(asc_rate(0.5, 100, 3) - 0.4902) < 5e-5
    assert asc_rate(0.7, 9, 1) == 0.7
    with pytest.raises(ValueError):
        asc_rate(0.5, 0, 3)


def test_phi_curve_wrapper():
    ch = ClipChannel.from_cr(1.0, 1.0)
    curve = varphi_curve(0.5, ch, method="quadrature")
    phin = PhiCurve(curve)
    v = 0.4
    assert abs(phin(v) - np.interp(v, curve.knots, curve.values)) < 1e-12
    assert abs(float(phin.inverse(phin(v))) - v) < 1e-3
