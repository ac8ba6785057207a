import math

import numpy as np
import pytest

from ampcc.asc import (AscCodebook, AscConfig, asc_decode, asc_encode,
                       asc_transmit, multiuser_build, multiuser_fuse, puncture)
from ampcc.denoise import CodeSpec, Denoiser, mmse_bpsk, psi_estimate
from ampcc.evolve import PhiAwgn, TransferCurve, asc_rate, coupled_se, \
    potential_report, se_fixed_point
from ampcc.model import ClipChannel, awgn, bpsk
from ampcc.recon import amp_run, gamp_run

PSI_B = np.vectorize(mmse_bpsk)


def _codewords(k, n, seed):
    rng = np.random.default_rng(seed)
    return [rng.choice([-1.0, 1.0], n) for _ in range(k)]


def test_config_validation():
    with pytest.raises(ValueError):
        AscConfig(k=0, w=3, n=16, m=8)
    with pytest.raises(ValueError):
        AscConfig(k=2, w=2, n=16, m=8, puncture_fraction=1.0)
    with pytest.raises(ValueError):
        AscConfig(k=2, w=2, n=16, m=8, scaling="thirds")
    cfg = AscConfig(k=5, w=3, n=16, m=8)
    assert cfg.n_blocks == 7
    assert abs(cfg.scale - 1 / math.sqrt(3)) < 1e-15
    assert AscConfig(k=5, w=3, n=16, m=8, scaling="paper-literal").scale == 1 / 3


def test_encode_k1_w1_is_uncompressed_system():
    cfg = AscConfig(k=1, w=1, n=256, m=128, seed=3)
    cw = _codewords(1, 256, 0)
    blocks, book = asc_encode(cw, cfg)
    want = book.links[(0, 0)].op.forward(cw[0])
    assert np.array_equal(blocks[0], want)


def test_encode_shape_checks():
    cfg = AscConfig(k=2, w=2, n=64, m=32)
    with pytest.raises(ValueError):
        asc_encode(_codewords(3, 64, 0), cfg)
    with pytest.raises(ValueError):
        asc_encode(_codewords(2, 32, 0), cfg)


def test_interior_block_power_normalized():
    # power-normalized interior blocks: E||x_j||^2/M = 1 +- 0.02 at M = 2048
    # (sample statistics over seeds; single blocks fluctuate at the 3% level)
    powers = []
    for seed in range(4):
        blocks, _ = asc_encode(_codewords(6, 4096, 100 + seed),
                               AscConfig(k=6, w=3, n=4096, m=2048, seed=seed))
        powers.extend(float(np.mean(b ** 2)) for b in blocks[2:-2])
    assert abs(np.mean(powers) - 1.0) < 0.02


def test_paper_literal_power_is_one_over_w():
    cfg = AscConfig(k=6, w=3, n=4096, m=2048, seed=9, scaling="paper-literal")
    blocks, _ = asc_encode(_codewords(6, 4096, 5), cfg)
    interior = np.mean([np.mean(b ** 2) for b in blocks[2:-2]])
    assert abs(interior - 1.0 / 3.0) < 0.02


def test_same_interleaver_reduces_to_shared():
    cfg_i = AscConfig(k=4, w=2, n=256, m=128, mode="interleaved", seed=9)
    book = AscCodebook(cfg_i)
    perm0 = np.random.default_rng(55).permutation(256)
    for key in book.links:
        object.__setattr__(book.links[key], "perm", perm0)
    cws = _codewords(4, 256, 1)
    b_int, _ = asc_encode(cws, cfg_i, codebook=book)
    cfg_s = AscConfig(k=4, w=2, n=256, m=128, mode="shared", seed=9)
    b_sha, _ = asc_encode([c[perm0] for c in cws], cfg_s)
    assert all(np.array_equal(a, b) for a, b in zip(b_int, b_sha))


def test_transmit_noiseless_and_clip():
    cfg = AscConfig(k=3, w=2, n=128, m=64, seed=2)
    blocks, _ = asc_encode(_codewords(3, 128, 2), cfg)
    y = asc_transmit(blocks, awgn(1e-300), seed=0)
    assert all(np.max(np.abs(a - b)) < 1e-140 for a, b in zip(y, blocks))
    ch = ClipChannel.from_cr(1.0, 0.01)
    y2 = asc_transmit(blocks, ch, seed=0)
    bound = ch.alpha * ch.Z + 8 * math.sqrt(ch.sigma2)
    assert all(np.max(np.abs(b)) <= bound for b in y2)
    # CR = inf reduces to the linear system with the same noise seed
    y3 = asc_transmit(blocks, ClipChannel.from_cr(math.inf, 0.01), seed=0)
    y4 = asc_transmit(blocks, awgn(0.01), seed=0)
    assert all(np.array_equal(a, b) for a, b in zip(y3, y4))


def test_decode_k1_w1_reduces_to_amp_bitexact():
    cfg = AscConfig(k=1, w=1, n=512, m=256, seed=5)
    cws = _codewords(1, 512, 3)
    blocks, book = asc_encode(cws, cfg)
    ch = awgn(0.25)
    y = asc_transmit(blocks, ch, seed=5)
    den = Denoiser()
    c_hats, tr = asc_decode(y, cfg, den, ch, t_max=25, c_true=cws)
    c_ref, tr_ref = amp_run(y[0], book.links[(0, 0)].op, den, 0.25, t_max=25,
                            c_true=cws[0])
    assert np.array_equal(c_hats[0], c_ref)
    assert tr.iterations == tr_ref.iterations


def test_decode_k1_w1_gamp_reduction():
    cfg = AscConfig(k=1, w=1, n=256, m=128, seed=6)
    cws = _codewords(1, 256, 4)
    blocks, book = asc_encode(cws, cfg)
    ch = ClipChannel.from_cr(1.0, 0.25)
    y = asc_transmit(blocks, ch, seed=6)
    den = Denoiser()
    c_hats, _ = asc_decode(y, cfg, den, ch, t_max=20, c_true=cws)
    c_ref, _ = gamp_run(y[0], book.links[(0, 0)].op, den, ch, t_max=20,
                        c_true=cws[0])
    assert np.array_equal(c_hats[0], c_ref)


def test_decode_noiseless_orthonormal():
    cfg = AscConfig(k=1, w=1, n=64, m=64, seed=8,
                    operator={"kind": "subsampled-hadamard", "signs": False})
    cws = _codewords(1, 64, 6)
    blocks, _ = asc_encode(cws, cfg)
    y = asc_transmit(blocks, awgn(1e-12), seed=8)
    c_hats, _ = asc_decode(y, cfg, Denoiser(), awgn(1e-12), t_max=8, c_true=cws)
    assert np.array_equal(np.sign(c_hats[0]), cws[0])


def test_decode_checksum_guard():
    cfg = AscConfig(k=2, w=2, n=64, m=32, seed=1)
    blocks, book = asc_encode(_codewords(2, 64, 0), cfg)
    y = asc_transmit(blocks, awgn(0.1), seed=1)
    other = AscCodebook(AscConfig(k=2, w=2, n=64, m=32, seed=2))
    with pytest.raises(ValueError):
        asc_decode(y, cfg, Denoiser(), awgn(0.1), checksum=other.checksum())


def test_decode_wave_matches_coupled_se():
    # section-MSE wave propagates from the boundaries inward like the SE;
    # at N = 2048 the empirical front leads the SE by a fraction of an
    # iteration, so the band allows a small systematic offset on top of 3 s.e.
    db = 14.2
    sigma2 = 10 ** (-db / 10)
    n, m = 2048, 1024
    phi = PhiAwgn(m / n, sigma2)
    se = coupled_se(10, 3, phi, PSI_B, boundary="absent-blocks", v_tol=1e-12,
                    t_max=50_000, record_history=True)
    t_probe = min(8, len(se.history))
    emp = []
    for seed in range(6):
        cfg = AscConfig(k=10, w=3, n=n, m=m, seed=400 + seed)
        cws = _codewords(10, n, 700 + seed)
        blocks, book = asc_encode(cws, cfg)
        y = asc_transmit(blocks, awgn(sigma2), seed=400 + seed)
        _, tr = asc_decode(y, cfg, Denoiser(), awgn(sigma2), t_max=t_probe,
                           c_true=cws, codebook=book)
        emp.append(tr.v_blocks[t_probe - 1])
    emp = np.array(emp)
    se_v = se.history[t_probe - 1]
    band = 3.0 * emp.std(0, ddof=1) / math.sqrt(len(emp)) + 0.06
    assert np.all(np.abs(emp.mean(0) - se_v) <= band)
    # wave shape: boundaries lead, profile is symmetric-ish and inward-monotone
    prof = emp.mean(0)
    assert prof[0] < prof[3] < prof[5]
    assert prof[-1] < prof[-4] < prof[6]


def test_coupling_gain_over_stalled_uncoupled():
    # hadamard-block(16) instance: uncoupled SE stalls, potential minimizer
    # near zero; the K=20, W=3 decoder reaches the coupled-SE prediction
    code = CodeSpec("hadamard-block", 16)
    grid = np.logspace(-3, math.log10(30.0), 100)
    rho, pv, err = psi_estimate(code, bpsk(), grid, trials=24, seed=42,
                                symbols_per_trial=32768)
    psi16 = TransferCurve(axis="rho", knots=rho, values=pv, stderr=err)
    db, n, m = 10.5, 1024, 205
    sigma2 = 10 ** (-db / 10)
    phi = PhiAwgn(m / n, sigma2)
    fp = se_fixed_point(phi, psi16)
    pot = potential_report(phi, psi16)
    assert fp.v_star > 0.5                 # uncoupled stalls high
    assert pot.minimizer_v < 1e-2          # potential favors decoding
    se = coupled_se(20, 3, phi, psi16, boundary="absent-blocks", v_tol=1e-13,
                    t_max=100_000)
    se_v = np.asarray(psi16(se.rho))
    den = Denoiser(code, bpsk())
    mses = []
    for seed in range(20):
        cfg = AscConfig(k=20, w=3, n=n, m=m, seed=900 + seed)
        rng = np.random.default_rng(600 + seed)
        secs = [code.random_codeword(rng, n)[1] for _ in range(20)]
        blocks, book = asc_encode(secs, cfg)
        y = asc_transmit(blocks, awgn(sigma2), seed=900 + seed)
        _, tr = asc_decode(y, cfg, den, awgn(sigma2), t_max=600, c_true=secs,
                           codebook=book)
        mses.append(tr.section_mse[-1])
    mean_sec = np.array(mses).mean(axis=0)
    interior = slice(2, 18)
    assert np.all(mean_sec[interior] <= 10.0 * se_v[interior])


def test_puncture_identity_and_rates():
    blocks = [np.arange(10.0), np.arange(10.0) + 1]
    kept, masks = puncture(blocks, 0.0, seed=1)
    assert all(np.array_equal(a, b) for a, b in zip(kept, blocks))
    kept, masks = puncture(blocks, 0.5, seed=1)
    assert all(len(k) == 5 for k in kept)
    with pytest.raises(ValueError):
        puncture(blocks, 0.95, seed=1, m_full=10)
    # rate accounting: R_master / (1 - f) exactly
    master = asc_rate(0.5, 100, 3)
    assert abs(master - 0.4902) < 5e-5
    assert master / (1 - 0.5) == 2 * master
    assert abs(master / (1 - 0.5) - 0.9804) < 1e-4
    assert abs(master / (1 - 2 / 3) - 1.4706) < 2e-4


def test_punctured_decode_uses_matching_masks():
    # master delta = 0.75 punctured by 1/4 -> effective delta 0.5625, run
    # well above its threshold so the punctured decode is clean
    cfg = AscConfig(k=3, w=2, n=256, m=192, seed=17, puncture_fraction=0.25)
    cws = _codewords(3, 256, 11)
    blocks, book = asc_encode(cws, cfg)          # operators already punctured
    assert all(b.shape == (144,) for b in blocks)
    sigma2 = 10 ** (-1.6)
    y = asc_transmit(blocks, awgn(sigma2), seed=17)
    c_hats, _ = asc_decode(y, cfg, Denoiser(), awgn(sigma2), t_max=60,
                           c_true=cws)
    ber = np.mean([np.mean(np.sign(h) != c) for h, c in zip(c_hats, cws)])
    assert ber < 0.02


def test_multiuser_build_and_fusion():
    cfg = AscConfig(k=4, w=2, n=128, m=64, mode="multiuser", seed=9)
    plans, book = multiuser_build(cfg)
    assert [p.slots for p in plans] == [(0, 1), (1, 2), (2, 3), (3, 4)]
    cws = _codewords(4, 128, 2)
    agg = multiuser_fuse(plans, cws, book, cfg)
    cfg_i = AscConfig(k=4, w=2, n=128, m=64, mode="interleaved", seed=9)
    b_i, _ = asc_encode(cws, cfg_i)
    assert all(np.array_equal(a, b) for a, b in zip(agg, b_i))
    with pytest.raises(ValueError):
        multiuser_build(AscConfig(k=2, w=2, n=64, m=32, mode="shared"))


def test_multiuser_single_user():
    cfg = AscConfig(k=1, w=3, n=64, m=32, mode="multiuser", seed=4)
    plans, book = multiuser_build(cfg)
    assert plans[0].slots == (0, 1, 2)
    agg = multiuser_fuse(plans, _codewords(1, 64, 3), book, cfg)
    assert len(agg) == 3


def test_multiuser_paper_rates():
    # K = 16, W = 4, delta = 1725/4096 with a rate-1/4 code: aggregate 0.5
    r_ac = 0.25 / (1725 / 4096)
    assert abs(asc_rate(r_ac, 16, 4) - 0.5) < 2e-4
    r_ac = 0.25 / (1956 / 4096)
    assert abs(asc_rate(r_ac, 64, 4) - 0.5) < 2e-4


def test_rate_accounting_identity():
    # realized info bits per transmitted real symbol equals asc_rate exactly
    code = CodeSpec("hadamard-block", 16)
    cfg = AscConfig(k=5, w=2, n=256, m=128)
    bits_per_frame = cfg.k * (cfg.n // code.block_len) * code.bits_per_block
    symbols = cfg.n_blocks * cfg.m
    realized = bits_per_frame / symbols
    assert realized == asc_rate(code.rate / (cfg.m / cfg.n), cfg.k, cfg.w)
