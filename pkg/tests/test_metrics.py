"""Metric oracles: brute-force reimplementations plus closed-form identities.

The oracles below are written as literal sliding-window / per-pixel loops,
independent of the vectorized implementations they check.
"""
import math

import numpy as np
import pytest

from deeplight.baselines import bicubic_upsample
from deeplight.errors import DataError
from deeplight.metrics import (
    MetricsReport,
    aggregate,
    cc,
    evaluate_pair,
    piqe,
    psnr,
    sam,
    ssim,
    uiqi,
)


def random_pairs(n=10, size=32, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        yield (rng.uniform(0, 1, (size, size)), rng.uniform(0, 1, (size, size)))


# ---------------------------------------------------------------------------
# brute-force oracles
# ---------------------------------------------------------------------------

def psnr_brute(p, t):
    err = 0.0
    for a, b in zip(p.ravel(), t.ravel()):
        err += (a - b) ** 2
    return 10.0 * math.log10(1.0 / (err / p.size))


def sam_brute(p, t):
    num = float(np.sum(p * t))
    den = math.sqrt(float(np.sum(p * p))) * math.sqrt(float(np.sum(t * t)))
    return math.acos(min(1.0, max(-1.0, num / den)))


def cc_brute(p, t):
    return float(np.corrcoef(p.ravel(), t.ravel())[0, 1])


def _gauss11():
    g = np.array([math.exp(-((i - 5) ** 2) / (2 * 1.5 ** 2)) for i in range(11)])
    g /= g.sum()
    return np.outer(g, g)


def ssim_brute(p, t):
    k = _gauss11()
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    vals = []
    for i in range(p.shape[0] - 10):
        for j in range(p.shape[1] - 10):
            wp = p[i:i + 11, j:j + 11]
            wt = t[i:i + 11, j:j + 11]
            m1, m2 = (k * wp).sum(), (k * wt).sum()
            v1 = (k * wp * wp).sum() - m1 * m1
            v2 = (k * wt * wt).sum() - m2 * m2
            cv = (k * wp * wt).sum() - m1 * m2
            vals.append(((2 * m1 * m2 + c1) * (2 * cv + c2))
                        / ((m1 ** 2 + m2 ** 2 + c1) * (v1 + v2 + c2)))
    return float(np.mean(vals))


def uiqi_brute(p, t):
    vals, skipped = [], 0
    for i in range(p.shape[0] - 7):
        for j in range(p.shape[1] - 7):
            wp = p[i:i + 8, j:j + 8].ravel()
            wt = t[i:i + 8, j:j + 8].ravel()
            mp, mt = wp.mean(), wt.mean()
            vp, vt = wp.var(ddof=1), wt.var(ddof=1)
            cov = float(np.cov(wp, wt, ddof=1)[0, 1])
            den = (vp + vt) * (mp * mp + mt * mt)
            if den == 0.0:
                skipped += 1
                continue
            vals.append(4 * cov * mp * mt / den)
    return (float(np.mean(vals)) if vals else math.nan), skipped


def piqe_brute(img):
    x = img.astype(np.float64)
    sigma = 7.0 / 6.0
    k1 = np.array([math.exp(-0.5 * (i / sigma) ** 2) for i in range(-3, 4)])
    k1 /= k1.sum()
    k2 = np.outer(k1, k1)
    pad = np.pad(x, 3, mode="edge")
    mu = np.zeros_like(x)
    ex2 = np.zeros_like(x)
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            w = pad[i:i + 7, j:j + 7]
            mu[i, j] = (k2 * w).sum()
            ex2[i, j] = (k2 * w * w).sum()
    sd = np.sqrt(np.maximum(ex2 - mu * mu, 0.0))
    m = (x - mu) / (sd + 1.0 / 255.0)

    dist, active = 0.0, 0
    for by in range(x.shape[0] // 16):
        for bx in range(x.shape[1] // 16):
            blk = m[by * 16:by * 16 + 16, bx * 16:bx * 16 + 16]
            v = blk.var(ddof=1)
            if v <= 0.1:
                continue
            active += 1
            blocky = False
            for edge in (blk[0], blk[15], blk[:, 0], blk[:, 15]):
                for s in range(11):
                    if edge[s:s + 6].std(ddof=1) < 0.1:
                        blocky = True
            if blocky:
                dist += min(1.0, max(0.0, 1.0 - v))
            else:
                sblk = math.sqrt(v)
                scen = blk[4:12, 4:12].std(ddof=1)
                ratio = scen / sblk if sblk > 0 else 0.0
                top = max(sblk, ratio)
                beta = abs(sblk - ratio) / top if top > 0 else 0.0
                if sblk > 2 * beta:
                    dist += min(1.0, max(0.0, v))
    if active == 0:
        return 100.0, True
    return 100.0 * (dist + 1.0) / (active + 1.0), False


def test_all_metrics_match_brute_force_on_random_pairs():
    for p, t in random_pairs():
        assert psnr(p, t) == pytest.approx(psnr_brute(p, t), abs=1e-9)
        assert sam(p, t) == pytest.approx(sam_brute(p, t), abs=1e-9)
        assert cc(p, t) == pytest.approx(cc_brute(p, t), abs=1e-9)
        assert ssim(p, t) == pytest.approx(ssim_brute(p, t), abs=1e-6)
        q, skipped, _ = uiqi(p, t, return_counts=True)
        bq, bskipped = uiqi_brute(p, t)
        assert q == pytest.approx(bq, abs=1e-9)
        assert skipped == bskipped
        bs, bflag = piqe_brute(p)
        s, flag = piqe(p, return_flag=True)
        assert s == pytest.approx(bs, abs=1e-6)
        assert flag == bflag


# ---------------------------------------------------------------------------
# closed-form identities
# ---------------------------------------------------------------------------

def test_psnr_constant_offset_is_20db():
    t = np.random.default_rng(1).uniform(0.1, 0.8, (16, 16))
    assert psnr(t + 0.1, t) == pytest.approx(20.0, abs=1e-9)


def test_psnr_exact_match_is_inf():
    t = np.random.default_rng(2).uniform(0, 1, (16, 16))
    assert math.isinf(psnr(t, t))


def test_psnr_decreases_with_noise():
    rng = np.random.default_rng(3)
    t = rng.uniform(0, 1, (64, 64))
    vals = [psnr(t + rng.normal(0, s, t.shape), t) for s in (0.01, 0.05, 0.1)]
    assert vals[0] > vals[1] > vals[2]


def test_ssim_identities():
    rng = np.random.default_rng(4)
    t = rng.uniform(0, 1, (32, 32))
    assert ssim(t, t) == pytest.approx(1.0, abs=1e-12)
    a, b = 0.3, 0.7
    expect = (2 * a * b + 0.01 ** 2) / (a * a + b * b + 0.01 ** 2)
    got = ssim(np.full((16, 16), a), np.full((16, 16), b))
    assert got == pytest.approx(expect, abs=1e-9)
    with pytest.raises(DataError, match="smaller"):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))


def test_sam_identities():
    rng = np.random.default_rng(5)
    t = rng.uniform(0.1, 1, (16, 16))
    assert sam(t, t) == pytest.approx(0.0, abs=1e-6)
    assert sam(2 * t, t) == pytest.approx(0.0, abs=1e-6)
    left = np.zeros((4, 4)); left[:, :2] = 1
    right = np.zeros((4, 4)); right[:, 2:] = 1
    assert sam(left, right) == pytest.approx(math.pi / 2, abs=1e-12)
    assert math.isnan(sam(np.zeros_like(t), t))


def test_uiqi_identities():
    rng = np.random.default_rng(6)
    t = rng.uniform(0.2, 1, (16, 16))
    assert uiqi(t, t) == pytest.approx(1.0, abs=1e-12)
    # reflecting around a constant flips the covariance sign
    assert uiqi(1.0 - t, t) < 0
    assert math.isnan(uiqi(np.zeros((8, 8)), np.zeros((8, 8))))


def test_cc_identities():
    rng = np.random.default_rng(7)
    t = rng.uniform(0, 1, (16, 16))
    assert cc(3 * t + 5, t) == pytest.approx(1.0, abs=1e-12)
    assert cc(-t, t) == pytest.approx(-1.0, abs=1e-12)
    assert math.isnan(cc(np.full_like(t, 0.5), t))


def test_symmetry_of_windowed_metrics():
    for p, t in random_pairs(n=3, seed=8):
        assert ssim(p, t) == pytest.approx(ssim(t, p), abs=1e-12)
        assert uiqi(p, t) == pytest.approx(uiqi(t, p), abs=1e-12)
        assert cc(p, t) == pytest.approx(cc(t, p), abs=1e-12)


def test_piqe_constant_degenerate():
    s, flag = piqe(np.full((64, 64), 0.4), return_flag=True)
    assert flag and s == 100.0


def test_piqe_noise_worse_than_smooth():
    rng = np.random.default_rng(0)
    noise = rng.uniform(0, 1, (64, 64))
    y, x = np.mgrid[0:64, 0:64]
    smooth = 0.5 + 0.45 * np.sin(2 * np.pi * y / 12) * np.sin(2 * np.pi * x / 12)
    sn, fn = piqe(noise, return_flag=True)
    ss_, fs = piqe(smooth, return_flag=True)
    assert not fn and not fs
    assert sn > ss_


def test_piqe_range_and_brightness_invariance():
    for p, _ in random_pairs(n=5, seed=9):
        s = piqe(np.kron(p, np.ones((2, 2))))  # 64x64
        assert 0.0 <= s <= 100.0
    rng = np.random.default_rng(10)
    img = rng.uniform(0, 0.8, (64, 64))
    assert piqe(img + 0.1) == pytest.approx(piqe(img), abs=1e-6)


# ---------------------------------------------------------------------------
# evaluation and aggregation
# ---------------------------------------------------------------------------

def test_identity_prediction_report():
    rng = np.random.default_rng(11)
    t = rng.uniform(0, 1, (32, 32))
    r = evaluate_pair(t, t)
    assert r.degenerate["psnr"]  # exact match
    assert r.ssim == pytest.approx(1.0, abs=1e-9)
    assert r.sam_rad == pytest.approx(0.0, abs=1e-6)
    assert r.uiqi == pytest.approx(1.0, abs=1e-9)
    assert r.cc == pytest.approx(1.0, abs=1e-9)
    assert r.n_pixels == 1024


def test_aggregate_is_mean_of_tiles_excluding_degenerates():
    rng = np.random.default_rng(12)
    reports = [evaluate_pair(rng.uniform(0, 1, (32, 32)),
                             rng.uniform(0, 1, (32, 32)), tile_id=str(i))
               for i in range(4)]
    t = rng.uniform(0, 1, (32, 32))
    reports.append(evaluate_pair(t, t, tile_id="exact"))
    agg = aggregate(reports)
    assert agg["n_tiles"] == 5
    assert agg["degenerate_counts"]["psnr"] == 1
    finite = [r.psnr_db for r in reports[:4]]
    assert agg["psnr"] == pytest.approx(float(np.mean(finite)), abs=1e-12)
    assert agg["ssim"] == pytest.approx(
        float(np.mean([r.ssim for r in reports])), abs=1e-12)


# ---------------------------------------------------------------------------
# bicubic baseline
# ---------------------------------------------------------------------------

def bicubic_brute(lr, r):
    def kern(d, a=-0.5):
        d = abs(d)
        if d <= 1:
            return (a + 2) * d ** 3 - (a + 3) * d ** 2 + 1
        if d < 2:
            return a * d ** 3 - 5 * a * d ** 2 + 8 * a * d - 4 * a
        return 0.0

    h, w = lr.shape
    out = np.zeros((h * r, w * r))
    for i in range(h * r):
        for j in range(w * r):
            sy = (i + 0.5) / r - 0.5
            sx = (j + 0.5) / r - 0.5
            by, bx = math.floor(sy), math.floor(sx)
            acc = 0.0
            for dy in (-1, 0, 1, 2):
                for dx in (-1, 0, 1, 2):
                    wgt = kern(sy - by - dy) * kern(sx - bx - dx)
                    yy = min(max(by + dy, 0), h - 1)
                    xx = min(max(bx + dx, 0), w - 1)
                    acc += wgt * lr[yy, xx]
            out[i, j] = acc
    return out


def test_bicubic_matches_per_pixel_oracle():
    rng = np.random.default_rng(13)
    lr = rng.uniform(0, 1, (6, 5))
    np.testing.assert_allclose(bicubic_upsample(lr, 4), bicubic_brute(lr, 4),
                               atol=1e-12)


def test_bicubic_preserves_constants_and_symmetry():
    c = bicubic_upsample(np.full((8, 8), 0.37), 8)
    np.testing.assert_allclose(c, 0.37, atol=1e-12)
    rng = np.random.default_rng(14)
    lr = rng.uniform(0, 1, (8, 8))
    up = bicubic_upsample(lr, 4)
    up_flipped = bicubic_upsample(lr[::-1, :], 4)
    np.testing.assert_allclose(up_flipped, up[::-1, :], atol=1e-12)
