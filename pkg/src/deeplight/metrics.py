"""Image quality measures: PSNR, SSIM, SAM, UIQI, CC, and PIQE.

Five full-reference metrics plus one no-reference metric.  All operate on
single-band float images, nominally in [0, 1].  Degenerate inputs (flat or
all-zero images, common in mostly-dark night-light tiles) yield NaN or a
sentinel score together with an explicit flag instead of raising.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .errors import DataError

# documented interpretation choices, embedded in every JSON report
METRIC_NOTES = {
    "sam": "computed over flattened single-band intensity vectors",
    "uiqi": "8x8 stride-1 windows, unbiased (n-1) moments; "
            "zero-denominator windows skipped and counted",
    "piqe": "MSCN via 7x7 Gaussian (sigma 7/6) on [0,1] floats with "
            "stabilizer 1/255; 16x16 blocks, activity threshold 0.1; "
            "edge segments length 6 stride 1, uniformity threshold 0.1; "
            "noise test sigma > 2*beta with beta from the center-surround "
            "deviation ratio; block contributions clamped to [0,1]; "
            "no final max-normalization or rounding",
}


def _as_image(x, name="image") -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 3 and a.shape[0] == 1:
        a = a[0]
    if a.ndim != 2:
        raise DataError(f"{name} must be single-band 2D, got shape {a.shape}")
    return a


def _pair(pred, target):
    p, t = _as_image(pred, "pred"), _as_image(target, "target")
    if p.shape != t.shape:
        raise DataError(f"shape mismatch: pred {p.shape} vs target {t.shape}")
    return p, t


def psnr(pred, target, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE); +inf when the images match exactly."""
    if peak <= 0:
        raise DataError("peak must be positive")
    p, t = _pair(pred, target)
    mse = float(np.mean((p - t) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


_SSIM_C1 = 0.01 ** 2
_SSIM_C2 = 0.03 ** 2


def _ssim_kernel() -> np.ndarray:
    g = np.exp(-((np.arange(11) - 5.0) ** 2) / (2.0 * 1.5 ** 2))
    g /= g.sum()
    return np.outer(g, g)


def ssim(pred, target) -> float:
    """Mean SSIM over valid 11x11 Gaussian (sigma 1.5) windows."""
    p, t = _pair(pred, target)
    if min(p.shape) < 11:
        raise DataError(f"image {p.shape} smaller than the 11x11 ssim window")
    k = _ssim_kernel()

    def win(x):
        return ndimage.correlate(x, k, mode="constant")[5:-5, 5:-5]

    mu1, mu2 = win(p), win(t)
    s11 = win(p * p) - mu1 * mu1
    s22 = win(t * t) - mu2 * mu2
    s12 = win(p * t) - mu1 * mu2
    num = (2 * mu1 * mu2 + _SSIM_C1) * (2 * s12 + _SSIM_C2)
    den = (mu1 ** 2 + mu2 ** 2 + _SSIM_C1) * (s11 + s22 + _SSIM_C2)
    return float(np.mean(num / den))


def sam(pred, target) -> float:
    """Angle in radians between the flattened intensity vectors.

    NaN (degenerate) when either image is all-zero.
    """
    p, t = _pair(pred, target)
    np_, nt = float(np.linalg.norm(p)), float(np.linalg.norm(t))
    if np_ == 0.0 or nt == 0.0:
        return math.nan
    cosang = float(np.dot(p.ravel(), t.ravel()) / (np_ * nt))
    return float(np.arccos(np.clip(cosang, -1.0, 1.0)))


def uiqi(pred, target, return_counts: bool = False):
    """Universal image quality index over 8x8 stride-1 windows.

    Windows whose denominator is exactly zero are skipped and counted.
    NaN (degenerate) when every window is skipped.
    """
    p, t = _pair(pred, target)
    if min(p.shape) < 8:
        raise DataError(f"image {p.shape} smaller than the 8x8 uiqi window")
    wp = sliding_window_view(p, (8, 8)).reshape(-1, 64)
    wt = sliding_window_view(t, (8, 8)).reshape(-1, 64)
    mp, mt = wp.mean(axis=1), wt.mean(axis=1)
    vp, vt = wp.var(axis=1, ddof=1), wt.var(axis=1, ddof=1)
    cov = ((wp - mp[:, None]) * (wt - mt[:, None])).sum(axis=1) / 63.0
    den = (vp + vt) * (mp * mp + mt * mt)
    ok = den != 0.0
    skipped = int((~ok).sum())
    if not ok.any():
        q = math.nan
    else:
        q = float(np.mean(4.0 * cov[ok] * mp[ok] * mt[ok] / den[ok]))
    if return_counts:
        return q, skipped, len(den)
    return q


def cc(pred, target) -> float:
    """Pearson correlation over all pixels; NaN when either side is flat."""
    p, t = _pair(pred, target)
    dp, dt = p - p.mean(), t - t.mean()
    sp = float(np.sqrt((dp * dp).sum()))
    st = float(np.sqrt((dt * dt).sum()))
    if sp == 0.0 or st == 0.0:
        return math.nan
    return float((dp * dt).sum() / (sp * st))


# --- PIQE -------------------------------------------------------------------

_PIQE_BLOCK = 16
_PIQE_ACTIVITY_THR = 0.1
_PIQE_SEG_LEN = 6
_PIQE_SEG_THR = 0.1
_PIQE_C0 = 1.0
_PIQE_STABILIZER = 1.0 / 255.0


def _mscn(x: np.ndarray) -> np.ndarray:
    mu = ndimage.gaussian_filter(x, 7.0 / 6.0, radius=3, mode="nearest")
    ex2 = ndimage.gaussian_filter(x * x, 7.0 / 6.0, radius=3, mode="nearest")
    sigma = np.sqrt(np.maximum(ex2 - mu * mu, 0.0))
    return (x - mu) / (sigma + _PIQE_STABILIZER)


def _segments_uniform(edge: np.ndarray) -> bool:
    """Any length-6 stride-1 segment with std below the uniformity bound?"""
    segs = sliding_window_view(edge, _PIQE_SEG_LEN)
    return bool((segs.std(axis=1, ddof=1) < _PIQE_SEG_THR).any())


def _block_noisy(block: np.ndarray, sigma_blk: float) -> bool:
    center = block[4:12, 4:12]
    sigma_cen = float(center.std(ddof=1))
    ratio = sigma_cen / sigma_blk if sigma_blk > 0 else 0.0
    top = max(sigma_blk, ratio)
    beta = abs(sigma_blk - ratio) / top if top > 0 else 0.0
    return sigma_blk > 2.0 * beta


def piqe(image, return_flag: bool = False):
    """No-reference block-distortion score; lower is better, range [0, 100].

    With no spatially active blocks the score degenerates to 100 and the
    flag (second return value when requested) is set.
    """
    x = _as_image(image)
    if min(x.shape) < 32:
        raise DataError(f"image {x.shape} smaller than 32x32 for piqe")
    m = _mscn(x)
    nby, nbx = x.shape[0] // _PIQE_BLOCK, x.shape[1] // _PIQE_BLOCK
    dist_sum = 0.0
    n_active = 0
    for by in range(nby):
        for bx in range(nbx):
            blk = m[by * 16:(by + 1) * 16, bx * 16:(bx + 1) * 16]
            v = float(blk.var(ddof=1))
            if v <= _PIQE_ACTIVITY_THR:
                continue
            n_active += 1
            edges = (blk[0, :], blk[-1, :], blk[:, 0], blk[:, -1])
            if any(_segments_uniform(e) for e in edges):
                dist_sum += float(np.clip(1.0 - v, 0.0, 1.0))
            elif _block_noisy(blk, math.sqrt(v)):
                dist_sum += float(np.clip(v, 0.0, 1.0))
    degenerate = n_active == 0
    score = 100.0 * (dist_sum + _PIQE_C0) / (n_active + _PIQE_C0)
    if return_flag:
        return score, degenerate
    return score


# --- bundle evaluation -------------------------------------------------------

@dataclass
class MetricsReport:
    psnr_db: float
    ssim: float
    sam_rad: float
    uiqi: float
    cc: float
    piqe: float
    n_pixels: int
    degenerate: dict[str, bool] = field(default_factory=dict)
    uiqi_skipped_windows: int = 0
    tile_id: str | None = None

    def to_dict(self) -> dict:
        d = {
            "psnr": self.psnr_db, "ssim": self.ssim, "sam": self.sam_rad,
            "uiqi": self.uiqi, "cc": self.cc, "piqe": self.piqe,
            "n_pixels": self.n_pixels,
            "degenerate": dict(self.degenerate),
            "uiqi_skipped_windows": self.uiqi_skipped_windows,
        }
        if self.tile_id is not None:
            d["tile_id"] = self.tile_id
        return d


METRIC_KEYS = ("psnr", "ssim", "sam", "uiqi", "cc", "piqe")


def evaluate_pair(pred, target, tile_id: str | None = None) -> MetricsReport:
    if tile_id is not None:
        try:
            r = evaluate_pair(pred, target)
        except DataError as e:
            raise DataError(f"tile {tile_id}: {e}") from e
        r.tile_id = tile_id
        return r
    p, t = _pair(pred, target)
    ps = psnr(p, t)
    q, skipped, _total = uiqi(p, t, return_counts=True)
    pq, pq_degen = piqe(p, return_flag=True)
    sam_v = sam(p, t)
    cc_v = cc(p, t)
    flags = {
        "psnr": math.isinf(ps),  # exact match
        "sam": math.isnan(sam_v),
        "uiqi": math.isnan(q),
        "cc": math.isnan(cc_v),
        "piqe": pq_degen,
    }
    return MetricsReport(
        psnr_db=ps, ssim=ssim(p, t), sam_rad=sam_v, uiqi=q, cc=cc_v, piqe=pq,
        n_pixels=int(p.size), degenerate=flags,
        uiqi_skipped_windows=skipped, tile_id=tile_id)


def evaluate_bundle(pred_sr, bundle, tile_id: str | None = None) -> MetricsReport:
    """Score a super-resolved prediction against the bundle's HR target."""
    return evaluate_pair(pred_sr, bundle.hr_ntl, tile_id=tile_id)


def aggregate(reports: list[MetricsReport]) -> dict:
    """Unweighted mean per metric, excluding (and counting) degenerate tiles.

    PSNR exact matches count as degenerate for averaging purposes since the
    value is infinite.
    """
    out: dict = {"n_tiles": len(reports), "degenerate_counts": {}}
    values = {
        "psnr": [r.psnr_db for r in reports], "ssim": [r.ssim for r in reports],
        "sam": [r.sam_rad for r in reports], "uiqi": [r.uiqi for r in reports],
        "cc": [r.cc for r in reports], "piqe": [r.piqe for r in reports],
    }
    for key in METRIC_KEYS:
        good = [
            v for r, v in zip(reports, values[key])
            if not r.degenerate.get(key, False)
        ]
        out["degenerate_counts"][key] = len(reports) - len(good)
        out[key] = float(np.mean(good)) if good else math.nan
    return out
