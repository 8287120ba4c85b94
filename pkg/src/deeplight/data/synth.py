"""Procedural night-light scenes and the sensor degradation pipeline.

A scene is built outward from terrain: elevation first, settlements on the
flat parts, light where the settlements are, and a 7-band daytime composite
over everything.  Radiance inside a settlement is not uniform: a built-density
speckle (lit blocks and dark gaps a few pixels wide) modulates the radial
falloff, and the same speckle shades the composite's built-up tones.  The
composite also carries unlit look-alike patches (bare rock, quarries) that
share the built-up tones but emit nothing and are excluded from the surface
mask, exactly the ambiguity such masks exist to resolve.  The low-resolution
night-light raster is then produced by running the high-resolution one
through a fixed degradation chain that mimics a coarse legacy sensor: bloom,
saturation clipping, a small misregistration warp, box-average downsampling,
read noise, and 6-bit quantization.  The bloom wipes the speckle out of the
low-res product entirely, so intra-settlement structure is only observable
through the daytime bands, as with real sensors.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from ..errors import ConfigError, DataError

# quantization depth of each stored modality, recorded in bundle metadata
LR_NTL_BITS = 6
HR_NTL_BITS = 12
DMO_BITS = 14

_DEM_CAP_M = 8848.0  # normalization ceiling for elevation

# constant component of the LR-vs-HR misregistration, as a fraction of
# warp_max_px per axis (dy, dx); the per-scene residual adds up to
# _RESIDUAL_FRAC on top, keeping total displacement under warp_max_px
_BASE_SHIFT = (-0.25, 0.40)
_RESIDUAL_FRAC = 0.25

# built-density speckle: feature wavelength in pixels, radiance multiplier
# range (dark gaps keep a floor so footprints never go fully dark), and the
# milder modulation applied to the composite's urban tones
_TEX_WAVELEN_PX = 7
_TEX_NTL = (0.05, 0.95)
_TEX_DMO = (0.75, 0.25)

# unlit look-alike patches per scene (inclusive range)
_DECOYS = (2, 6)


@dataclass(frozen=True)
class SceneSpec:
    """Everything needed to regenerate one scene bit-for-bit."""

    seed: int
    hr_size: int = 256
    scale_r: int = 8
    num_settlements: tuple[int, int] = (6, 10)
    terrain_roughness: float = 0.55
    saturation_level: float = 0.85
    bloom_sigma_px: float = 6.0
    warp_max_px: float = 6.0
    noise_sigma: float = 0.015

    def __post_init__(self):
        if self.hr_size < 8 or self.scale_r < 1:
            raise ConfigError("hr_size must be >= 8 and scale_r >= 1")
        if self.hr_size % self.scale_r != 0:
            raise ConfigError(
                f"hr_size {self.hr_size} not divisible by scale_r {self.scale_r}")
        if not self.warp_max_px < self.hr_size / self.scale_r:
            raise ConfigError("warp_max_px must be < hr_size / scale_r")
        lo, hi = self.num_settlements
        if lo < 0 or hi < lo:
            raise ConfigError("num_settlements range must satisfy 0 <= lo <= hi")
        if not 0.0 < self.saturation_level <= 1.0:
            raise ConfigError("saturation_level must lie in (0, 1]")
        if not 0.0 < self.terrain_roughness <= 1.0:
            raise ConfigError("terrain_roughness must lie in (0, 1]")
        if self.bloom_sigma_px < 0 or self.noise_sigma < 0 or self.warp_max_px < 0:
            raise ConfigError("bloom/warp/noise parameters must be non-negative")

    def to_dict(self) -> dict[str, str]:
        d = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "num_settlements":
                v = f"{v[0]},{v[1]}"
            d[f.name] = str(v)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, str]) -> "SceneSpec":
        kw = {}
        for f in dataclasses.fields(cls):
            if f.name not in d:
                raise ConfigError(f"scene spec missing field '{f.name}'")
            raw = d[f.name]
            if f.name == "num_settlements":
                lo, hi = raw.split(",")
                kw[f.name] = (int(lo), int(hi))
            elif f.name in ("seed", "hr_size", "scale_r"):
                kw[f.name] = int(raw)
            else:
                kw[f.name] = float(raw)
        return cls(**kw)


@dataclass
class ModalityBundle:
    """One scene's rasters.  Single-band arrays are 2D, the composite is
    (7, H, W).  `isp` is uint8 in {0, 1}; everything else float32 in [0, 1].
    """

    lr_ntl: np.ndarray
    hr_ntl: np.ndarray
    dmo: np.ndarray
    dem: np.ndarray
    isp: np.ndarray
    meta: dict[str, str] = field(default_factory=dict)

    def validate(self):
        h, w = self.hr_ntl.shape
        lh, lw = self.lr_ntl.shape
        if lh == 0 or h % lh or w % lw or h // lh != w // lw:
            raise DataError(
                f"lr size {self.lr_ntl.shape} is not an integer divisor of "
                f"hr size {self.hr_ntl.shape}")
        if self.dmo.ndim != 3 or self.dmo.shape[1:] != (h, w):
            raise DataError(f"dmo shape {self.dmo.shape} does not match hr {h}x{w}")
        if self.dem.shape != (h, w) or self.isp.shape != (h, w):
            raise DataError("dem/isp shape does not match hr_ntl")
        for name in ("lr_ntl", "hr_ntl", "dmo", "dem"):
            a = getattr(self, name)
            if not np.isfinite(a).all():
                raise DataError(f"{name} contains non-finite values")
            if a.min() < 0 or a.max() > 1:
                raise DataError(f"{name} values outside [0, 1]")
        if not np.isin(self.isp, (0, 1)).all():
            raise DataError("isp mask is not binary")

    @property
    def scale_r(self) -> int:
        return self.hr_ntl.shape[0] // self.lr_ntl.shape[0]


def _quantize(x: np.ndarray, bits: int) -> np.ndarray:
    levels = float(2 ** bits - 1)
    return np.clip(np.round(x * levels) / levels, 0.0, 1.0)


def settlement_count(spec: SceneSpec) -> int:
    """Settlement count for a scene, on its own stream so split planning
    can stratify by it without generating the scene."""
    lo, hi = spec.num_settlements
    if hi == 0:
        return 0
    rng = np.random.default_rng([spec.seed, 0x5E])
    return int(rng.integers(lo, hi + 1))


def settlement_photometry(spec: SceneSpec) -> dict[str, np.ndarray]:
    """Per-settlement ellipse axes, orientation, peak and falloff extent.

    Drawn on a dedicated stream, independent of terrain, so a scene's
    brightness can be predicted from its seed alone (used to stratify
    dataset splits).
    """
    n = settlement_count(spec)
    rng = np.random.default_rng([spec.seed, 0x5F])
    return {
        "a": rng.uniform(5.0, 9.0, n),
        "b": rng.uniform(5.0, 9.0, n),
        "phi": rng.uniform(0.0, np.pi, n),
        "peak": rng.uniform(0.45, 1.0, n),
        "fall": rng.uniform(1.25, 1.6, n),
    }


def brightness_proxy(spec: SceneSpec) -> float:
    """Expected lit mass up to a constant: sum of peak * a * b * fall^2."""
    p = settlement_photometry(spec)
    return float(np.sum(p["peak"] * p["a"] * p["b"] * p["fall"] ** 2))


def _lattice_field(rng: np.random.Generator, size: int, cells: int) -> np.ndarray:
    """Piecewise-bilinear field in [-1, 1] from a (cells+1)^2 value lattice."""
    lat = rng.uniform(-1.0, 1.0, (cells + 1, cells + 1))
    u = (np.arange(size) + 0.5) * (cells / size)
    uu, vv = np.meshgrid(u, u, indexing="ij")
    return ndimage.map_coordinates(lat, [uu, vv], order=1, mode="nearest")


def _terrain(rng: np.random.Generator, size: int, roughness: float):
    base = np.zeros((size, size))
    for octave in range(5):
        amp = roughness ** octave
        base += amp * _lattice_field(rng, size, 3 * 2 ** octave)
    base -= base.min()
    peak = base.max()
    if peak > 0:
        base /= peak
    height_m = base ** 2.5 * _DEM_CAP_M  # long-tailed: few high peaks
    dem = np.log1p(height_m) / np.log1p(_DEM_CAP_M)
    gy, gx = np.gradient(base)
    slope = np.hypot(gy, gx)
    return base, dem, slope, gy, gx


def _place_settlements(rng, size, slope, count):
    """Pick centers biased toward flat ground, keeping them apart."""
    margin = 18
    if count == 0 or size <= 2 * margin:
        return []
    m = max(60, 24 * count)
    ys = rng.integers(margin, size - margin, m)
    xs = rng.integers(margin, size - margin, m)
    order = np.argsort(slope[ys, xs], kind="stable")
    centers = []
    for idx in order:
        y, x = int(ys[idx]), int(xs[idx])
        if all((y - cy) ** 2 + (x - cx) ** 2 >= 16 ** 2 for cy, cx in centers):
            centers.append((y, x))
        if len(centers) == count:
            break
    return centers


def _built_density(spec: SceneSpec) -> np.ndarray:
    """Binary lit-block/dark-gap speckle at roughly _TEX_WAVELEN_PX scale."""
    rng = np.random.default_rng([spec.seed, 0x60])
    cells = max(2, spec.hr_size // _TEX_WAVELEN_PX)
    return (_lattice_field(rng, spec.hr_size, cells) > 0.0).astype(np.float64)


def _decoy_mask(spec: SceneSpec, slope, centers) -> np.ndarray:
    """Unlit patches that look built-up in the composite.

    Same ellipse family and flat-ground bias as real settlements, kept off
    their footprints, drawn on a dedicated stream so radiance, terrain and
    the composite's moisture/grain draws are untouched.  The patches carry
    urban tones and the block speckle in the composite but no light and no
    surface-mask entry, so the mask is the only input that tells lit fabric
    from bare look-alike ground.
    """
    size = spec.hr_size
    mask = np.zeros((size, size), dtype=bool)
    margin = 18
    if size <= 2 * margin:
        return mask
    rng = np.random.default_rng([spec.seed, 0x61])
    count = int(rng.integers(_DECOYS[0], _DECOYS[1] + 1))
    m = max(60, 24 * count)
    ys = rng.integers(margin, size - margin, m)
    xs = rng.integers(margin, size - margin, m)
    a = rng.uniform(5.0, 9.0, m)
    b = rng.uniform(5.0, 9.0, m)
    phi = rng.uniform(0.0, np.pi, m)
    order = np.argsort(slope[ys, xs], kind="stable")
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    placed = []
    for idx in order:
        y, x = int(ys[idx]), int(xs[idx])
        if any((y - cy) ** 2 + (x - cx) ** 2 < 32 ** 2 for cy, cx in centers):
            continue
        if any((y - py) ** 2 + (x - px) ** 2 < 20 ** 2 for py, px in placed):
            continue
        dy, dx = yy - y, xx - x
        u = (dx * np.cos(phi[idx]) + dy * np.sin(phi[idx])) / a[idx]
        v = (-dx * np.sin(phi[idx]) + dy * np.cos(phi[idx])) / b[idx]
        mask |= u * u + v * v <= 1.0
        placed.append((y, x))
        if len(placed) == count:
            break
    return mask


def _settlement_layers(size, centers, photometry):
    """ISP footprint union and peak-normalized light field from ellipses."""
    isp = np.zeros((size, size), dtype=bool)
    ntl = np.zeros((size, size))
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    for i, (cy, cx) in enumerate(centers):
        a, b = photometry["a"][i], photometry["b"][i]
        phi, fall = photometry["phi"][i], photometry["fall"][i]
        dy, dx = yy - cy, xx - cx
        u = (dx * np.cos(phi) + dy * np.sin(phi)) / a
        v = (-dx * np.sin(phi) + dy * np.cos(phi)) / b
        d = np.sqrt(u * u + v * v)
        isp |= d <= 1.0
        glow = photometry["peak"][i] * np.clip(1.0 - d / fall, 0.0, None) ** 1.5
        np.maximum(ntl, glow, out=ntl)
    return isp, ntl


def _apply_density(envelope: np.ndarray, density: np.ndarray):
    """Modulate the falloff envelope by the speckle, mass-neutrally.

    The speckle is recentred against the envelope-weighted mean before use,
    so a scene's total radiance stays what its photometry predicts and the
    split stratification keyed on that prediction stays valid.  Returns the
    modulated field and the recentred density (the composite paints the
    latter so the optical bands show exactly the pattern the lights follow).
    """
    mass = envelope.sum()
    if mass > 0:
        density = density + (0.5 - float((envelope * density).sum() / mass))
    lo, hi = _TEX_NTL
    return np.clip(envelope * (lo + hi * density), 0.0, 1.0), density


# per-class band tones for the 7-band daytime composite; settlements are
# distinctly bright in the long-wavelength bands so built-up areas stay
# recognizable after quantization
_TONES = {
    "water":  (0.10, 0.12, 0.15, 0.10, 0.05, 0.03, 0.02),
    "veg":    (0.12, 0.18, 0.15, 0.45, 0.30, 0.22, 0.15),
    "barren": (0.25, 0.28, 0.32, 0.38, 0.45, 0.42, 0.40),
    "urban":  (0.45, 0.48, 0.52, 0.50, 0.62, 0.68, 0.72),
}
_SHADE_W = (0.30, 0.30, 0.30, 0.25, 0.20, 0.20, 0.15)


def _daytime_composite(rng, size, base, gy, gx, built, density):
    water = base < np.quantile(base, 0.12)
    moisture = _lattice_field(rng, size, 6)
    veg = (moisture > 0.1) & ~water
    shade = np.tanh(40.0 * (gx - gy))
    grain = rng.normal(0.0, 0.02, (7, size, size))
    lo, hi = _TEX_DMO
    urban_mod = lo + hi * density
    bands = np.empty((7, size, size))
    for i in range(7):
        tone = np.full((size, size), _TONES["barren"][i])
        tone[veg] = _TONES["veg"][i]
        tone[water] = _TONES["water"][i]
        tone[built] = _TONES["urban"][i] * urban_mod[built]
        bands[i] = tone + 0.25 * _SHADE_W[i] * shade + grain[i]
    return np.clip(bands, 0.0, 1.0)


def _smooth_warp(x: np.ndarray, spec: SceneSpec) -> np.ndarray:
    h, w = x.shape
    m = spec.warp_max_px
    rng = np.random.default_rng([spec.seed, 0xA7])
    dy = _BASE_SHIFT[0] * m + _RESIDUAL_FRAC * m * _lattice_field(rng, h, 4)
    dx = _BASE_SHIFT[1] * m + _RESIDUAL_FRAC * m * _lattice_field(rng, h, 4)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return ndimage.map_coordinates(x, [yy + dy, xx + dx], order=1, mode="grid-wrap")


def degrade(hr_ntl: np.ndarray, spec: SceneSpec) -> np.ndarray:
    """High-res light field -> coarse sensor product.

    Stage order: Gaussian bloom, saturation clip + renormalize, smooth
    misregistration warp, r x r box average, additive Gaussian noise,
    6-bit quantization, clamp to [0, 1].  Wrap boundaries keep the bloom
    mean-conserving and the whole deterministic chain equivariant to
    shifts by multiples of r.
    """
    h, w = hr_ntl.shape
    r = spec.scale_r
    if h % r or w % r:
        raise DataError(f"hr shape {hr_ntl.shape} not divisible by r={r}")
    x = hr_ntl.astype(np.float64)
    if spec.bloom_sigma_px > 0:
        x = ndimage.gaussian_filter(x, spec.bloom_sigma_px, mode="wrap")
    x = np.minimum(x, spec.saturation_level) / spec.saturation_level
    if spec.warp_max_px > 0:
        x = _smooth_warp(x, spec)
    x = x.reshape(h // r, r, w // r, r).mean(axis=(1, 3))
    if spec.noise_sigma > 0:
        rng = np.random.default_rng([spec.seed, 0xB1])
        x = x + rng.normal(0.0, spec.noise_sigma, x.shape)
    return _quantize(x, LR_NTL_BITS).astype(np.float32)


def generate_scene(spec: SceneSpec) -> ModalityBundle:
    """Deterministic per-seed scene synthesis; see the module docstring."""
    size = spec.hr_size
    rng = np.random.default_rng([spec.seed, 0x5C])
    base, dem, slope, gy, gx = _terrain(rng, size, spec.terrain_roughness)
    centers = _place_settlements(rng, size, slope, settlement_count(spec))
    isp, envelope = _settlement_layers(size, centers,
                                       settlement_photometry(spec))
    glow, density = _apply_density(envelope, _built_density(spec))
    hr_ntl = _quantize(glow, HR_NTL_BITS).astype(np.float32)
    dmo = _quantize(_daytime_composite(rng, size, base, gy, gx, isp, density),
                    DMO_BITS).astype(np.float32)
    lr_ntl = degrade(hr_ntl, spec)
    meta = dict(spec.to_dict())
    meta.update(lr_quant_bits=str(LR_NTL_BITS), hr_quant_bits=str(HR_NTL_BITS),
                dmo_quant_bits=str(DMO_BITS))
    bundle = ModalityBundle(
        lr_ntl=lr_ntl,
        hr_ntl=hr_ntl,
        dmo=dmo,
        dem=dem.astype(np.float32),
        isp=isp.astype(np.uint8),
        meta={k: str(v) for k, v in meta.items()},
    )
    bundle.validate()
    return bundle
