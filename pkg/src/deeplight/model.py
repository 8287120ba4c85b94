"""Three-stage super-resolution network over the autodiff engine.

Stage 1 (CAA): calibration-aware alignment. a localization net regresses a
global affine warp from the low-res nightlight raster; the warped raster goes
through an offset-predicting deformable conv; auxiliary modalities (daytime
bands, terrain) are downsampled to the low-res grid, warped by the same
affine, and calibrated by two convs.

Stage 2 (AMFF): two stacked cross-modality fusion blocks (CMFM): fuse the
auxiliary features, then fuse the result with the nightlight features.

Stage 3 (AER): log2(r) upsampling blocks (1x1 conv to 4C + pixel shuffle),
one single-channel prediction head per scale, plus a settlement-mask (ISP)
head on the finest prediction.

Ablation variants prune the parameters they disable so that every built
parameter is touched by forward and receives a gradient.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import engine as E
from .engine import Tensor
from .errors import ConfigError, DataError

ABLATIONS = ("none", "no-lr-ntl", "no-dmo", "no-dem", "no-isp",
             "no-caa", "no-amff", "no-aer")

LEAKY_SLOPE = 0.1


@dataclass
class ModelConfig:
    scale_r: int = 8
    lr_size: tuple[int, int] = (32, 32)
    base_channels: int = 32
    num_res_blocks: int = 3
    num_scales_m: int = 3
    dmo_bands: int = 7
    offset_kernel: int = 3
    ablation: str = "none"

    def __post_init__(self):
        if self.scale_r < 2:
            raise ConfigError(f"scale_r must be >= 2, got {self.scale_r}")
        if 2 ** self.num_scales_m != self.scale_r:
            raise ConfigError(
                f"num_scales_m must satisfy 2^m == scale_r: m={self.num_scales_m}, "
                f"r={self.scale_r}")
        if self.base_channels < 4:
            raise ConfigError(f"base_channels must be >= 4, got {self.base_channels}")
        if self.num_res_blocks < 1:
            raise ConfigError(f"num_res_blocks must be >= 1, got {self.num_res_blocks}")
        if self.dmo_bands < 1:
            raise ConfigError(f"dmo_bands must be >= 1, got {self.dmo_bands}")
        if self.offset_kernel % 2 != 1 or self.offset_kernel < 1:
            raise ConfigError(f"offset_kernel must be odd, got {self.offset_kernel}")
        h, w = self.lr_size
        if h < 8 or w < 8:
            raise ConfigError(f"lr_size must be at least 8x8, got {self.lr_size}")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}, "
                              f"got {self.ablation!r}")

    def to_dict(self) -> dict:
        return {
            "scale_r": self.scale_r,
            "lr_size": f"{self.lr_size[0]}x{self.lr_size[1]}",
            "base_channels": self.base_channels,
            "num_res_blocks": self.num_res_blocks,
            "num_scales_m": self.num_scales_m,
            "dmo_bands": self.dmo_bands,
            "offset_kernel": self.offset_kernel,
            "ablation": self.ablation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        h, w = str(d.get("lr_size", "32x32")).split("x")
        return cls(
            scale_r=int(d.get("scale_r", 8)),
            lr_size=(int(h), int(w)),
            base_channels=int(d.get("base_channels", 32)),
            num_res_blocks=int(d.get("num_res_blocks", 3)),
            num_scales_m=int(d.get("num_scales_m", 3)),
            dmo_bands=int(d.get("dmo_bands", 7)),
            offset_kernel=int(d.get("offset_kernel", 3)),
            ablation=str(d.get("ablation", "none")),
        )


@dataclass
class ForwardOutputs:
    sr_pyramid: list[Tensor]
    isp_logits: Tensor | None


class ModelState:
    """Config plus the ordered, closed set of named parameter tensors."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: p.data for k, p in self.params.items()}

    def load_arrays(self, records: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            if name not in records:
                raise DataError(f"checkpoint missing parameter '{name}'")
            arr = records[name]
            if tuple(arr.shape) != tuple(p.data.shape):
                raise DataError(
                    f"checkpoint parameter '{name}' has shape {tuple(arr.shape)}, "
                    f"model expects {tuple(p.data.shape)}")
            p.data = arr.astype(p.data.dtype).copy()


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def build(config: ModelConfig, seed: int = 0) -> ModelState:
    """He-initialized state; regression/offset heads start at the identity."""
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    dt = E.default_dtype()

    def conv_param(name: str, cout: int, cin: int, k: int, zero: bool = False,
                   bias_init: np.ndarray | None = None):
        if zero:
            w = np.zeros((cout, cin, k, k), dtype=dt)
        else:
            std = np.sqrt(2.0 / (cin * k * k))
            w = (rng.normal(0.0, std, size=(cout, cin, k, k))).astype(dt)
        b = np.zeros(cout, dtype=dt) if bias_init is None else bias_init.astype(dt)
        params[f"{name}.w"] = Tensor(w, requires_grad=True)
        params[f"{name}.b"] = Tensor(b, requires_grad=True)

    c = config.base_channels
    ab = config.ablation
    k_off = config.offset_kernel
    n_down = config.num_scales_m

    # stage 1: alignment -----------------------------------------------------
    if ab != "no-dmo":
        conv_param("caa.dmo_down.0", c, config.dmo_bands, 3)
        for i in range(1, n_down):
            conv_param(f"caa.dmo_down.{i}", c, c, 3)
    if ab != "no-dem":
        conv_param("caa.dem_down.0", c, 1, 3)
        for i in range(1, n_down):
            conv_param(f"caa.dem_down.{i}", c, c, 3)
    if ab != "no-caa":
        conv_param("caa.floc.0", c, 1, 3)
        conv_param("caa.floc.1", c, c, 3)
        conv_param("caa.floc.head", 6, c, 1, zero=True,
                   bias_init=np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]))
    if ab != "no-lr-ntl":
        if ab != "no-caa":
            conv_param("caa.offset", 2 * k_off * k_off, 1, k_off, zero=True)
        conv_param("caa.defconv", c, 1, k_off)
        conv_param("caa.ntl_recon", c, c, 3)
    if ab != "no-dmo":
        conv_param("caa.calib_dmo.0", c, c, 3)
        conv_param("caa.calib_dmo.1", c, c, 3)
    if ab != "no-dem":
        conv_param("caa.calib_dem.0", c, c, 3)
        conv_param("caa.calib_dem.1", c, c, 3)

    # stage 2: fusion ----------------------------------------------------------
    def cmfm_params(prefix: str):
        conv_param(f"{prefix}.proj_a", c, c, 1)
        conv_param(f"{prefix}.proj_b", c, c, 1)
        for branch in ("branch_a", "branch_b"):
            for i in range(1, config.num_res_blocks + 1):
                if ab != "no-amff":
                    conv_param(f"{prefix}.{branch}.block{i}.cross", c, c, 1)
                cin = c if i == 1 else 2 * c
                conv_param(f"{prefix}.{branch}.block{i}.conv1", c, cin, 3)
                conv_param(f"{prefix}.{branch}.block{i}.conv2", c, c, 3)
        conv_param(f"{prefix}.fuse.0", c, 2 * c, 3)
        conv_param(f"{prefix}.fuse.1", c, c, 3)

    cmfm_params("amff.cmfm1")
    cmfm_params("amff.cmfm2")

    # stage 3: refinement ------------------------------------------------------
    # heads start at zero so the step-0 prediction is exactly the skip
    for j in range(1, config.num_scales_m + 1):
        conv_param(f"aer.up{j}", 4 * c, c, 1)
        if ab != "no-aer" or j == config.num_scales_m:
            conv_param(f"aer.head{j}", 1, c, 1, zero=True)
    if ab not in ("no-isp", "no-aer"):
        conv_param("aer.isp", 1, 1, 3)

    return ModelState(config, params)


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

def _conv(state: ModelState, name: str, x: Tensor, stride: int = 1,
          padding: int = 0) -> Tensor:
    return E.conv2d(x, state.params[f"{name}.w"], state.params[f"{name}.b"],
                    stride=stride, padding=padding)


def _act(x: Tensor) -> Tensor:
    return E.leaky_relu(x, LEAKY_SLOPE)


def _down_path(state: ModelState, prefix: str, x: Tensor, n_down: int) -> Tensor:
    for i in range(n_down):
        x = _act(_conv(state, f"{prefix}.{i}", x, stride=2, padding=1))
    return x


def localization_theta(state: ModelState, n_l: Tensor) -> Tensor:
    """Affine parameters (N,2,3) regressed from the low-res nightlights."""
    f = _act(_conv(state, "caa.floc.0", n_l, stride=2, padding=1))
    f = _act(_conv(state, "caa.floc.1", f, stride=2, padding=1))
    pooled = E.mean(f, axis=(2, 3), keepdims=True)
    head = _conv(state, "caa.floc.head", pooled)
    return E.reshape(head, (n_l.shape[0], 2, 3))


def caa_forward(state: ModelState, n_l: Tensor, m_dmo: Tensor | None,
                m_dem: Tensor | None) -> dict:
    """Alignment stage. Returns {'ntl','dmo','dem','theta'} (absent ones None)."""
    cfg = state.config
    ab = cfg.ablation
    n, _, h, w = n_l.shape
    use_warp = ab != "no-caa"

    theta = None
    grid = None
    if use_warp:
        theta = localization_theta(state, n_l)
        grid = E.affine_grid(theta, h, w)

    f_ntl = None
    aligned = None
    if ab != "no-lr-ntl":
        if use_warp:
            aligned = E.grid_sample(n_l, grid)
            off = _conv(state, "caa.offset", aligned,
                        padding=(cfg.offset_kernel - 1) // 2)
            d = _act(E.deformable_conv2d(aligned, off,
                                         state.params["caa.defconv.w"],
                                         state.params["caa.defconv.b"]))
        else:
            aligned = n_l
            d = _act(_conv(state, "caa.defconv", n_l,
                           padding=(cfg.offset_kernel - 1) // 2))
        f_ntl = _act(_conv(state, "caa.ntl_recon", d, padding=1))

    f_dmo = None
    if ab != "no-dmo":
        x = _down_path(state, "caa.dmo_down", m_dmo, cfg.num_scales_m)
        if use_warp:
            x = E.grid_sample(x, grid)
        x = _act(_conv(state, "caa.calib_dmo.0", x, padding=1))
        f_dmo = _act(_conv(state, "caa.calib_dmo.1", x, padding=1))

    f_dem = None
    if ab != "no-dem":
        x = _down_path(state, "caa.dem_down", m_dem, cfg.num_scales_m)
        if use_warp:
            x = E.grid_sample(x, grid)
        x = _act(_conv(state, "caa.calib_dem.0", x, padding=1))
        f_dem = _act(_conv(state, "caa.calib_dem.1", x, padding=1))

    return {"ntl": f_ntl, "dmo": f_dmo, "dem": f_dem, "theta": theta,
            "aligned": aligned}


def _cmfm_branch(state: ModelState, prefix: str, x0: Tensor, other0: Tensor,
                 cross: bool, blocks: int) -> Tensor:
    x = x0
    h, w = x.shape[2], x.shape[3]
    for i in range(1, blocks + 1):
        inp = x
        if cross:
            inp = E.add(inp, _act(_conv(state, f"{prefix}.block{i}.cross", other0)))
        if i == 1:
            hid = _act(_conv(state, f"{prefix}.block{i}.conv1", inp, padding=1))
        else:
            ctx = E.resize_bilinear(E.resize_bilinear(inp, h // 2, w // 2), h, w)
            hid = _act(_conv(state, f"{prefix}.block{i}.conv1",
                             E.concat([inp, ctx], axis=1), padding=1))
        hid = _conv(state, f"{prefix}.block{i}.conv2", hid, padding=1)
        x = _act(E.add(x, hid))
    return x


def cmfm(state: ModelState, prefix: str, feat_a: Tensor, feat_b: Tensor) -> Tensor:
    """Cross-modality fusion: two branches with per-block cross projections,
    a half-resolution context concat in deeper blocks, final concat + fusion."""
    cfg = state.config
    cross = cfg.ablation != "no-amff"
    a0 = _act(_conv(state, f"{prefix}.proj_a", feat_a))
    b0 = _act(_conv(state, f"{prefix}.proj_b", feat_b))
    xa = _cmfm_branch(state, f"{prefix}.branch_a", a0, b0, cross, cfg.num_res_blocks)
    xb = _cmfm_branch(state, f"{prefix}.branch_b", b0, a0, cross, cfg.num_res_blocks)
    y = _act(_conv(state, f"{prefix}.fuse.0", E.concat([xa, xb], axis=1), padding=1))
    return _act(_conv(state, f"{prefix}.fuse.1", y, padding=1))


def amff_forward(state: ModelState, feats: dict) -> Tensor:
    ab = state.config.ablation
    if ab == "no-dmo":
        f_aux = cmfm(state, "amff.cmfm1", feats["dem"], feats["dem"])
    elif ab == "no-dem":
        f_aux = cmfm(state, "amff.cmfm1", feats["dmo"], feats["dmo"])
    else:
        f_aux = cmfm(state, "amff.cmfm1", feats["dmo"], feats["dem"])
    if ab == "no-lr-ntl":
        return cmfm(state, "amff.cmfm2", f_aux, f_aux)
    return cmfm(state, "amff.cmfm2", f_aux, feats["ntl"])


def aer_forward(state: ModelState, fused: Tensor,
                skip: Tensor | None = None) -> ForwardOutputs:
    """Upsampling pyramid with prediction heads.

    The heads learn a residual: when `skip` (the aligned low-res radiance
    map) is given, its bilinear upsample is added to every head output, so
    the net starts from a plain enlargement instead of darkness, and the
    localization net is supervised directly through the skip. Under the
    variant that withholds the LR radiance input no skip exists.
    """
    cfg = state.config
    ab = cfg.ablation
    x = fused

    def head(name: str, feat: Tensor) -> Tensor:
        out = _conv(state, name, feat)
        if skip is not None:
            out = E.add(out, E.resize_bilinear(skip, feat.shape[2],
                                               feat.shape[3]))
        return out

    pyramid: list[Tensor] = []
    for j in range(1, cfg.num_scales_m + 1):
        x = _act(E.pixel_shuffle(_conv(state, f"aer.up{j}", x), 2))
        if ab != "no-aer":
            pyramid.append(head(f"aer.head{j}", x))
    if ab == "no-aer":
        pyramid.append(head(f"aer.head{cfg.num_scales_m}", x))
    isp_logits = None
    if ab not in ("no-isp", "no-aer"):
        isp_logits = _conv(state, "aer.isp", pyramid[-1], padding=1)
    return ForwardOutputs(sr_pyramid=pyramid, isp_logits=isp_logits)


def _check_inputs(state: ModelState, n_l: Tensor, m_dmo: Tensor, m_dem: Tensor):
    cfg = state.config
    if n_l.ndim != 4 or n_l.shape[1] != 1:
        raise DataError(f"lr_ntl must be (N,1,h,w), got {n_l.shape}")
    n, _, h, w = n_l.shape
    hr_h, hr_w = h * cfg.scale_r, w * cfg.scale_r
    if m_dmo.ndim != 4 or m_dmo.shape != (n, cfg.dmo_bands, hr_h, hr_w):
        raise DataError(
            f"dmo must be (N,{cfg.dmo_bands},{hr_h},{hr_w}) for lr {h}x{w} at "
            f"r={cfg.scale_r}, got {m_dmo.shape}")
    if m_dem.ndim != 4 or m_dem.shape != (n, 1, hr_h, hr_w):
        raise DataError(f"dem must be (N,1,{hr_h},{hr_w}), got {m_dem.shape}")


def forward(state: ModelState, n_l: Tensor, m_dmo: Tensor,
            m_dem: Tensor) -> ForwardOutputs:
    """Full pass. Inputs are always accepted; pruned variants ignore theirs."""
    n_l = E.as_tensor(n_l)
    m_dmo = E.as_tensor(m_dmo)
    m_dem = E.as_tensor(m_dem)
    _check_inputs(state, n_l, m_dmo, m_dem)
    ab = state.config.ablation
    feats = caa_forward(state, n_l,
                        None if ab == "no-dmo" else m_dmo,
                        None if ab == "no-dem" else m_dem)
    fused = amff_forward(state, feats)
    return aer_forward(state, fused, skip=feats["aligned"])
