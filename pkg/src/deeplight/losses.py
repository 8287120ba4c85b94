"""Composite training objective: multi-scale L1 plus settlement-mask BCE.

total = alpha * sum_j beta_j * mean|G_j - resize(target, scale_j)|
      + (1 - alpha) * BCE(sigmoid(isp_logits), isp_mask)

The BCE term clamps probabilities to [eps, 1-eps]. When the model variant has
no ISP head the second term is dropped and alpha is forced to 1.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import engine as E
from .engine import Tensor
from .errors import ConfigError, DataError


@dataclass
class LossConfig:
    alpha: float = 0.8
    betas: tuple[float, ...] = (0.2, 0.3, 0.5)
    bce_epsilon: float = 1e-6

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        self.betas = tuple(float(b) for b in self.betas)
        if abs(sum(self.betas) - 1.0) > 1e-6:
            raise ConfigError(f"betas must sum to 1, got {self.betas} "
                              f"(sum {sum(self.betas):.6f})")
        if any(b < 0 for b in self.betas):
            raise ConfigError(f"betas must be non-negative, got {self.betas}")
        if not 0.0 < self.bce_epsilon <= 1e-3:
            raise ConfigError(f"bce_epsilon must be in (0, 1e-3], got {self.bce_epsilon}")


def multiscale_l1(pyramid: list[Tensor], target: Tensor,
                  betas: tuple[float, ...]) -> tuple[Tensor, list[Tensor]]:
    """Weighted per-scale L1 against the target resized to each level.

    Returns (weighted total, unweighted per-scale means).
    """
    if len(pyramid) != len(betas):
        raise ConfigError(f"pyramid has {len(pyramid)} levels but betas has "
                          f"{len(betas)} entries")
    if target.ndim != 4 or target.shape[1] != 1:
        raise DataError(f"target must be (N,1,H,W), got {target.shape}")
    parts: list[Tensor] = []
    total: Tensor | None = None
    for level, beta in zip(pyramid, betas):
        if level.ndim != 4 or level.shape[0] != target.shape[0] or level.shape[1] != 1:
            raise DataError(f"pyramid level shape {level.shape} inconsistent "
                            f"with target {target.shape}")
        h, w = level.shape[2], level.shape[3]
        tgt = E.resize_bilinear(target.detach(), h, w)
        part = E.mean(E.abs_(E.sub(level, tgt)))
        parts.append(part)
        term = E.mul(part, float(beta))
        total = term if total is None else E.add(total, term)
    return total, parts


def isp_bce(logits: Tensor, target: Tensor, eps: float) -> Tensor:
    """Mean binary cross-entropy on sigmoid(logits) vs a {0,1} mask."""
    tgt = np.asarray(target.data if isinstance(target, Tensor) else target)
    if logits.shape != tgt.shape:
        raise DataError(f"logits shape {logits.shape} != target shape {tgt.shape}")
    if not np.isin(tgt, (0.0, 1.0)).all():
        bad = tgt[~np.isin(tgt, (0.0, 1.0))].ravel()[0]
        raise DataError(f"ISP target must be binary (0/1); found value {bad!r}")
    p = E.clip(E.sigmoid(logits), eps, 1.0 - eps)
    t = Tensor(tgt)
    omt = Tensor(1.0 - tgt)
    ll = E.add(E.mul(t, E.log(p)), E.mul(omt, E.log(E.sub(Tensor(np.ones_like(tgt)), p))))
    return E.neg(E.mean(ll))


def composite_loss(pyramid: list[Tensor], isp_logits: Tensor | None,
                   hr_ntl: Tensor, isp_mask: Tensor | None,
                   cfg: LossConfig) -> dict:
    """Full objective. Returns total plus the logged components.

    With isp_logits None (variant without an ISP head) the BCE term is
    dropped and alpha is forced to 1.
    """
    betas = cfg.betas
    if len(pyramid) != len(betas):
        if len(pyramid) == 1:
            betas = (1.0,)
        else:
            raise ConfigError(f"pyramid has {len(pyramid)} levels but betas has "
                              f"{len(cfg.betas)} entries")
    l1, parts = multiscale_l1(pyramid, hr_ntl, betas)
    if isp_logits is None:
        return {"total": l1, "l1": l1, "bce": None, "scale_l1": parts,
                "alpha_used": 1.0}
    if isp_mask is None:
        raise DataError("ISP head present but no ISP mask supplied")
    bce = isp_bce(isp_logits, isp_mask, cfg.bce_epsilon)
    total = E.add(E.mul(l1, cfg.alpha), E.mul(bce, 1.0 - cfg.alpha))
    return {"total": total, "l1": l1, "bce": bce, "scale_l1": parts,
            "alpha_used": cfg.alpha}
