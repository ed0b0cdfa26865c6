"""Tiled SSIM, DSSIM and the L1/L2 comparison losses, with gradients.

SSIM is evaluated on non-overlapping 8x8 tiles, separately per channel,
using population (1/n) tile statistics.  Statistics are accumulated in
float64 so that ``dssim(x, x)`` is exactly zero and the metric is exactly
symmetric.  L1 and L2 are means over all elements.
"""

from dataclasses import dataclass

import numpy as np

TILE = 8
DYNAMIC_RANGE = 1.0
C1 = (0.01 * DYNAMIC_RANGE) ** 2
C2 = (0.03 * DYNAMIC_RANGE) ** 2

SSIM, L1, L2, SSIM_L1, SSIM_L2 = "ssim", "l1", "l2", "ssim+l1", "ssim+l2"
VARIANTS = (SSIM, L1, L2, SSIM_L1, SSIM_L2)


@dataclass(frozen=True)
class LossKind:
    variant: str = SSIM
    mix_weight: float = 0.5  # weight of the DSSIM part in combined variants

    def __post_init__(self):
        object.__setattr__(self, "variant", self.variant.lower())
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown loss {self.variant!r}, choose from {VARIANTS}")
        if not 0.0 <= self.mix_weight <= 1.0:
            raise ValueError("mix_weight must lie in [0, 1]")


def _check(a, b, tiled):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if tiled and (a.shape[-1] % TILE or a.shape[-2] % TILE):
        raise ValueError(f"SSIM needs sizes divisible by {TILE}, got {a.shape[-2]}x{a.shape[-1]}")


def _tiles(x):
    *lead, h, w = x.shape
    t = x.astype(np.float64).reshape(*lead, h // TILE, TILE, w // TILE, TILE)
    return np.moveaxis(t, -3, -2)  # (..., H/8, W/8, 8, 8)


def _stats(a, b):
    ta, tb = _tiles(a), _tiles(b)
    mu_a = ta.mean(axis=(-2, -1), keepdims=True)
    mu_b = tb.mean(axis=(-2, -1), keepdims=True)
    da, db = ta - mu_a, tb - mu_b
    var_a = (da * da).mean(axis=(-2, -1), keepdims=True)
    var_b = (db * db).mean(axis=(-2, -1), keepdims=True)
    cov = (da * db).mean(axis=(-2, -1), keepdims=True)
    return mu_a, mu_b, da, db, var_a, var_b, cov


def ssim_terms(a: np.ndarray, b: np.ndarray):
    """Per-tile ``(luminance, contrast_structure)``; their product is SSIM."""
    _check(a, b, True)
    mu_a, mu_b, _, _, var_a, var_b, cov = _stats(a, b)
    lum = (2 * mu_a * mu_b + C1) / (mu_a ** 2 + mu_b ** 2 + C1)
    cs = (2 * cov + C2) / (var_a + var_b + C2)
    return lum[..., 0, 0], cs[..., 0, 0]


def ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """SSIM per channel and tile, shape ``(..., C, H/8, W/8)``."""
    lum, cs = ssim_terms(a, b)
    return lum * cs


def dssim(a: np.ndarray, b: np.ndarray) -> float:
    return float((1.0 - ssim_map(a, b).mean()) / 2.0)


def _dssim_grad(pred, target):
    mu_a, mu_b, da, db, var_a, var_b, cov = _stats(pred, target)
    a1 = 2 * mu_a * mu_b + C1
    a2 = 2 * cov + C2
    b1 = mu_a ** 2 + mu_b ** 2 + C1
    b2 = var_a + var_b + C2
    s = a1 * a2 / (b1 * b2)
    n = TILE * TILE
    ds = (2.0 / n) * s * (mu_b / a1 + db / a2 - mu_a / b1 - da / b2)
    n_tiles = s.size
    g = -ds / (2.0 * n_tiles)
    g = np.moveaxis(g, -2, -3).reshape(pred.shape)
    value = (1.0 - s.mean()) / 2.0
    return float(value), g


def l1(pred: np.ndarray, target: np.ndarray) -> float:
    _check(pred, target, False)
    return float(np.abs(pred.astype(np.float64) - target).mean())


def l2(pred: np.ndarray, target: np.ndarray) -> float:
    """Squared L2 norm of the difference divided by the element count."""
    _check(pred, target, False)
    d = pred.astype(np.float64) - target
    return float((d * d).mean())


def _pointwise(variant, pred, target):
    d = pred.astype(np.float64) - target
    if variant == L1:
        return float(np.abs(d).mean()), np.sign(d) / d.size
    return float((d * d).mean()), 2.0 * d / d.size


def loss_and_grad(kind: LossKind, pred: np.ndarray, target: np.ndarray):
    """Scalar loss and its gradient with respect to ``pred`` (same dtype as ``pred``)."""
    tiled = kind.variant in (SSIM, SSIM_L1, SSIM_L2)
    _check(pred, target, tiled)
    if kind.variant == SSIM:
        value, grad = _dssim_grad(pred, target)
    elif kind.variant in (L1, L2):
        value, grad = _pointwise(kind.variant, pred, target)
    else:
        w = kind.mix_weight
        v1, g1 = _dssim_grad(pred, target)
        v2, g2 = _pointwise(L1 if kind.variant == SSIM_L1 else L2, pred, target)
        value, grad = w * v1 + (1 - w) * v2, w * g1 + (1 - w) * g2
    return value, grad.astype(pred.dtype, copy=False)


def loss_value(kind: LossKind, pred: np.ndarray, target: np.ndarray) -> float:
    return loss_and_grad(kind, pred, target)[0]


def loss_backward(kind: LossKind, pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    return loss_and_grad(kind, pred, target)[1]
