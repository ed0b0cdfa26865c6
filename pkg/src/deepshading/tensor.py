"""Dense (channels, height, width) tensors and their spatial symmetries.

Tensors are plain numpy arrays in channel-major layout.  Row 0 is the top
of the image and a positive quarter turn rotates the picture
counter-clockwise, so a screen-space vector pointing right ends up pointing
up.  Every function returns a new array; inputs are never modified.

Functions also accept a leading batch axis ``(N, C, H, W)``; the spatial
axes are always the last two.
"""

import numpy as np

DTYPE = np.float32

HORIZONTAL = "horizontal"
VERTICAL = "vertical"


def as_tensor(data, dtype=DTYPE) -> np.ndarray:
    t = np.asarray(data, dtype=dtype)
    if t.ndim == 2:
        t = t[None]
    if t.ndim != 3:
        raise ValueError(f"expected a (C, H, W) array, got shape {t.shape}")
    if not np.all(np.isfinite(t)):
        raise ValueError("tensor contains non-finite values")
    return t


def stack_batch(items) -> np.ndarray:
    """Stack same-shaped tensors into an ``(N, C, H, W)`` batch."""
    items = list(items)
    if not items:
        raise ValueError("a batch needs at least one tensor")
    shape = items[0].shape
    for t in items[1:]:
        if t.shape != shape:
            raise ValueError(f"batch items differ in shape: {shape} vs {t.shape}")
    return np.stack(items)


def concat_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[:-3] != b.shape[:-3] or a.shape[-2:] != b.shape[-2:]:
        raise ValueError(f"cannot concatenate {a.shape} and {b.shape}")
    return np.concatenate([a, b], axis=-3)


def rot90(t: np.ndarray, quarter_turns: int) -> np.ndarray:
    return np.ascontiguousarray(np.rot90(t, quarter_turns % 4, axes=(-2, -1)))


def flip(t: np.ndarray, axis: str) -> np.ndarray:
    if axis == HORIZONTAL:
        return np.ascontiguousarray(t[..., :, ::-1])
    if axis == VERTICAL:
        return np.ascontiguousarray(t[..., ::-1, :])
    raise ValueError(f"unknown flip axis {axis!r}")


def dihedral(t: np.ndarray, quarter_turns: int, mirrored: bool) -> np.ndarray:
    """Mirror horizontally (if asked), then rotate by ``quarter_turns``."""
    if mirrored:
        t = flip(t, HORIZONTAL)
    return rot90(t, quarter_turns)


def dihedral_inverse(quarter_turns: int, mirrored: bool) -> tuple[int, bool]:
    # rot^k . flip is an involution; plain rotations invert to rot^-k
    if mirrored:
        return quarter_turns % 4, True
    return (-quarter_turns) % 4, False


DIHEDRAL_ELEMENTS = [(k, m) for m in (False, True) for k in range(4)]


def dihedral_compose(outer: tuple[int, bool], inner: tuple[int, bool]) -> tuple[int, bool]:
    """The element equal to applying ``inner`` first, then ``outer``."""
    k1, m1 = outer
    k2, m2 = inner
    return (k1 + (-k2 if m1 else k2)) % 4, m1 != m2
