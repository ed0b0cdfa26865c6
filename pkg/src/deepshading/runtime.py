"""Running trained networks on G-buffers and measuring them."""

import csv
import statistics
import time
from collections.abc import Mapping

import numpy as np

from . import attributes
from .loss import ssim_map
from .scenegen import GBuffer
from .unet import Network

REFERENCE_AO_TEST_SSIM = 0.729   # reference point at full corpus scale, not a desk target
REFERENCE_AO_MS_768x512 = 17.0   # GPU timing of the reference implementation


def _as_gbuffer(g) -> GBuffer:
    if isinstance(g, GBuffer):
        return g
    if isinstance(g, Mapping):
        return GBuffer(dict(g))
    raise TypeError(f"expected a GBuffer or a mapping of channels, got {type(g).__name__}")


def assemble_input(gbuffer, config, colour=None) -> np.ndarray:
    """Concatenate the network's attributes in config order.

    For mono networks ``colour`` picks the channel of each colour attribute.
    """
    if not config.attributes:
        raise ValueError("network config names no attributes; cannot read a G-buffer")
    g = _as_gbuffer(gbuffer)
    parts = []
    for name in config.attributes:
        if name not in g:
            raise ValueError(f"G-buffer is missing channel {name!r} required by the network")
        t = g[name]
        if config.mode == attributes.MONO and attributes.ATTRIBUTES[name][1]:
            t = t[(colour or 0):(colour or 0) + 1]
        parts.append(t)
    return np.concatenate(parts, axis=0)


def mono_colours(config) -> int:
    """How many times a mono network runs per image (3 with colour inputs, else 1)."""
    if config.mode == attributes.MONO and attributes.has_colour(config.attributes):
        return 3
    return 1


def infer(net: Network, gbuffer) -> np.ndarray:
    """Effect image for one G-buffer.

    A mono network with colour inputs runs once per colour channel (as one
    batch of three) and the three scalar outputs are stacked as RGB.
    """
    runs = mono_colours(net.config)
    if runs == 1:
        return net.forward(assemble_input(gbuffer, net.config))
    x = np.stack([assemble_input(gbuffer, net.config, c) for c in range(runs)])
    out = net.forward(x)
    return out.reshape(runs * net.config.out_channels, *out.shape[-2:])


def compose_ao(ao: np.ndarray, albedo: np.ndarray, ambient) -> np.ndarray:
    """``ao * ambient * albedo`` per pixel and colour channel."""
    ambient = np.asarray(ambient, dtype=np.float32).reshape(-1, 1, 1)
    if ao.shape[-2:] != albedo.shape[-2:] or ao.shape[0] not in (1, albedo.shape[0]):
        raise ValueError(f"cannot compose AO {ao.shape} with albedo {albedo.shape}")
    if ambient.shape[0] not in (1, albedo.shape[0]):
        raise ValueError(f"ambient has {ambient.shape[0]} components, albedo {albedo.shape[0]}")
    return ao * ambient * albedo


def rescale_effect_radius(gbuffer, factor: float) -> GBuffer:
    """Scale the position-like channels by ``factor``, which divides the
    effect radius the network has learned by the same factor (use
    ``factor = N`` when running at N times the training resolution)."""
    if factor <= 0:
        raise ValueError("scale factor must be positive")
    g = _as_gbuffer(gbuffer)
    return GBuffer(g.channels, g.spatial_scale * factor)


def _scores(pred, target):
    s = float(ssim_map(pred, target).mean())
    return s, (1.0 - s) / 2.0


def _summarise(rows):
    if not rows:
        raise ValueError("cannot evaluate an empty split")
    ssims = np.array([r["ssim"] for r in rows])
    return {"mean_ssim": float(ssims.mean()), "mean_dssim": float((1.0 - ssims.mean()) / 2.0),
            "records": len(rows), "per_record": rows}


def evaluate(net: Network, records, report=None) -> dict:
    """Mean SSIM/DSSIM of the network over records (``dataset.SampleRecord``)."""
    rows = []
    for r in records:
        s, d = _scores(infer(net, r.channels), r.target)
        rows.append({"id": r.id, "ssim": s, "dssim": d})
    result = _summarise(rows)
    if report is not None:
        write_report(report, rows)
    return result


def constant_baseline(records, value: float) -> dict:
    """Scores of a predictor that outputs ``value`` everywhere."""
    rows = []
    for r in records:
        s, d = _scores(np.full_like(r.target, value), r.target)
        rows.append({"id": r.id, "ssim": s, "dssim": d})
    return _summarise(rows)


def target_mean(records) -> float:
    return float(np.mean([r.target.mean(dtype=np.float64) for r in records]))


def write_report(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["id", "ssim", "dssim"])
        w.writeheader()
        for row in sorted(rows, key=lambda r: r["id"]):
            w.writerow({"id": row["id"], "ssim": f"{row['ssim']:.8f}", "dssim": f"{row['dssim']:.8f}"})


def benchmark(net: Network, width: int, height: int, warmup: int = 2, iterations: int = 10,
              seed: int = 0) -> dict:
    """Wall-clock timing of full-image inference (all colour runs included)."""
    d = net.config.divisor
    if width % d or height % d:
        raise ValueError(f"resolution {width}x{height} is not divisible by {d}")
    if iterations < 1:
        raise ValueError("need at least one timed iteration")
    rng = np.random.default_rng(seed)
    runs = mono_colours(net.config)
    shape = (runs, net.config.in_channels, height, width) if runs > 1 else \
        (net.config.in_channels, height, width)
    x = rng.standard_normal(shape).astype(net.dtype)
    for _ in range(warmup):
        net.forward(x)
    samples = []
    for _ in range(iterations):
        t0 = time.perf_counter()
        net.forward(x)
        samples.append((time.perf_counter() - t0) * 1000.0)
    return {"width": width, "height": height, "iterations": iterations,
            "mean_ms": statistics.fmean(samples), "median_ms": statistics.median(samples),
            "p95_ms": float(np.percentile(samples, 95)), "samples_ms": samples}


def tonemap(t: np.ndarray, gamma: float = 2.2) -> np.ndarray:
    """Clamp to [0, 1], apply ``v ** (1 / gamma)`` and quantise to bytes
    (round half up).  Returns ``(H, W)`` or ``(H, W, 3)`` uint8."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    v = np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0) ** (1.0 / gamma)
    b = np.floor(v * 255.0 + 0.5).astype(np.uint8)
    if b.ndim == 3:
        b = b[0] if b.shape[0] == 1 else np.moveaxis(b, 0, -1)
    return b


def tonemap_export(t: np.ndarray, path, gamma: float = 2.2):
    from PIL import Image

    Image.fromarray(tonemap(t, gamma)).save(path, format="PNG")
