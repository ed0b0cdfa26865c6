"""Procedural scenes, camera sampling, G-buffer ray casting and Monte-Carlo
references for ambient occlusion and depth of field.

Conventions
-----------
World space is right-handed with +y up.  Camera space has +x to the right
of the image, +y towards the top of the image and +z along the viewing
direction, so visible points have positive depth ``P_s.z = D_s`` and a
surface facing the camera has ``N_s.z < 0``.  Image row 0 is the top row.

All tracing happens in float64.  Every length the tracer uses (ray
offsets, AO radius, geometry) scales with the scene, so scaling a scene
and its AO radius by a power of two reproduces the AO image bit for bit.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .attributes import GENERATED

FOV_DEGREES = 50.0
OFFSET_FRACTION = 1e-4  # ray-origin offset, relative to the scene diagonal
CHUNK = 1 << 18         # rays traced per vectorised batch


class GenerationError(RuntimeError):
    pass


def _vec(v):
    return np.asarray(v, dtype=np.float64).reshape(3)


def _normalize(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


@dataclass
class Sphere:
    center: np.ndarray
    radius: float
    albedo: np.ndarray = field(default_factory=lambda: np.full(3, 0.7))

    def bounds(self):
        c = _vec(self.center)
        return c - self.radius, c + self.radius

    def scaled(self, s):
        return Sphere(_vec(self.center) * s, self.radius * s, self.albedo)

    def contains(self, p):
        return float(np.sum((p - _vec(self.center)) ** 2)) < self.radius ** 2


@dataclass
class Box:
    lo: np.ndarray
    hi: np.ndarray
    albedo: np.ndarray = field(default_factory=lambda: np.full(3, 0.7))

    def bounds(self):
        return _vec(self.lo), _vec(self.hi)

    def scaled(self, s):
        return Box(_vec(self.lo) * s, _vec(self.hi) * s, self.albedo)

    def contains(self, p):
        return bool(np.all(p > _vec(self.lo)) and np.all(p < _vec(self.hi)))


@dataclass
class Quad:
    """Parallelogram ``origin + a * edge_u + b * edge_v`` for a, b in [0, 1].

    The front side faces ``edge_u x edge_v``.  A one-sided quad marks the
    space behind it as off limits for cameras (used for the ground).
    """

    origin: np.ndarray
    edge_u: np.ndarray
    edge_v: np.ndarray
    albedo: np.ndarray = field(default_factory=lambda: np.full(3, 0.7))
    two_sided: bool = True

    def corners(self):
        o, u, v = _vec(self.origin), _vec(self.edge_u), _vec(self.edge_v)
        return np.stack([o, o + u, o + v, o + u + v])

    def bounds(self):
        c = self.corners()
        return c.min(axis=0), c.max(axis=0)

    def scaled(self, s):
        return Quad(_vec(self.origin) * s, _vec(self.edge_u) * s, _vec(self.edge_v) * s,
                    self.albedo, self.two_sided)

    def contains(self, p):
        return False


@dataclass
class Light:
    """Directional light; ``direction`` points from the scene towards the light."""

    direction: np.ndarray = field(default_factory=lambda: _normalize(_vec([0.4, 1.0, 0.3])))
    radiance: np.ndarray = field(default_factory=lambda: np.ones(3))


@dataclass
class Scene:
    primitives: list
    light: Light = field(default_factory=Light)

    @property
    def bounds(self):
        if not self.primitives:
            return np.zeros(3), np.zeros(3)
        los, his = zip(*(p.bounds() for p in self.primitives))
        return np.min(los, axis=0), np.max(his, axis=0)

    @property
    def scale(self) -> float:
        lo, hi = self.bounds
        d = float(np.linalg.norm(hi - lo))
        return d if d > 0 else 1.0

    def scaled(self, s: float) -> "Scene":
        return Scene([p.scaled(s) for p in self.primitives], self.light)


# -- tracing -----------------------------------------------------------------

class Tracer:
    """Nearest-hit queries against a scene, vectorised over rays."""

    def __init__(self, scene: Scene):
        self.scene = scene
        prims = scene.primitives
        self.kinds = []
        self.albedo = np.array([p.albedo for p in prims], dtype=np.float64).reshape(-1, 3)
        sph = [i for i, p in enumerate(prims) if isinstance(p, Sphere)]
        box = [i for i, p in enumerate(prims) if isinstance(p, Box)]
        quad = [i for i, p in enumerate(prims) if isinstance(p, Quad)]
        if sph:
            self.kinds.append(("sphere", np.array(sph), {
                "c": np.array([_vec(prims[i].center) for i in sph]),
                "r": np.array([prims[i].radius for i in sph], dtype=np.float64)}))
        if box:
            self.kinds.append(("box", np.array(box), {
                "lo": np.array([_vec(prims[i].lo) for i in box]),
                "hi": np.array([_vec(prims[i].hi) for i in box])}))
        if quad:
            q = np.array([_vec(prims[i].origin) for i in quad])
            u = np.array([_vec(prims[i].edge_u) for i in quad])
            v = np.array([_vec(prims[i].edge_v) for i in quad])
            n = np.cross(u, v)
            self.kinds.append(("quad", np.array(quad), {
                "q": q, "u": u, "v": v,
                "w": n / np.sum(n * n, axis=1, keepdims=True),
                "n": _normalize(n),
                "two_sided": np.array([prims[i].two_sided for i in quad])}))
        self.offset = OFFSET_FRACTION * scene.scale

    @staticmethod
    def _sphere(o, d, g, tmin):
        oc = o[:, None, :] - g["c"][None]
        b = np.einsum("mpk,mk->mp", oc, d)
        cc = np.einsum("mpk,mpk->mp", oc, oc) - g["r"] ** 2
        disc = b * b - cc
        sq = np.sqrt(np.maximum(disc, 0.0))
        t0, t1 = -b - sq, -b + sq
        t = np.where(t0 > tmin, t0, t1)
        return np.where((disc >= 0) & (t > tmin), t, np.inf)

    @staticmethod
    def _box(o, d, g, tmin):
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            t1 = (g["lo"][None] - o[:, None, :]) * inv[:, None, :]
            t2 = (g["hi"][None] - o[:, None, :]) * inv[:, None, :]
        tnear = np.fmax.reduce(np.fmin(t1, t2), axis=2)
        tfar = np.fmin.reduce(np.fmax(t1, t2), axis=2)
        t = np.where(tnear > tmin, tnear, tfar)
        return np.where((tnear <= tfar) & (t > tmin), t, np.inf)

    @staticmethod
    def _quad(o, d, g, tmin):
        n = g["n"]
        denom = d @ n.T
        dist = np.sum(n * g["q"], axis=1)[None] - o @ n.T
        with np.errstate(divide="ignore", invalid="ignore"):
            t = dist / denom
            p = o[:, None, :] + t[..., None] * d[:, None, :]
            pq = p - g["q"][None]
            a = np.einsum("pk,mpk->mp", g["w"], np.cross(pq, g["v"][None]))
            b = np.einsum("pk,mpk->mp", g["w"], np.cross(g["u"][None], pq))
        ok = (np.abs(denom) > 1e-12) & (t > tmin) & (a >= 0) & (a <= 1) & (b >= 0) & (b <= 1)
        return np.where(ok, t, np.inf)

    def _nearest(self, o, d, tmin):
        m = o.shape[0]
        best_t = np.full(m, np.inf)
        best_prim = np.full(m, -1)
        for kind, idx, g in self.kinds:
            t = getattr(self, "_" + kind)(o, d, g, tmin)
            j = np.argmin(t, axis=1)
            tj = t[np.arange(m), j]
            better = tj < best_t
            best_t = np.where(better, tj, best_t)
            best_prim = np.where(better, idx[j], best_prim)
        return best_t, best_prim

    def intersect(self, o, d, tmin=0.0):
        """Nearest hit per ray: ``(t, prim, normal)``; misses have ``t = inf``, ``prim = -1``.

        ``normal`` is the geometric normal turned towards the ray origin.
        """
        t, prim = self._nearest(o, d, tmin)
        normal = np.zeros_like(o)
        hit = prim >= 0
        p = o + np.where(hit, t, 0.0)[:, None] * d
        for kind, idx, g in self.kinds:
            local = np.searchsorted(idx, prim)
            sel = hit & np.isin(prim, idx)
            if not np.any(sel):
                continue
            li = local[sel]
            ps = p[sel]
            if kind == "sphere":
                normal[sel] = (ps - g["c"][li]) / g["r"][li][:, None]
            elif kind == "box":
                lo, hi = g["lo"][li], g["hi"][li]
                ext = np.maximum(hi - lo, 1e-300)
                dlo, dhi = np.abs(ps - lo) / ext, np.abs(ps - hi) / ext
                near_lo = dlo < dhi
                closeness = np.minimum(dlo, dhi)
                axis = np.argmin(closeness, axis=1)
                rows = np.arange(len(li))
                nb = np.zeros_like(ps)
                nb[rows, axis] = np.where(near_lo[rows, axis], -1.0, 1.0)
                normal[sel] = nb
            else:
                normal[sel] = g["n"][li]
        flip = np.sum(normal * d, axis=1) > 0
        normal[flip] *= -1
        return t, prim, normal

    def backface(self, o, d, prim):
        """True where the ray hits the back of a one-sided quad."""
        out = np.zeros(len(prim), dtype=bool)
        for kind, idx, g in self.kinds:
            if kind != "quad":
                continue
            sel = np.isin(prim, idx) & (prim >= 0)
            li = np.searchsorted(idx, prim[sel])
            facing_away = np.sum(g["n"][li] * d[sel], axis=1) > 0
            out[sel] = facing_away & ~g["two_sided"][li]
        return out

    def visible(self, o, d, tmax):
        """True where nothing is hit in ``(0, tmax)``; ``o`` should already be offset."""
        out = np.empty(o.shape[0], dtype=bool)
        for s in range(0, o.shape[0], CHUNK):
            t, _ = self._nearest(o[s:s + CHUNK], d[s:s + CHUNK], 0.0)
            out[s:s + CHUNK] = ~(t < (tmax[s:s + CHUNK] if np.ndim(tmax) else tmax))
        return out

    def direct_light(self, p, n, prim):
        """Lambertian direct radiance with a shadow ray, per hit point."""
        light = self.scene.light
        ldir = _normalize(_vec(light.direction))
        cos = np.clip(n @ ldir, 0.0, None)
        lit = cos > 0
        vis = np.zeros(len(p), dtype=bool)
        if np.any(lit):
            origins = p[lit] + self.offset * n[lit]
            dirs = np.broadcast_to(ldir, origins.shape)
            vis[lit] = self.visible(origins, np.ascontiguousarray(dirs), np.inf)
        return self.albedo[prim] * _vec(light.radiance) * (cos * vis)[:, None]


# -- camera --------------------------------------------------------------------

@dataclass
class Camera:
    position: np.ndarray
    right: np.ndarray
    up: np.ndarray
    forward: np.ndarray
    width: int
    height: int
    aperture: float = 0.0        # lens radius
    focal_distance: float = 1.0  # along the forward axis

    @classmethod
    def look_at(cls, position, target, width, height, aperture=0.0, focal_distance=None):
        position, target = _vec(position), _vec(target)
        f = target - position
        dist = float(np.linalg.norm(f))
        if dist == 0:
            raise ValueError("camera position and target coincide")
        f = f / dist
        world_up = np.array([0.0, 1.0, 0.0])
        if abs(f @ world_up) > 0.999:
            world_up = np.array([0.0, 0.0, 1.0])
        r = _normalize(np.cross(f, world_up))
        u = np.cross(r, f)
        return cls(position, r, u, f, int(width), int(height), float(aperture),
                   float(dist if focal_distance is None else focal_distance))

    @property
    def rotation(self) -> np.ndarray:
        """World-to-camera rotation; rows are right, up, forward."""
        return np.stack([self.right, self.up, self.forward])

    def scaled(self, s):
        return Camera(self.position * s, self.right, self.up, self.forward, self.width,
                      self.height, self.aperture * s, self.focal_distance * s)

    def pixel_directions(self) -> np.ndarray:
        """Unit directions through pixel centres, ``(H * W, 3)`` in row-major order."""
        tan_half = math.tan(math.radians(FOV_DEGREES) / 2)
        aspect = self.width / self.height
        xs = ((np.arange(self.width) + 0.5) / self.width * 2 - 1) * tan_half * aspect
        ys = (1 - (np.arange(self.height) + 0.5) / self.height * 2) * tan_half
        sx, sy = np.meshgrid(xs, ys)
        d = (sx.reshape(-1, 1) * self.right + sy.reshape(-1, 1) * self.up + self.forward)
        return _normalize(d)


# -- scene and view generation -------------------------------------------------

@dataclass(frozen=True)
class SceneRecipe:
    seed: int
    n_primitives: int = 8
    ground_size: float = 1.5  # half-extent of the ground quad


def make_scene(recipe: SceneRecipe) -> Scene:
    """A ground quad plus random boxes, spheres and walls in the box
    ``[-1, 1] x [0, 1] x [-1, 1]``.  The first extra primitive is always a
    box standing on the ground so there is a concave crease."""
    rng = np.random.default_rng([recipe.seed, 0x5CE7E])
    g = recipe.ground_size
    prims = [Quad([-g, 0.0, g], [2 * g, 0, 0], [0, 0, -2 * g],
                  albedo=rng.uniform(0.4, 0.9) * np.ones(3), two_sided=False)]

    def colour():
        return rng.uniform(0.2, 0.95, size=3)

    for i in range(recipe.n_primitives):
        kind = "box" if i == 0 else rng.choice(["box", "sphere", "wall"], p=[0.45, 0.35, 0.2])
        cx, cz = rng.uniform(-0.8, 0.8, size=2)
        if kind == "box":
            half = rng.uniform(0.08, 0.3, size=3)
            h = rng.uniform(0.1, 0.7)
            prims.append(Box([cx - half[0], 0.0, cz - half[2]], [cx + half[0], h, cz + half[2]], colour()))
        elif kind == "sphere":
            r = rng.uniform(0.08, 0.3)
            sink = rng.uniform(0.0, 0.3) * r
            prims.append(Sphere([cx, r - sink, cz], r, colour()))
        else:
            angle = rng.uniform(0, np.pi)
            length, height = rng.uniform(0.3, 1.0), rng.uniform(0.2, 0.8)
            u = length * np.array([np.cos(angle), 0.0, np.sin(angle)])
            prims.append(Quad([cx - u[0] / 2, 0.0, cz - u[2] / 2], u, [0, height, 0], colour()))

    elev = rng.uniform(np.radians(30), np.radians(70))
    azim = rng.uniform(0, 2 * np.pi)
    ldir = np.array([np.cos(elev) * np.cos(azim), np.sin(elev), np.cos(elev) * np.sin(azim)])
    return Scene(prims, Light(ldir, np.ones(3)))


def _inflated_bounds(scene, amount=0.1):
    lo, hi = scene.bounds
    pad = (hi - lo) * amount / 2
    return lo - pad, hi + pad


def sample_views(scene: Scene, n: int, seed: int, width: int = 64, height: int = 64,
                 max_tries: int = 1000, aperture: float = 0.0, stats: dict = None):
    """Cameras placed uniformly in the scene box (inflated by 10%), each
    looking at a uniform point of the scene box.

    A candidate is rejected when it sits inside a solid, when its central
    ray hits nothing within the box diagonal, or when that ray hits the
    back of a one-sided surface (e.g. the ground from below).
    """
    if n < 1:
        raise ValueError("need at least one view")
    rng = np.random.default_rng([seed, 0x71E35])
    lo, hi = scene.bounds
    vlo, vhi = _inflated_bounds(scene)
    diag = float(np.linalg.norm(hi - lo))
    tracer = Tracer(scene)
    cams, tries = [], 0
    while len(cams) < n:
        if tries >= max_tries * n:
            raise GenerationError(f"found only {len(cams)} of {n} views in {tries} tries")
        tries += 1
        pos = rng.uniform(vlo, vhi)
        target = rng.uniform(lo, hi)
        if np.linalg.norm(target - pos) < 1e-6 * diag:
            continue
        if any(p.contains(pos) for p in scene.primitives):
            continue
        cam = Camera.look_at(pos, target, width, height, aperture=aperture)
        o, d = pos[None], cam.forward[None]
        t, prim, _ = tracer.intersect(o, d, tmin=0.0)
        if not t[0] <= diag or tracer.backface(o, d, prim)[0]:
            continue
        cam.focal_distance = float(t[0] * (d[0] @ cam.forward))
        cams.append(cam)
    if stats is not None:
        stats["tries"] = tries
        stats["accepted"] = len(cams)
    return cams


# -- G-buffer ------------------------------------------------------------------

SPATIAL = ("P_s", "D_s", "D_focal")


@dataclass
class GBuffer:
    """Named float32 channel groups of one view, each ``(C, H, W)``.

    ``spatial_scale`` multiplies the position-like channels (``P_s``,
    ``D_s``, ``D_focal``) on access; see ``runtime.rescale_effect_radius``.
    """

    channels: dict
    spatial_scale: float = 1.0

    def __getitem__(self, name):
        try:
            t = self.channels[name]
        except KeyError:
            raise KeyError(f"G-buffer has no channel {name!r}") from None
        if name in SPATIAL and self.spatial_scale != 1.0:
            return t * np.float32(self.spatial_scale)
        return t

    def __contains__(self, name):
        return name in self.channels

    def names(self):
        return list(self.channels)

    @property
    def shape(self):
        return next(iter(self.channels.values())).shape[-2:]


def _primary(scene, camera):
    tracer = Tracer(scene)
    d = camera.pixel_directions()
    o = np.broadcast_to(camera.position, d.shape).copy()
    t, prim, n = tracer.intersect(o, d)
    hit = prim >= 0
    p = o + np.where(hit, t, 0.0)[:, None] * d
    return tracer, p, n, prim, hit


def raycast_gbuffer(scene: Scene, camera: Camera) -> GBuffer:
    tracer, p, n, prim, hit = _primary(scene, camera)
    h, w = camera.height, camera.width
    rot = camera.rotation
    pos_s = (p - camera.position) @ rot.T
    n_s = n @ rot.T
    light = np.zeros_like(p)
    if np.any(hit):
        light[hit] = tracer.direct_light(p[hit], n[hit], prim[hit])
    albedo = np.zeros_like(p)
    albedo[hit] = tracer.albedo[prim[hit]]

    def img(a):
        a = np.where(hit[:, None], a, 0.0)
        return np.ascontiguousarray(a.T.reshape(-1, h, w)).astype(np.float32)

    ps = img(pos_s)
    ds = ps[2:3].copy()
    cov = hit.reshape(1, h, w).astype(np.float32)
    focal = np.where(cov > 0, ds - np.float32(camera.focal_distance), np.float32(0))
    channels = {
        "P_s": ps,
        "N_s": img(n_s),
        "N_w": img(n),
        "D_s": ds,
        "D_focal": focal.astype(np.float32),
        "R_diff": img(albedo),
        "L": img(light),
        "coverage": cov,
    }
    assert tuple(channels) == GENERATED
    return GBuffer(channels)


# -- Monte-Carlo references ------------------------------------------------------

def stratified_uniforms(rng, count: int, spp: int) -> np.ndarray:
    """``(count, spp, 2)`` samples in the unit square: a jittered
    ``isqrt(spp)``-square grid, topped up with plain uniforms."""
    m = math.isqrt(spp)
    u = rng.random((count, spp, 2))
    if m > 1:
        grid = np.stack(np.meshgrid(np.arange(m), np.arange(m), indexing="ij"), -1).reshape(-1, 2)
        u[:, :m * m] = (grid[None] + u[:, :m * m]) / m
    return u


def _tangent_frame(n):
    # Duff et al. 2017, branchless orthonormal basis
    sign = np.where(n[:, 2] >= 0, 1.0, -1.0)
    a = -1.0 / (sign + n[:, 2])
    b = n[:, 0] * n[:, 1] * a
    t1 = np.stack([1 + sign * n[:, 0] ** 2 * a, sign * b, -sign * n[:, 0]], axis=1)
    t2 = np.stack([b, sign + n[:, 1] ** 2 * a, -n[:, 1]], axis=1)
    return t1, t2


COSINE, UNIFORM = "cosine", "uniform"


def hemisphere_directions(normals, uniforms, weighting=COSINE):
    """Map unit-square samples ``(M, S, 2)`` to world directions around ``normals``."""
    u1, u2 = uniforms[..., 0], uniforms[..., 1]
    phi = 2 * np.pi * u2
    if weighting == COSINE:
        r, z = np.sqrt(u1), np.sqrt(1 - u1)
    elif weighting == UNIFORM:
        z = u1
        r = np.sqrt(np.maximum(0.0, 1 - z * z))
    else:
        raise ValueError(f"unknown weighting {weighting!r}")
    t1, t2 = _tangent_frame(normals)
    lx, ly = r * np.cos(phi), r * np.sin(phi)
    return (lx[..., None] * t1[:, None] + ly[..., None] * t2[:, None]
            + z[..., None] * normals[:, None])


def ambient_occlusion(tracer: Tracer, points, normals, radius, uniforms, weighting=COSINE):
    """Fraction of hemisphere samples with no hit closer than ``radius``.

    With cosine-weighted directions the plain fraction is the cosine-weighted
    AO; with uniform directions it is the fraction of the solid angle.
    """
    if radius <= 0:
        raise ValueError("AO radius must be positive")
    spp = uniforms.shape[1]
    dirs = hemisphere_directions(normals, uniforms, weighting).reshape(-1, 3)
    origins = np.repeat(points + tracer.offset * normals, spp, axis=0)
    vis = tracer.visible(origins, dirs, radius)
    return vis.reshape(-1, spp).mean(axis=1)


@dataclass(frozen=True)
class EffectSpec:
    effect: str = "ao"
    radius: float = 0.25
    spp: int = 256
    aperture: float = 0.05
    focal_distance: float = None  # None: keep each camera's own focus

    def __post_init__(self):
        if self.effect not in ("ao", "dof"):
            raise ValueError(f"unknown effect {self.effect!r}")
        if self.radius <= 0 or self.spp < 1:
            raise ValueError("radius must be positive and spp at least 1")

    def to_dict(self):
        return {"effect": self.effect, "radius": self.radius, "spp": self.spp,
                "aperture": self.aperture, "focal_distance": self.focal_distance}


def _row_blocks(height, width, spp):
    rows = max(1, CHUNK // max(1, width * spp))
    for r0 in range(0, height, rows):
        yield r0, min(height, r0 + rows)


def ao_ground_truth(scene: Scene, camera: Camera, radius: float, spp: int = 256,
                    seed: int = 0, weighting=COSINE) -> np.ndarray:
    """``(1, H, W)`` AO image; uncovered pixels are 1.

    Each image row draws its samples from its own stream seeded by
    ``(seed, row)``, so a pixel's samples depend only on the seed and its
    position.
    """
    tracer, p, n, prim, hit = _primary(scene, camera)
    h, w = camera.height, camera.width
    ao = np.ones(h * w)
    for r0, r1 in _row_blocks(h, w, spp):
        u = np.concatenate([stratified_uniforms(np.random.default_rng([seed, r]), w, spp)
                            for r in range(r0, r1)])
        sl = slice(r0 * w, r1 * w)
        m = hit[sl]
        if np.any(m):
            block = ao[sl]
            block[m] = ambient_occlusion(tracer, p[sl][m], n[sl][m], radius, u[m], weighting)
            ao[sl] = block
    return ao.reshape(1, h, w).astype(np.float32)


def concentric_disk(u):
    """Shirley-Chiu mapping of unit-square samples to the unit disk."""
    a, b = 2 * u[..., 0] - 1, 2 * u[..., 1] - 1
    first = np.abs(a) > np.abs(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(first, a, b)
        phi = np.where(first, (np.pi / 4) * (b / a), np.pi / 2 - (np.pi / 4) * (a / b))
    phi = np.where((a == 0) & (b == 0), 0.0, phi)
    return np.stack([r * np.cos(phi), r * np.sin(phi)], axis=-1)


def dof_ground_truth(scene: Scene, camera: Camera, spp: int = 256, seed: int = 0) -> np.ndarray:
    """``(3, H, W)`` thin-lens render: the mean of direct-light images seen
    from ``spp`` points on a lens disk of radius ``camera.aperture``, all
    focused on the plane at ``camera.focal_distance``."""
    tracer = Tracer(scene)
    h, w = camera.height, camera.width
    d0 = camera.pixel_directions()
    focus = camera.position + d0 * (camera.focal_distance / (d0 @ camera.forward))[:, None]
    out = np.zeros((h * w, 3))
    for r0, r1 in _row_blocks(h, w, spp):
        u = np.concatenate([stratified_uniforms(np.random.default_rng([seed, r]), w, spp)
                            for r in range(r0, r1)])
        lens = concentric_disk(u) * camera.aperture
        sl = slice(r0 * w, r1 * w)
        o = (camera.position + lens[..., 0:1] * camera.right + lens[..., 1:2] * camera.up)
        d = _normalize(focus[sl][:, None, :] - o)
        o, d = o.reshape(-1, 3), d.reshape(-1, 3)
        t, prim, n = tracer.intersect(o, d)
        hitm = prim >= 0
        rad = np.zeros_like(o)
        if np.any(hitm):
            p = o[hitm] + t[hitm][:, None] * d[hitm]
            rad[hitm] = tracer.direct_light(p, n[hitm], prim[hitm])
        out[sl] = rad.reshape(r1 * w - r0 * w, spp, 3).mean(axis=1)
    return np.ascontiguousarray(out.T.reshape(3, h, w)).astype(np.float32)
