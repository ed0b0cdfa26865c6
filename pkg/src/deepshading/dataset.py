"""Training records: dihedral augmentation, scene-disjoint splits and the
on-disk format.

A dataset directory holds ``manifest.json`` and one folder per record with
a PFM file per channel group (``records/<id>/<channel>.pfm``, the target is
``target.pfm``).  The manifest layout::

    {
      "version": 1,
      "records": [{"id", "scene_id", "view_id", "effect", "augmentation",
                   "files": {channel: relative path}}, ...],
      "splits": {"train": [ids], "validation": [ids], "test": [ids]},
      "checksums": {relative path: sha256 hex}
    }
"""

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import DIHEDRAL_ELEMENTS, dihedral, dihedral_compose

MANIFEST_VERSION = 1
MANIFEST = "manifest.json"
SPLITS = ("train", "validation", "test")
TARGET = "target"

# channels whose (x, y) components live in screen-aligned camera space
SCREEN_VECTORS = ("P_s", "N_s")


class DatasetError(Exception):
    pass


class MalformedFileError(DatasetError):
    pass


class ChecksumError(DatasetError):
    pass


class MissingChannelError(DatasetError):
    pass


# -- PFM -----------------------------------------------------------------------

def write_pfm(path, t: np.ndarray):
    """Write a ``(1, H, W)`` or ``(3, H, W)`` tensor as little-endian PFM."""
    t = np.asarray(t)
    if t.ndim != 3 or t.shape[0] not in (1, 3):
        raise ValueError(f"PFM stores 1 or 3 channels, got shape {t.shape}")
    c, h, w = t.shape
    header = f"{'PF' if c == 3 else 'Pf'}\n{w} {h}\n-1.0\n".encode("ascii")
    raster = np.flipud(np.moveaxis(t, 0, -1)).astype("<f4")
    with open(path, "wb") as f:
        f.write(header)
        f.write(raster.tobytes())


def read_pfm(path, name=None) -> np.ndarray:
    """Read a PFM file into a float32 ``(C, H, W)`` tensor."""
    name = name or Path(path).stem
    with open(path, "rb") as f:
        data = f.read()
    parts = data.split(b"\n", 3)
    try:
        tag, dims, scale, raster = parts
        channels = {b"PF": 3, b"Pf": 1}[tag.strip()]
        w, h = (int(v) for v in dims.split())
        scale = float(scale)
    except (ValueError, KeyError) as e:
        raise MalformedFileError(f"channel {name!r}: bad PFM header in {path}") from e
    if w <= 0 or h <= 0 or scale == 0:
        raise MalformedFileError(f"channel {name!r}: bad PFM header in {path}")
    expected = w * h * channels * 4
    if len(raster) != expected:
        raise MalformedFileError(
            f"channel {name!r}: {path} holds {len(raster)} raster bytes, expected {expected}")
    img = np.frombuffer(raster, dtype="<f4" if scale < 0 else ">f4").reshape(h, w, channels)
    return np.ascontiguousarray(np.moveaxis(np.flipud(img), -1, 0)).astype(np.float32)


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- records -------------------------------------------------------------------

@dataclass
class SampleRecord:
    channels: dict
    target: np.ndarray
    scene_id: int
    view_id: int
    effect: dict = field(default_factory=dict)
    augmentation: tuple = (0, False)  # (quarter turns, mirrored)

    def __post_init__(self):
        shapes = {t.shape[-2:] for t in self.channels.values()} | {self.target.shape[-2:]}
        if len(shapes) != 1:
            raise ValueError(f"record tensors disagree in resolution: {shapes}")

    @property
    def id(self) -> str:
        k, m = self.augmentation
        return f"s{self.scene_id:03d}_v{self.view_id:04d}_r{k}{'m' if m else ''}"

    @property
    def base_id(self) -> tuple:
        return self.scene_id, self.view_id

    @property
    def shape(self):
        return self.target.shape[-2:]


def transform_vectors(v: np.ndarray, quarter_turns: int, mirrored: bool) -> np.ndarray:
    """Apply the screen-space mirror/rotation to the (x, y) components of a
    ``(3, H, W)`` vector image; z is untouched, pixels are not moved."""
    x, y = v[0], v[1]
    if mirrored:
        x = -x
    for _ in range(quarter_turns % 4):
        x, y = -y, x
    return np.stack([x, y, v[2]])


def apply_dihedral(record: SampleRecord, element) -> SampleRecord:
    k, m = element
    channels = {}
    for name, t in record.channels.items():
        t = dihedral(t, k, m)
        if name in SCREEN_VECTORS:
            t = transform_vectors(t, k, m)
        channels[name] = t
    return SampleRecord(channels, dihedral(record.target, k, m), record.scene_id,
                        record.view_id, dict(record.effect),
                        dihedral_compose(element, record.augmentation))


def augment(record: SampleRecord) -> list[SampleRecord]:
    """The eight symmetries of the square applied to ``record``."""
    h, w = record.shape
    if h != w:
        raise ValueError(f"augmentation needs square images, got {h}x{w}")
    return [apply_dihedral(record, e) for e in DIHEDRAL_ELEMENTS]


# -- splits --------------------------------------------------------------------

def split(records, test_scene_ids, train_scene_ids=None, val_fraction=0.1, seed=0) -> dict:
    """Assign record ids to train/validation/test.

    Test scenes go to test entirely.  The remaining base views (all
    augmented variants of a view stay together) are shuffled and about
    ``val_fraction`` of them become validation.
    """
    test_scene_ids = set(test_scene_ids)
    if train_scene_ids is not None:
        overlap = test_scene_ids & set(train_scene_ids)
        if overlap:
            raise ValueError(f"scenes {sorted(overlap)} are assigned to both train and test")
    groups = {}
    splits = {s: [] for s in SPLITS}
    for r in records:
        scene, view = r["scene_id"], r["view_id"]
        if scene in test_scene_ids:
            splits["test"].append(r["id"])
        elif train_scene_ids is None or scene in train_scene_ids:
            groups.setdefault((scene, view), []).append(r["id"])
    if not groups:
        raise ValueError("no records left for training after removing test scenes")
    keys = sorted(groups)
    order = np.random.default_rng(seed).permutation(len(keys))
    n_val = int(round(len(keys) * val_fraction))
    if len(keys) > 1:
        n_val = min(max(n_val, 1), len(keys) - 1)
    else:
        n_val = 0
    for i, j in enumerate(order):
        splits["validation" if i < n_val else "train"] += groups[keys[j]]
    for s in SPLITS:
        splits[s].sort()
    return splits


# -- persistence ---------------------------------------------------------------

@dataclass
class Manifest:
    records: list = field(default_factory=list)
    splits: dict = field(default_factory=lambda: {s: [] for s in SPLITS})
    checksums: dict = field(default_factory=dict)
    version: int = MANIFEST_VERSION

    def entry(self, record_id) -> dict:
        for r in self.records:
            if r["id"] == record_id:
                return r
        raise KeyError(record_id)

    def split_entries(self, name) -> list:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        ids = set(self.splits.get(name, []))
        return [r for r in self.records if r["id"] in ids]

    def to_json(self) -> str:
        return json.dumps({"version": self.version, "records": self.records,
                           "splits": self.splits, "checksums": self.checksums},
                          indent=1, sort_keys=True) + "\n"


def save_record(root, record: SampleRecord, manifest: Manifest) -> dict:
    root = Path(root)
    folder = Path("records") / record.id
    (root / folder).mkdir(parents=True, exist_ok=True)
    files = {}
    for name, t in list(record.channels.items()) + [(TARGET, record.target)]:
        rel = (folder / f"{name}.pfm").as_posix()
        write_pfm(root / rel, t)
        files[name] = rel
        manifest.checksums[rel] = _sha256(root / rel)
    entry = {"id": record.id, "scene_id": record.scene_id, "view_id": record.view_id,
             "effect": record.effect,
             "augmentation": {"quarter_turns": record.augmentation[0],
                              "mirrored": record.augmentation[1]},
             "files": files}
    manifest.records = [r for r in manifest.records if r["id"] != record.id] + [entry]
    manifest.records.sort(key=lambda r: r["id"])
    return entry


def load_record(root, entry: dict, manifest: Manifest, channels=None) -> SampleRecord:
    """Load a record; ``channels`` restricts which inputs are read (the target always is)."""
    root = Path(root)
    files = entry["files"]
    wanted = list(channels) if channels is not None else [n for n in files if n != TARGET]
    tensors = {}
    for name in wanted + [TARGET]:
        if name not in files or not (root / files[name]).exists():
            raise MissingChannelError(f"record {entry['id']}: missing channel {name!r}")
        path = root / files[name]
        t = read_pfm(path, name)
        expected = manifest.checksums.get(files[name])
        if expected is not None and _sha256(path) != expected:
            raise ChecksumError(f"record {entry['id']}: checksum mismatch for channel {name!r}")
        tensors[name] = t
    aug = entry.get("augmentation", {})
    target = tensors.pop(TARGET)
    return SampleRecord(tensors, target, entry["scene_id"], entry["view_id"],
                        entry.get("effect", {}),
                        (aug.get("quarter_turns", 0), aug.get("mirrored", False)))


def write_manifest(root, manifest: Manifest):
    Path(root, MANIFEST).write_text(manifest.to_json())


def read_manifest(root) -> Manifest:
    path = Path(root, MANIFEST)
    try:
        d = json.loads(path.read_text())
    except FileNotFoundError:
        raise DatasetError(f"no manifest at {path}") from None
    except json.JSONDecodeError as e:
        raise MalformedFileError(f"manifest {path} is not valid JSON: {e}") from e
    if d.get("version") != MANIFEST_VERSION:
        raise MalformedFileError(f"manifest version {d.get('version')} is not supported")
    for key in ("records", "splits", "checksums"):
        if key not in d:
            raise MalformedFileError(f"manifest lacks {key!r}")
    return Manifest(d["records"], d["splits"], d["checksums"], d["version"])


def save_dataset(root, records, splits=None) -> Manifest:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    manifest = Manifest()
    for r in records:
        save_record(root, r, manifest)
    if splits is not None:
        manifest.splits = {s: sorted(splits.get(s, [])) for s in SPLITS}
    write_manifest(root, manifest)
    return manifest


def load_split(root, name, channels=None) -> list[SampleRecord]:
    manifest = read_manifest(root)
    return [load_record(root, e, manifest, channels) for e in manifest.split_entries(name)]

