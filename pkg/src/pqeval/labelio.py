"""Decoding and encoding of panoptic label maps, the class taxonomy, and scene manifests.

Label maps travel as an 8-bit RGB PNG whose pixels encode segment ids as
``id = R + 256*G + 65536*B`` plus a JSON sidecar listing every segment.
"""

from __future__ import annotations

import io
import json
import warnings
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

MAX_SEGMENT_ID = 2**24  # exclusive; ids must fit three 8-bit channels


class LabelMapError(ValueError):
    """Malformed label map input (PNG, sidecar JSON, or their combination)."""


class ManifestError(ValueError):
    """Malformed scene manifest."""


class AreaMismatchWarning(UserWarning):
    """Sidecar-declared segment area disagrees with the pixel count."""


@dataclass(frozen=True)
class Category:
    category_id: int
    name: str
    is_thing: bool


# The usual 19-class driving taxonomy (train-id numbering); 255 is the
# ignore label, which doubles as the void sentinel here.
_DEFAULT_TAXONOMY: tuple[tuple[int, str, bool], ...] = (
    (0, "road", False),
    (1, "sidewalk", False),
    (2, "building", False),
    (3, "wall", False),
    (4, "fence", False),
    (5, "pole", False),
    (6, "traffic light", False),
    (7, "traffic sign", False),
    (8, "vegetation", False),
    (9, "terrain", False),
    (10, "sky", False),
    (11, "person", True),
    (12, "rider", True),
    (13, "car", True),
    (14, "truck", True),
    (15, "bus", True),
    (16, "train", True),
    (17, "motorcycle", True),
    (18, "bicycle", True),
)
DEFAULT_VOID_ID = 255


@dataclass(frozen=True)
class CategoryTable:
    """The class taxonomy plus the void sentinel used in label grids."""

    entries: tuple[Category, ...]
    void_id: int = 0

    def __post_init__(self) -> None:
        ids = [c.category_id for c in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("category ids must be unique")
        if self.void_id in ids:
            raise ValueError(f"void id {self.void_id} collides with a category entry")

    @classmethod
    def default(cls) -> "CategoryTable":
        entries = tuple(Category(i, name, thing) for i, name, thing in _DEFAULT_TAXONOMY)
        return cls(entries, void_id=DEFAULT_VOID_ID)

    def __contains__(self, category_id: int) -> bool:
        return any(c.category_id == category_id for c in self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(c.category_id for c in self.entries)

    def name_of(self, category_id: int) -> str:
        for c in self.entries:
            if c.category_id == category_id:
                return c.name
        raise KeyError(category_id)

    def to_json(self) -> str:
        payload = {
            "void_id": self.void_id,
            "categories": [
                {"id": c.category_id, "name": c.name, "is_thing": c.is_thing} for c in self.entries
            ],
        }
        return json.dumps(payload, indent=2) + "\n"

    @classmethod
    def from_json(cls, raw: bytes | str) -> "CategoryTable":
        payload = json.loads(raw)
        if isinstance(payload, list):
            # bare array form, void defaults to 0
            items, void_id = payload, 0
        elif isinstance(payload, dict):
            items = payload.get("categories")
            void_id = payload.get("void_id", 0)
            if not isinstance(items, list):
                raise ValueError("categories file must contain a 'categories' array")
        else:
            raise ValueError("categories file must be a JSON array or object")
        entries = []
        for item in items:
            try:
                entries.append(Category(int(item["id"]), str(item["name"]), bool(item["is_thing"])))
            except (KeyError, TypeError) as exc:
                raise ValueError(f"bad category entry {item!r}") from exc
        return cls(tuple(entries), void_id=int(void_id))


@dataclass(frozen=True)
class SegmentInfo:
    """One segment of a label map; ``area`` is its exact pixel count."""

    segment_id: int
    category_id: int
    area: int

    def __post_init__(self) -> None:
        if self.segment_id <= 0:
            raise ValueError(f"segment id must be positive, got {self.segment_id}")
        if self.area < 1:
            raise ValueError(f"segment {self.segment_id} has area {self.area}, must be >= 1")


class PanopticLabelMap:
    """Dense grid of segment ids plus per-segment metadata.

    Invariants (checked on construction): every non-void id in the grid has
    exactly one ``SegmentInfo`` whose area equals its pixel count, and the
    grid holds nothing but listed ids and the void sentinel.
    """

    __slots__ = ("width", "height", "ids", "segments", "void_id")

    def __init__(
        self,
        width: int,
        height: int,
        ids: np.ndarray,
        segments: Iterable[SegmentInfo],
        void_id: int,
    ) -> None:
        self.width = int(width)
        self.height = int(height)
        self.ids = np.ascontiguousarray(ids, dtype=np.int64)
        self.segments = tuple(sorted(segments, key=lambda s: s.segment_id))
        self.void_id = int(void_id)
        self._validate()

    def _validate(self) -> None:
        if self.ids.shape != (self.height, self.width):
            raise LabelMapError(
                f"id grid shape {self.ids.shape} does not match {self.height}x{self.width}"
            )
        listed = {}
        for seg in self.segments:
            if seg.segment_id in listed:
                raise LabelMapError(f"segment id {seg.segment_id} listed twice")
            if seg.segment_id == self.void_id:
                raise LabelMapError(f"segment id {seg.segment_id} collides with void sentinel")
            listed[seg.segment_id] = seg
        present, counts = np.unique(self.ids, return_counts=True)
        areas = dict(zip(present.tolist(), counts.tolist()))
        for sid in areas:
            if sid != self.void_id and sid not in listed:
                raise LabelMapError(f"grid id {sid} missing from segment list")
        for seg in self.segments:
            actual = areas.get(seg.segment_id, 0)
            if actual == 0:
                raise LabelMapError(f"listed segment {seg.segment_id} absent from grid")
            if actual != seg.area:
                raise LabelMapError(
                    f"segment {seg.segment_id} area {seg.area} != pixel count {actual}"
                )

    @property
    def void_pixels(self) -> int:
        return self.width * self.height - sum(s.area for s in self.segments)

    def category_of(self) -> dict[int, int]:
        """Map segment id -> category id."""
        return {s.segment_id: s.category_id for s in self.segments}

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PanopticLabelMap):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and self.void_id == other.void_id
            and self.segments == other.segments
            and np.array_equal(self.ids, other.ids)
        )

    def __repr__(self) -> str:
        return (
            f"PanopticLabelMap({self.width}x{self.height}, "
            f"{len(self.segments)} segments, void={self.void_id})"
        )


def decode_label_map(
    png_bytes: bytes,
    segments_json: bytes | str,
    cats: CategoryTable,
) -> PanopticLabelMap:
    """Decode a PNG + sidecar pair into a validated label map.

    Pixel-derived areas are authoritative: a sidecar area that disagrees with
    the grid raises :class:`AreaMismatchWarning` and is overridden.

    Raises:
        LabelMapError: malformed PNG, id present on only one side of the
            pair, unknown category, or declared/actual dimension mismatch.
    """
    try:
        img = Image.open(io.BytesIO(png_bytes))
        img.load()
    except (UnidentifiedImageError, OSError) as exc:
        raise LabelMapError(f"cannot decode PNG: {exc}") from exc
    if img.mode != "RGB":
        raise LabelMapError(f"label PNG must be 8-bit RGB, got mode {img.mode!r}")
    rgb = np.asarray(img, dtype=np.int64)
    ids = rgb[..., 0] + 256 * rgb[..., 1] + 65536 * rgb[..., 2]
    height, width = ids.shape

    try:
        meta = json.loads(segments_json)
    except json.JSONDecodeError as exc:
        raise LabelMapError(f"cannot parse segment sidecar: {exc}") from exc
    if isinstance(meta, list):
        declared, items = {}, meta
    elif isinstance(meta, dict):
        declared, items = meta, meta.get("segments", [])
    else:
        raise LabelMapError("segment sidecar must be a JSON object or array")
    for axis, actual in (("width", width), ("height", height)):
        if axis in declared and int(declared[axis]) != actual:
            raise LabelMapError(
                f"sidecar declares {axis}={declared[axis]} but PNG is {width}x{height}"
            )

    present, counts = np.unique(ids, return_counts=True)
    pixel_areas = dict(zip(present.tolist(), counts.tolist()))

    segments = []
    seen = set()
    for item in items:
        try:
            sid = int(item["id"])
            category_id = int(item["category_id"] if "category_id" in item else item["category"])
        except (KeyError, TypeError, ValueError) as exc:
            raise LabelMapError(f"bad segment entry {item!r}") from exc
        if sid in seen:
            raise LabelMapError(f"segment id {sid} listed twice in sidecar")
        seen.add(sid)
        if category_id not in cats:
            raise LabelMapError(f"segment {sid} has unknown category {category_id}")
        if sid not in pixel_areas:
            raise LabelMapError(f"sidecar segment {sid} absent from PNG grid")
        actual_area = pixel_areas[sid]
        if "area" in item and item["area"] is not None and int(item["area"]) != actual_area:
            warnings.warn(
                f"segment {sid}: sidecar area {item['area']} != pixel count "
                f"{actual_area}; using pixel count",
                AreaMismatchWarning,
                stacklevel=2,
            )
        segments.append(SegmentInfo(sid, category_id, actual_area))

    for sid in pixel_areas:
        if sid != cats.void_id and sid not in seen:
            raise LabelMapError(f"grid id {sid} missing from sidecar segment list")

    return PanopticLabelMap(width, height, ids, segments, void_id=cats.void_id)


def encode_label_map(label_map: PanopticLabelMap) -> tuple[bytes, bytes]:
    """Encode a label map back into (png_bytes, sidecar_json_bytes).

    Round trips exactly: decoding the output reproduces the input grid and
    segment list bit for bit.
    """
    ids = label_map.ids
    top = int(ids.max(initial=0))
    if top >= MAX_SEGMENT_ID:
        raise LabelMapError(f"id {top} does not fit the 24-bit RGB encoding")
    if int(ids.min(initial=0)) < 0:
        raise LabelMapError("negative ids cannot be encoded")
    rgb = np.empty((label_map.height, label_map.width, 3), dtype=np.uint8)
    rgb[..., 0] = ids & 0xFF
    rgb[..., 1] = (ids >> 8) & 0xFF
    rgb[..., 2] = (ids >> 16) & 0xFF
    buf = io.BytesIO()
    Image.fromarray(rgb, mode="RGB").save(buf, format="PNG")
    sidecar = {
        "width": label_map.width,
        "height": label_map.height,
        "segments": [
            {"id": s.segment_id, "category_id": s.category_id, "area": s.area}
            for s in label_map.segments
        ],
    }
    return buf.getvalue(), (json.dumps(sidecar, indent=2) + "\n").encode()


def sidecar_path(png_path: Path) -> Path:
    """Sidecar JSON path paired with a PNG by shared stem."""
    return png_path.with_name(png_path.stem + "_segments.json")


def read_label_map(png_path: Path, cats: CategoryTable) -> PanopticLabelMap:
    """Read a PNG + sidecar pair from disk."""
    side = sidecar_path(png_path)
    if not png_path.is_file():
        raise LabelMapError(f"label PNG not found: {png_path}")
    if not side.is_file():
        raise LabelMapError(f"segment sidecar not found: {side}")
    return decode_label_map(png_path.read_bytes(), side.read_bytes(), cats)


def write_label_map(label_map: PanopticLabelMap, png_path: Path) -> None:
    png_bytes, json_bytes = encode_label_map(label_map)
    png_path.write_bytes(png_bytes)
    sidecar_path(png_path).write_bytes(json_bytes)


class Split(str, Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


@dataclass(frozen=True)
class SceneManifest:
    """One scene: where its ground truth lives and which condition it covers."""

    scene_id: str
    condition: "ConditionTag"
    gt_path: str
    split: Split


def load_manifest(raw: bytes | str) -> list[SceneManifest]:
    """Parse a manifest JSON array; scene ids must be unique."""
    from .conditions import ConditionTag

    try:
        payload = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"cannot parse manifest: {exc}") from exc
    if not isinstance(payload, list):
        raise ManifestError("manifest must be a JSON array of scene records")
    records = []
    seen: set[str] = set()
    for item in payload:
        try:
            scene_id = str(item["scene_id"])
            condition = ConditionTag.parse(str(item["condition"]))
            gt_path = str(item["gt_path"])
            split = Split(str(item["split"]))
        except (KeyError, TypeError) as exc:
            raise ManifestError(f"manifest record {item!r} is missing a field") from exc
        except ValueError as exc:
            raise ManifestError(str(exc)) from exc
        if scene_id in seen:
            raise ManifestError(f"duplicate scene_id {scene_id!r}")
        seen.add(scene_id)
        records.append(SceneManifest(scene_id, condition, gt_path, split))
    return records


def dump_manifest(records: Sequence[SceneManifest]) -> str:
    payload = [
        {
            "scene_id": r.scene_id,
            "condition": str(r.condition),
            "gt_path": r.gt_path,
            "split": r.split.value,
        }
        for r in records
    ]
    return json.dumps(payload, indent=2) + "\n"
