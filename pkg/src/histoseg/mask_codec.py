"""Decode three-channel nucleus masks into class and instance rasters.

Channel semantics: channel 1 carries the raw per-pixel class id, channels 2
and 3 combine per pixel (elementwise product) into a unique id per annotated
nucleus instance. Raw classes are remapped to the four fixed superclasses:

    FOV = 0 (background / catch-all), TUMOR = 1, STROMAL = 2, STILS = 3

Class maps and instance maps are plain 2-d integer numpy arrays; all
operations here are pure and never mutate their inputs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
from PIL import Image

from .errors import ConfigError, EmptyMask, MaskLargerThanImage

FOV, TUMOR, STROMAL, STILS = 0, 1, 2, 3
SUPERCLASS_NAMES = ("FOV", "TUMOR", "STROMAL", "STILS")
SUPERCLASS_IDS = {name: i for i, name in enumerate(SUPERCLASS_NAMES)}
N_CLASSES = len(SUPERCLASS_NAMES)

KIND_BBOX = "bbox"
KIND_POLYGON = "polygon"

ClassMap = np.ndarray  # int labels in {0..3}, shape [H, W]
InstanceMap = np.ndarray  # non-negative int ids, 0 = no instance, shape [H, W]


@dataclass
class RawMask:
    """The three 8-bit channels of a mask tile, all sharing one shape."""

    ch1: np.ndarray
    ch2: np.ndarray
    ch3: np.ndarray

    def __post_init__(self):
        if not (self.ch1.shape == self.ch2.shape == self.ch3.shape):
            raise EmptyMask(
                f"mask channels disagree in shape: {self.ch1.shape}, "
                f"{self.ch2.shape}, {self.ch3.shape}"
            )

    @property
    def height(self) -> int:
        return self.ch1.shape[0]

    @property
    def width(self) -> int:
        return self.ch1.shape[1]


@dataclass
class LocalizationRecord:
    """One annotated instance: its id, raw class and identifying coordinates."""

    instance_id: int
    raw_class: str
    kind: Literal["bbox", "polygon"]
    coords: list[tuple[float, float]]


@dataclass
class SuperclassTable:
    """Total mapping from raw class ids/names to superclass ids.

    Unmapped raw classes resolve to ``default`` (FOV), which is how excluded
    and unknown classes fold into the background.
    """

    mapping: dict[str, int] = field(default_factory=dict)
    default: int = FOV

    def resolve(self, raw: int | str) -> int:
        return self.mapping.get(str(raw), self.default)

    def lut(self) -> np.ndarray:
        """256-entry lookup table over every possible 8-bit raw id."""
        table = np.full(256, self.default, dtype=np.int64)
        for key, value in self.mapping.items():
            if key.isdigit() and 0 <= int(key) <= 255:
                table[int(key)] = value
        return table


def decode_class_map(mask: RawMask, table: SuperclassTable) -> ClassMap:
    """Map channel 1 through the superclass table; unmapped ids become FOV."""
    if mask.ch1.size == 0:
        raise EmptyMask("mask has zero area")
    return table.lut()[mask.ch1]


def decode_instance_map(mask: RawMask) -> InstanceMap:
    """Per-pixel product of channels 2 and 3; distinct nonzero products are
    distinct instances (colliding products are accepted as one instance)."""
    if mask.ch2.size == 0:
        raise EmptyMask("mask has zero area")
    return mask.ch2.astype(np.int64) * mask.ch3.astype(np.int64)


def strip_bounding_boxes(
    cm: ClassMap, im: InstanceMap, recs: list[LocalizationRecord]
) -> tuple[ClassMap, InstanceMap, list[int]]:
    """Erase every bounding-box instance to FOV / id 0.

    Polygon instances and unannotated pixels are untouched. Returns new
    rasters plus the ids of bbox records absent from the instance map
    (orphans are a warning, not an error).
    """
    bbox_ids = sorted({r.instance_id for r in recs if r.kind == KIND_BBOX})
    if not bbox_ids:
        return cm.copy(), im.copy(), []
    present = set(np.unique(im).tolist())
    orphans = [i for i in bbox_ids if i not in present]
    hit = np.isin(im, [i for i in bbox_ids if i in present])
    cm_out = np.where(hit, FOV, cm)
    im_out = np.where(hit, 0, im)
    return cm_out, im_out, orphans


def crop_image_to_mask(
    image: np.ndarray, cm: ClassMap, anchor: str = "top_left"
) -> np.ndarray:
    """Cut an oversized image down to the mask's height and width."""
    h, w = cm.shape[:2]
    ih, iw = image.shape[:2]
    if h > ih or w > iw:
        raise MaskLargerThanImage(f"mask {h}x{w} exceeds image {ih}x{iw}")
    if anchor == "top_left":
        r0, c0 = 0, 0
    elif anchor == "center":
        r0, c0 = (ih - h) // 2, (iw - w) // 2
    else:
        raise ConfigError(f"unknown crop anchor {anchor!r}")
    return image[r0 : r0 + h, c0 : c0 + w].copy()


# -- file interfaces -------------------------------------------------------


def read_image_png(path: str | Path) -> np.ndarray:
    """Load an RGB tile as a uint8 [H, W, 3] array."""
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def read_mask_png(path: str | Path) -> RawMask:
    """Load a three-channel 8-bit mask PNG."""
    arr = read_image_png(path)
    return RawMask(ch1=arr[:, :, 0], ch2=arr[:, :, 1], ch3=arr[:, :, 2])


def write_image_png(path: str | Path, pixels: np.ndarray) -> None:
    Image.fromarray(pixels.astype(np.uint8), mode="RGB").save(path, format="PNG")


def write_mask_png(path: str | Path, mask: RawMask) -> None:
    write_image_png(path, np.stack([mask.ch1, mask.ch2, mask.ch3], axis=-1))


def write_label_png(path: str | Path, labels: ClassMap) -> None:
    """Persist a class map as a single-channel 8-bit PNG of label values."""
    Image.fromarray(labels.astype(np.uint8), mode="L").save(path, format="PNG")


def read_label_png(path: str | Path) -> ClassMap:
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.int64)


def read_superclass_table(path: str | Path) -> SuperclassTable:
    """Parse a plain-text table: one ``raw_id_or_name = superclass`` per line.

    Superclass values may be names (case-insensitive) or ids 0..3. Blank
    lines and ``#`` comments are skipped. The default stays FOV.
    """
    mapping: dict[str, int] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{path}:{lineno}: expected 'raw = superclass', got {line!r}")
        key, value = (part.strip() for part in text.split("=", 1))
        upper = value.upper()
        if upper in SUPERCLASS_IDS:
            mapping[key] = SUPERCLASS_IDS[upper]
        elif value.isdigit() and int(value) < N_CLASSES:
            mapping[key] = int(value)
        else:
            raise ConfigError(f"{path}:{lineno}: unknown superclass {value!r}")
    return SuperclassTable(mapping=mapping)


_LOC_COLUMNS = ("instance_id", "raw_class", "kind")


def read_localization(
    path: str | Path, column_map: dict[str, str] | None = None
) -> list[LocalizationRecord]:
    """Read instance localization records from a CSV with header.

    Bounding boxes come from xmin/ymin/xmax/ymax columns; polygons from a
    ``coords`` column of semicolon-separated "x,y" pairs. ``column_map``
    renames canonical column names to the file's actual headers.
    """
    remap = {**{c: c for c in _LOC_COLUMNS + ("xmin", "ymin", "xmax", "ymax", "coords")}}
    if column_map:
        remap.update(column_map)
    records: list[LocalizationRecord] = []
    with open(path, newline="") as fh:
        for rowno, row in enumerate(csv.DictReader(fh), start=2):
            try:
                instance_id = int(row[remap["instance_id"]])
                raw_class = row[remap["raw_class"]].strip()
                kind = row[remap["kind"]].strip().lower()
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"{path}:{rowno}: bad localization row ({exc})") from exc
            if kind == KIND_BBOX:
                try:
                    x0, y0 = float(row[remap["xmin"]]), float(row[remap["ymin"]])
                    x1, y1 = float(row[remap["xmax"]]), float(row[remap["ymax"]])
                except (KeyError, ValueError) as exc:
                    raise ConfigError(f"{path}:{rowno}: bad bbox columns ({exc})") from exc
                if x1 < x0 or y1 < y0:
                    raise ConfigError(f"{path}:{rowno}: bbox max corner below min corner")
                coords = [(x0, y0), (x1, y1)]
            elif kind == KIND_POLYGON:
                text = row.get(remap["coords"], "") or ""
                pairs = [p for p in text.split(";") if p.strip()]
                if len(pairs) < 3:
                    raise ConfigError(f"{path}:{rowno}: polygon needs >= 3 coordinate pairs")
                try:
                    coords = [
                        (float(x), float(y))
                        for x, y in (pair.split(",", 1) for pair in pairs)
                    ]
                except ValueError as exc:
                    raise ConfigError(f"{path}:{rowno}: bad polygon coords ({exc})") from exc
            else:
                raise ConfigError(f"{path}:{rowno}: kind must be 'bbox' or 'polygon', got {kind!r}")
            records.append(LocalizationRecord(instance_id, raw_class, kind, coords))
    return records
