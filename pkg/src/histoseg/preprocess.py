"""Network-ready sample assembly: crop, pad or resize, z-score, one-hot.

The per-sample pipeline is decode -> optional bbox strip -> crop image to
mask -> pad-or-resize to the square target -> z-score -> one-hot. Padding is
used when both dimensions fit inside the target, otherwise the sample is
stretched to the square. The z-score statistics are taken over the data
region only, before padding, so pad pixels (value 0 = the mean) never
distort them.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import mask_codec as mc
from .errors import EmptyEval, EmptyMask, OverlappingSets, TargetSmaller
from .explore import SplitIndex, TargetShape, image_path, loc_path, mask_path

ARCHIVE_MAGIC = b"HSP1"

SINGLE_RATER = "single_rater"
SINGLE_RATER_NOBBOX = "single_rater_nobbox"
COMBINED_MULTIRATER_EVAL = "combined_multirater_eval"
VARIANTS = (SINGLE_RATER, SINGLE_RATER_NOBBOX, COMBINED_MULTIRATER_EVAL)


@dataclass
class TileSample:
    """One raw dataset entry: tile, mask and localization records."""

    sample_id: str
    image: np.ndarray  # uint8 [H, W, 3]
    mask: mc.RawMask
    records: list[mc.LocalizationRecord]


@dataclass
class PreparedSample:
    """A network-ready sample: z-scored pixels and a one-hot mask."""

    sample_id: str
    pixels: np.ndarray  # float [S, S, 3]
    onehot: np.ndarray  # uint8 [S, S, n_classes], exactly one 1 per pixel


@dataclass
class StagedSample:
    """A decoded, cropped sample awaiting augmentation and finalization."""

    sample_id: str
    image01: np.ndarray  # float [h, w, 3] in [0, 1]
    classmap: mc.ClassMap


@dataclass
class VariantRoles:
    """Sample ids per pipeline phase for one dataset variant."""

    train: list[str]
    val: list[str]
    eval: list[str]
    strip_bbox: bool


def load_tile_sample(
    root: str | Path, sample_id: str, column_map: dict[str, str] | None = None
) -> TileSample:
    image = mc.read_image_png(image_path(root, sample_id))
    mask = mc.read_mask_png(mask_path(root, sample_id))
    locs = loc_path(root, sample_id)
    records = mc.read_localization(locs, column_map) if locs.exists() else []
    return TileSample(sample_id=sample_id, image=image, mask=mask, records=records)


def zscore_normalize(pixels: np.ndarray) -> np.ndarray:
    """Center and scale by the population mean/std over all pixels jointly.

    A (near-)constant raster maps to all zeros instead of dividing by ~0.
    """
    if pixels.size == 0:
        raise EmptyMask("cannot normalize an empty raster")
    values = pixels.astype(np.float64)
    mu = values.mean()
    sigma = values.std()
    if sigma < 1e-12:
        return np.zeros_like(values)
    return (values - mu) / sigma


def pad_to_shape(raster: np.ndarray, target: TargetShape) -> np.ndarray:
    """Place the raster at the top-left of a side x side canvas.

    Pad value is 0 for both kinds: image padding happens after z-scoring
    (0 is the mean) and label 0 is FOV.
    """
    h, w = raster.shape[:2]
    side = target.side
    if h > side or w > side:
        raise TargetSmaller(f"input {h}x{w} exceeds target {side}; resize instead")
    shape = (side, side) + raster.shape[2:]
    out = np.zeros(shape, dtype=raster.dtype)
    out[:h, :w] = raster
    return out


def _resize_nearest(raster: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    in_h, in_w = raster.shape[:2]
    rows = np.minimum((np.arange(out_h) + 0.5) * (in_h / out_h), in_h - 1).astype(np.int64)
    cols = np.minimum((np.arange(out_w) + 0.5) * (in_w / out_w), in_w - 1).astype(np.int64)
    return raster[rows[:, None], cols[None, :]]


def _resize_bilinear(raster: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    in_h, in_w = raster.shape[:2]
    rows = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    cols = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    wr = rows - r0
    wc = cols - c0
    r0c = np.clip(r0, 0, in_h - 1)
    r1c = np.clip(r0 + 1, 0, in_h - 1)
    c0c = np.clip(c0, 0, in_w - 1)
    c1c = np.clip(c0 + 1, 0, in_w - 1)
    values = raster.astype(np.float64)
    if values.ndim == 2:
        wr_ = wr[:, None]
        wc_ = wc[None, :]
    else:
        wr_ = wr[:, None, None]
        wc_ = wc[None, :, None]
    top = values[r0c[:, None], c0c[None, :]] * (1 - wc_) + values[r0c[:, None], c1c[None, :]] * wc_
    bot = values[r1c[:, None], c0c[None, :]] * (1 - wc_) + values[r1c[:, None], c1c[None, :]] * wc_
    return top * (1 - wr_) + bot * wr_


def resize_to_shape(raster: np.ndarray, target: TargetShape, kind: str) -> np.ndarray:
    """Resample to side x side: bilinear for images, nearest for masks.

    Nearest-neighbor keeps mask labels unblended; the sampling convention is
    src = (dst + 0.5) * in/out (- 0.5 for bilinear).
    """
    if raster.size == 0:
        raise EmptyMask("cannot resize an empty raster")
    side = target.side
    if raster.shape[:2] == (side, side):
        return raster.copy()
    if kind == "mask":
        return _resize_nearest(raster, side, side)
    if kind == "image":
        return _resize_bilinear(raster, side, side)
    raise ValueError(f"kind must be 'image' or 'mask', got {kind!r}")


def one_hot(cm: mc.ClassMap, n_classes: int = mc.N_CLASSES) -> np.ndarray:
    """[H, W] labels to a uint8 [H, W, n_classes] indicator raster."""
    return (cm[..., None] == np.arange(n_classes)).astype(np.uint8)


def stage_sample(
    sample: TileSample,
    table: mc.SuperclassTable,
    strip_bbox: bool = False,
    anchor: str = "top_left",
) -> tuple[np.ndarray, mc.ClassMap]:
    """Decode and crop a raw sample into a [0,1] image and its class map.

    This is the augmentation-ready stage: geometry matches the mask but no
    padding, resizing or normalization has happened yet.
    """
    cm = mc.decode_class_map(sample.mask, table)
    if strip_bbox:
        im = mc.decode_instance_map(sample.mask)
        cm, _, _ = mc.strip_bounding_boxes(cm, im, sample.records)
    image = mc.crop_image_to_mask(sample.image, cm, anchor=anchor)
    return image.astype(np.float64) / 255.0, cm


def finalize_pair(
    image01: np.ndarray, cm: mc.ClassMap, target: TargetShape, sample_id: str = ""
) -> PreparedSample:
    """Pad-or-resize a staged pair to the target, then z-score and one-hot."""
    h, w = cm.shape
    side = target.side
    if h <= side and w <= side:
        pixels = pad_to_shape(zscore_normalize(image01), target)
        labels = pad_to_shape(cm, target)
    else:
        pixels = zscore_normalize(resize_to_shape(image01, target, "image"))
        labels = resize_to_shape(cm, target, "mask")
    return PreparedSample(sample_id=sample_id, pixels=pixels, onehot=one_hot(labels))


def prepare_sample(
    sample: TileSample,
    table: mc.SuperclassTable,
    target: TargetShape,
    strip_bbox: bool = False,
    anchor: str = "top_left",
) -> PreparedSample:
    image01, cm = stage_sample(sample, table, strip_bbox=strip_bbox, anchor=anchor)
    return finalize_pair(image01, cm, target, sample_id=sample.sample_id)


def stage_dataset(
    root: str | Path,
    ids: list[str],
    table: mc.SuperclassTable,
    strip_bbox: bool = False,
    anchor: str = "top_left",
    column_map: dict[str, str] | None = None,
) -> list[StagedSample]:
    staged = []
    for sample_id in ids:
        sample = load_tile_sample(root, sample_id, column_map)
        image01, cm = stage_sample(sample, table, strip_bbox=strip_bbox, anchor=anchor)
        staged.append(StagedSample(sample_id=sample_id, image01=image01, classmap=cm))
    return staged


def assemble_variant(
    variant: str,
    split: SplitIndex,
    single_ids: list[str],
    multi_ids: list[str],
) -> VariantRoles:
    """Map a dataset variant onto phase id lists.

    The two single-rater variants share the provided split (the no-bbox one
    only raises the strip flag). The combined variant keeps the whole
    multi-rater set for evaluation and folds the split's eval portion back
    into training so every single-rater sample is used.
    """
    overlap = set(single_ids) & set(multi_ids)
    if overlap:
        raise OverlappingSets(f"ids present in both sets: {sorted(overlap)}")
    if variant in (SINGLE_RATER, SINGLE_RATER_NOBBOX):
        return VariantRoles(
            train=list(split.train),
            val=list(split.val),
            eval=list(split.eval),
            strip_bbox=variant == SINGLE_RATER_NOBBOX,
        )
    if variant == COMBINED_MULTIRATER_EVAL:
        if not multi_ids:
            raise EmptyEval("combined variant needs a non-empty multi-rater set")
        return VariantRoles(
            train=list(split.train) + list(split.eval),
            val=list(split.val),
            eval=list(multi_ids),
            strip_bbox=False,
        )
    raise ValueError(f"unknown dataset variant {variant!r}")


# -- prepared-sample archive (HSP1) -----------------------------------------


def save_prepared(ps: PreparedSample, path: str | Path) -> None:
    """Write the flat binary archive: 16-byte header, f32 pixels, u8 one-hot."""
    side, _, channels = ps.pixels.shape
    classes = ps.onehot.shape[2]
    out = bytearray()
    out += ARCHIVE_MAGIC
    out += struct.pack("<3I", side, channels, classes)
    out += ps.pixels.astype("<f4").tobytes(order="C")
    out += ps.onehot.astype(np.uint8).tobytes(order="C")
    Path(path).write_bytes(bytes(out))


def load_prepared(path: str | Path) -> PreparedSample:
    raw = Path(path).read_bytes()
    if raw[:4] != ARCHIVE_MAGIC:
        raise ValueError(f"{path}: not a HSP1 archive")
    side, channels, classes = struct.unpack_from("<3I", raw, 4)
    offset = 16
    n_pix = side * side * channels
    pixels = np.frombuffer(raw, dtype="<f4", count=n_pix, offset=offset)
    offset += 4 * n_pix
    onehot = np.frombuffer(raw, dtype=np.uint8, count=side * side * classes, offset=offset)
    return PreparedSample(
        sample_id=Path(path).stem,
        pixels=pixels.reshape(side, side, channels).astype(np.float64),
        onehot=onehot.reshape(side, side, classes).copy(),
    )


def save_roles(roles: VariantRoles, path: str | Path) -> None:
    payload = {
        "train": roles.train,
        "val": roles.val,
        "eval": roles.eval,
        "strip_bbox": roles.strip_bbox,
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_roles(path: str | Path) -> VariantRoles:
    raw = json.loads(Path(path).read_text())
    return VariantRoles(
        train=list(raw["train"]),
        val=list(raw["val"]),
        eval=list(raw["eval"]),
        strip_bbox=bool(raw["strip_bbox"]),
    )
