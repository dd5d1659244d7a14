"""Synthetic mini-dataset generator: blob nuclei on textured backgrounds.

Output layout matches the real dataset convention, one root per rater set:

    <root>/superclasses.txt
    <root>/single/{images,masks,locs}
    <root>/multi/{images,masks,locs}

Every sample contains one blob of each nucleus class (plus optional extras,
including an unmapped raw class that must fold back into FOV), blob colors
correlate strongly with their class so a micro network can actually learn
the task, and instance channels are chosen so per-pixel products are unique.
Single-rater samples mix polygon and bounding-box annotations; multi-rater
samples are polygon-only. Everything is a pure function of the seed.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .mask_codec import RawMask, write_image_png, write_mask_png

RAW_TUMOR, RAW_STROMAL, RAW_STILS, RAW_UNMAPPED = 1, 2, 3, 7

_RAW_NAMES = {
    RAW_TUMOR: "tumor_cell",
    RAW_STROMAL: "fibroblast",
    RAW_STILS: "lymphocyte",
    RAW_UNMAPPED: "unknown",
}

_CLASS_COLOR = {
    RAW_TUMOR: (200, 60, 60),
    RAW_STROMAL: (60, 200, 60),
    RAW_STILS: (60, 60, 200),
    RAW_UNMAPPED: (150, 150, 60),
}

_BACKGROUND = (185, 150, 170)

SUPERCLASS_FILE = "superclasses.txt"

_TABLE_TEXT = """\
# raw class id -> superclass
1 = TUMOR
2 = STROMAL
3 = STILS
"""


def _blob_mask(side: int, cy: float, cx: float, ry: float, rx: float) -> np.ndarray:
    rows = np.arange(side)[:, None]
    cols = np.arange(side)[None, :]
    return ((rows - cy) / ry) ** 2 + ((cols - cx) / rx) ** 2 <= 1.0


def synth_sample(seed: int, side: int = 32, oversize: int = 0, polygons_only: bool = False):
    """One synthetic tile: (image uint8 [H, W, 3], RawMask, localization rows).

    The image may be ``oversize`` pixels larger than the mask on each axis;
    blob geometry lives in the top-left side x side window so the standard
    crop recovers it. Localization rows are (instance_id, raw_class, kind,
    coords) tuples ready for the CSV writer.
    """
    rng = np.random.default_rng(seed)
    ch1 = np.zeros((side, side), dtype=np.uint8)
    ch2 = np.zeros((side, side), dtype=np.uint8)
    ch3 = np.zeros((side, side), dtype=np.uint8)

    img_side = side + oversize
    texture = rng.normal(0.0, 8.0, (img_side, img_side, 3))
    image = np.clip(np.asarray(_BACKGROUND, dtype=np.float64) + texture, 0, 255)

    # one anchor region per class keeps all three present in every sample
    anchors = [
        (RAW_TUMOR, side * 0.28, side * 0.28),
        (RAW_STROMAL, side * 0.28, side * 0.72),
        (RAW_STILS, side * 0.72, side * 0.35),
    ]
    blobs = []
    for raw_class, ay, ax in anchors:
        cy = ay + rng.uniform(-side * 0.06, side * 0.06)
        cx = ax + rng.uniform(-side * 0.06, side * 0.06)
        blobs.append((raw_class, cy, cx))
    for _ in range(int(rng.integers(0, 3))):
        raw_class = int(rng.choice([RAW_TUMOR, RAW_STROMAL, RAW_STILS, RAW_UNMAPPED]))
        blobs.append(
            (raw_class, rng.uniform(side * 0.2, side * 0.8), rng.uniform(side * 0.2, side * 0.8))
        )

    records = []
    for k, (raw_class, cy, cx) in enumerate(blobs, start=1):
        ry = rng.uniform(side * 0.09, side * 0.16)
        rx = rng.uniform(side * 0.09, side * 0.16)
        hit = _blob_mask(side, cy, cx, ry, rx)
        ch1[hit] = raw_class
        ch2[hit] = k
        ch3[hit] = k + 1  # products k(k+1) are strictly increasing, so unique
        color = np.asarray(_CLASS_COLOR[raw_class], dtype=np.float64)
        jitter = rng.normal(0.0, 6.0, (int(hit.sum()), 3))
        image[:side, :side][hit] = np.clip(color + jitter, 0, 255)

        ys, xs = np.nonzero(hit)
        if ys.size == 0:
            continue
        x0, x1 = int(xs.min()), int(xs.max())
        y0, y1 = int(ys.min()), int(ys.max())
        use_polygon = polygons_only or k % 2 == 1
        if use_polygon:
            mid_x, mid_y = (x0 + x1) // 2, (y0 + y1) // 2
            coords = [(mid_x, y0), (x1, mid_y), (mid_x, y1), (x0, mid_y)]
            records.append((k, _RAW_NAMES[raw_class], "polygon", coords))
        else:
            records.append((k, _RAW_NAMES[raw_class], "bbox", [(x0, y0), (x1, y1)]))

    mask = RawMask(ch1=ch1, ch2=ch2, ch3=ch3)
    return image.astype(np.uint8), mask, records


def _write_locs(path: Path, records) -> None:
    lines = ["instance_id,raw_class,kind,xmin,ymin,xmax,ymax,coords"]
    for instance_id, raw_class, kind, coords in records:
        if kind == "bbox":
            (x0, y0), (x1, y1) = coords
            lines.append(f"{instance_id},{raw_class},bbox,{x0},{y0},{x1},{y1},")
        else:
            joined = ";".join(f"{x},{y}" for x, y in coords)
            lines.append(f'{instance_id},{raw_class},polygon,,,,,"{joined}"')
    path.write_text("\n".join(lines) + "\n")


def _write_set(root: Path, prefix: str, count: int, side: int, seed: int, polygons_only: bool):
    for sub in ("images", "masks", "locs"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for i in range(count):
        sample_id = f"{prefix}_{i:03d}"
        oversize = 2 if (not polygons_only and i % 2 == 1) else 0
        image, mask, records = synth_sample(
            seed=seed + i, side=side, oversize=oversize, polygons_only=polygons_only
        )
        write_image_png(root / "images" / f"{sample_id}.png", image)
        write_mask_png(root / "masks" / f"{sample_id}.png", mask)
        _write_locs(root / "locs" / f"{sample_id}.csv", records)


def make_fixture(
    root: str | Path,
    n_single: int = 8,
    n_multi: int = 2,
    side: int = 32,
    seed: int = 0,
) -> Path:
    """Generate the synthetic dataset; returns the fixture root."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    (root / SUPERCLASS_FILE).write_text(_TABLE_TEXT)
    _write_set(root / "single", "single", n_single, side, seed, polygons_only=False)
    _write_set(root / "multi", "multi", n_multi, side, seed + 10_000, polygons_only=True)
    return root
