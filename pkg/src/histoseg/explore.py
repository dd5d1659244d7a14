"""Dataset scanning, statistics, target-shape derivation and splitting.

A dataset root has this layout (sample ids are file stems):

    root/
      images/<id>.png    RGB tiles
      masks/<id>.png     three-channel masks
      locs/<id>.csv      optional localization records

The train/val/eval split uses an explicitly documented PRNG so any other
implementation can reproduce it bit for bit: the seed is mixed once through
splitmix64, then xorshift64* drives a Fisher-Yates shuffle (j = next() mod
(i + 1), walking i from n - 1 down to 1). Sizes follow the floor rule:
val = floor(r2 * n), eval = floor(r3 * n), train takes the remainder.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import BadRatios, ConfigError, EmptyDataset, EmptyIds, MismatchedPair, TooSmall
from .mask_codec import SUPERCLASS_NAMES, SuperclassTable, decode_class_map, read_mask_png


@dataclass
class DatasetSummary:
    n_samples: int
    mean_height: float
    mean_width: float
    max_height: int
    max_width: int
    class_pixel_fractions: dict[str, float]


@dataclass
class SplitIndex:
    train: list[str]
    val: list[str]
    eval: list[str]
    seed: int
    ratios: tuple[float, float, float]


@dataclass
class TargetShape:
    side: int
    divisor: int


def worker_count() -> int:
    """Worker cap for parallel sample reads; HISTOSEG_THREADS overrides."""
    env = os.environ.get("HISTOSEG_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"HISTOSEG_THREADS must be an integer, got {env!r}") from exc
    return min(4, os.cpu_count() or 1)


def image_path(root: str | Path, sample_id: str) -> Path:
    return Path(root) / "images" / f"{sample_id}.png"


def mask_path(root: str | Path, sample_id: str) -> Path:
    return Path(root) / "masks" / f"{sample_id}.png"


def loc_path(root: str | Path, sample_id: str) -> Path:
    return Path(root) / "locs" / f"{sample_id}.csv"


def list_sample_ids(root: str | Path) -> list[str]:
    """Sorted sample ids present as (image, mask) pairs; mismatches are errors."""
    root = Path(root)
    images = {p.stem for p in (root / "images").glob("*.png")}
    masks = {p.stem for p in (root / "masks").glob("*.png")}
    if images != masks:
        odd = sorted(images.symmetric_difference(masks))
        raise MismatchedPair(f"unpaired samples under {root}: {', '.join(odd)}")
    if not images:
        raise EmptyDataset(f"no (image, mask) pairs under {root}")
    return sorted(images)


def scan_dataset(root: str | Path, table: SuperclassTable) -> DatasetSummary:
    """Dimension and class-distribution statistics over every mask in root.

    Aggregation uses integer pixel counts, so the result is independent of
    read order and safe to parallelize.
    """
    ids = list_sample_ids(root)

    def stats(sample_id: str):
        mask = read_mask_png(mask_path(root, sample_id))
        labels = decode_class_map(mask, table)
        counts = np.bincount(labels.ravel(), minlength=len(SUPERCLASS_NAMES))
        return mask.height, mask.width, counts

    workers = worker_count()
    if workers > 1 and len(ids) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(stats, ids))
    else:
        rows = [stats(i) for i in ids]

    heights = [r[0] for r in rows]
    widths = [r[1] for r in rows]
    totals = np.sum([r[2] for r in rows], axis=0)
    grand = int(totals.sum())
    fractions = {
        name: int(totals[i]) / grand for i, name in enumerate(SUPERCLASS_NAMES)
    }
    return DatasetSummary(
        n_samples=len(ids),
        mean_height=sum(heights) / len(ids),
        mean_width=sum(widths) / len(ids),
        max_height=max(heights),
        max_width=max(widths),
        class_pixel_fractions=fractions,
    )


def compute_target_shape(summary: DatasetSummary, divisor: int) -> TargetShape:
    """Largest square side divisible by ``divisor`` that fits the dataset's
    smaller maximum dimension."""
    if divisor < 2 or divisor & (divisor - 1):
        raise ConfigError(f"divisor must be a power of two >= 2, got {divisor}")
    limit = min(summary.max_height, summary.max_width)
    side = (limit // divisor) * divisor
    if side < divisor:
        raise TooSmall(f"max dims {summary.max_height}x{summary.max_width} below divisor {divisor}")
    return TargetShape(side=side, divisor=divisor)


# -- split PRNG (fixed algorithm, see module docstring) ---------------------

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class XorShift64Star:
    """xorshift64* with a splitmix64-mixed seed (never zero state)."""

    def __init__(self, seed: int):
        self.state = _splitmix64(seed & _MASK64) or 0x9E3779B97F4A7C15

    def next(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & _MASK64
        x ^= x >> 27
        self.state = x
        return (x * 0x2545F4914F6CDD1D) & _MASK64


def _fisher_yates(items: list, rng: XorShift64Star) -> list:
    out = list(items)
    for i in range(len(out) - 1, 0, -1):
        j = rng.next() % (i + 1)
        out[i], out[j] = out[j], out[i]
    return out


def make_split(
    ids: Sequence[str], ratios: Sequence[float], seed: int
) -> SplitIndex:
    """Deterministic shuffled partition into train/val/eval id lists."""
    if not ids:
        raise EmptyIds("cannot split an empty id list")
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise BadRatios(f"ratios must be three non-negative reals summing to 1, got {ratios}")
    n = len(ids)
    shuffled = _fisher_yates(list(ids), XorShift64Star(seed))
    n_val = math.floor(ratios[1] * n)
    n_eval = math.floor(ratios[2] * n)
    n_train = n - n_val - n_eval
    return SplitIndex(
        train=shuffled[:n_train],
        val=shuffled[n_train : n_train + n_val],
        eval=shuffled[n_train + n_val :],
        seed=seed,
        ratios=(float(ratios[0]), float(ratios[1]), float(ratios[2])),
    )


# -- JSON serialization ------------------------------------------------------


def _dump_json(payload: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def save_summary(summary: DatasetSummary, path: str | Path) -> None:
    _dump_json(
        {
            "n_samples": summary.n_samples,
            "mean_height": summary.mean_height,
            "mean_width": summary.mean_width,
            "max_height": summary.max_height,
            "max_width": summary.max_width,
            "class_pixel_fractions": summary.class_pixel_fractions,
        },
        path,
    )


def load_summary(path: str | Path) -> DatasetSummary:
    raw = json.loads(Path(path).read_text())
    return DatasetSummary(
        n_samples=raw["n_samples"],
        mean_height=raw["mean_height"],
        mean_width=raw["mean_width"],
        max_height=raw["max_height"],
        max_width=raw["max_width"],
        class_pixel_fractions=dict(raw["class_pixel_fractions"]),
    )


def save_split(split: SplitIndex, path: str | Path) -> None:
    _dump_json(
        {
            "train": split.train,
            "val": split.val,
            "eval": split.eval,
            "seed": split.seed,
            "ratios": list(split.ratios),
        },
        path,
    )


def load_split(path: str | Path) -> SplitIndex:
    raw = json.loads(Path(path).read_text())
    return SplitIndex(
        train=list(raw["train"]),
        val=list(raw["val"]),
        eval=list(raw["eval"]),
        seed=raw["seed"],
        ratios=tuple(raw["ratios"]),
    )


def save_target(target: TargetShape, path: str | Path) -> None:
    _dump_json({"side": target.side, "divisor": target.divisor}, path)


def load_target(path: str | Path) -> TargetShape:
    raw = json.loads(Path(path).read_text())
    return TargetShape(side=raw["side"], divisor=raw["divisor"])
