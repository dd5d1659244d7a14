"""Pipeline configuration: INI-style file with [section] key=value entries.

Every knob has a default, so a minimal config only needs the [paths]
section. ``--set section.key=value`` overrides are applied on top of the
file before parsing. Failures raise ConfigError naming the offending
``section.key``.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .augment import AugmentConfig
from .errors import ConfigError
from .mask_codec import SUPERCLASS_IDS, SUPERCLASS_NAMES
from .nn import NetworkConfig
from .preprocess import SINGLE_RATER, VARIANTS
from .train import TrainConfig, TverskyParams


@dataclass
class FixtureConfig:
    n_single: int = 8
    n_multi: int = 2
    side: int = 32
    seed: int = 0


@dataclass
class PipelineConfig:
    data_root: Path
    output_dir: Path
    superclass_table: Path | None
    variant: str = SINGLE_RATER
    split_seed: int = 7
    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)
    divisor: int = 32
    crop_anchor: str = "top_left"
    loc_columns: dict[str, str] = field(default_factory=dict)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    net_seed: int = 1
    trainer: TrainConfig = field(default_factory=TrainConfig)
    metric_classes: tuple[int, ...] = tuple(range(len(SUPERCLASS_NAMES)))
    overlay_alpha: float = 0.4
    fixture: FixtureConfig = field(default_factory=FixtureConfig)


def _convert(section: str, key: str, raw: str, conv):
    try:
        return conv(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r} ({exc})") from exc


def _floats(raw: str) -> tuple[float, ...]:
    return tuple(float(part) for part in raw.split(","))


def _bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


class _Reader:
    """Typed accessor over configparser with section.key error reporting."""

    def __init__(self, parser: configparser.ConfigParser):
        self.parser = parser

    def get(self, section: str, key: str, conv, default):
        if not self.parser.has_option(section, key):
            return default
        return _convert(section, key, self.parser.get(section, key), conv)

    def require(self, section: str, key: str, conv):
        if not self.parser.has_option(section, key):
            raise ConfigError(f"{section}.{key}: required entry is missing")
        return _convert(section, key, self.parser.get(section, key), conv)


def apply_overrides(parser: configparser.ConfigParser, overrides: list[str]) -> None:
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        target, value = item.split("=", 1)
        section, key = target.split(".", 1)
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section.strip(), key.strip(), value.strip())


def load_config(
    path: str | Path | None,
    overrides: list[str] | None = None,
    check_paths: bool = True,
) -> PipelineConfig:
    parser = configparser.ConfigParser()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    apply_overrides(parser, overrides or [])
    r = _Reader(parser)

    data_root = Path(r.require("paths", "data_root", str))
    output_dir = Path(r.require("paths", "output_dir", str))
    explicit_table = r.get("paths", "superclass_table", str, None)
    if explicit_table is not None:
        superclass_table: Path | None = Path(explicit_table)
    else:
        # fall back to the conventional location; absent means the empty
        # (everything -> FOV) table
        candidate = data_root / "superclasses.txt"
        superclass_table = candidate if candidate.exists() else None

    variant = r.get("dataset", "variant", str, SINGLE_RATER)
    if variant not in VARIANTS:
        raise ConfigError(f"dataset.variant: unknown variant {variant!r}, pick one of {VARIANTS}")
    ratios = r.get("dataset", "ratios", _floats, (0.6, 0.2, 0.2))
    if len(ratios) != 3:
        raise ConfigError(f"dataset.ratios: need three comma-separated reals, got {ratios}")

    loc_columns = dict(parser.items("localization")) if parser.has_section("localization") else {}

    augment = AugmentConfig(
        p_mirror=r.get("augment", "p_mirror", float, 0.0),
        p_rotate=r.get("augment", "p_rotate", float, 0.0),
        p_scale=r.get("augment", "p_scale", float, 0.0),
        p_elastic=r.get("augment", "p_elastic", float, 0.0),
        p_intensity=r.get("augment", "p_intensity", float, 0.0),
        free_rotation=r.get("augment", "free_rotation", _bool, False),
        scale_range=r.get("augment", "scale_range", _floats, (0.9, 1.1)),
        elastic_alpha=r.get("augment", "elastic_alpha", float, 10.0),
        elastic_sigma=r.get("augment", "elastic_sigma", float, 4.0),
        brightness_delta=r.get("augment", "brightness_delta", float, 0.1),
        contrast_range=r.get("augment", "contrast_range", _floats, (0.9, 1.1)),
        gamma_range=r.get("augment", "gamma_range", _floats, (0.8, 1.2)),
        noise_sigma=r.get("augment", "noise_sigma", float, 0.01),
        seed=r.get("augment", "seed", int, 0),
    )

    network = NetworkConfig(
        depth=r.get("network", "depth", int, 2),
        base_filters=r.get("network", "base_filters", int, 8),
        in_channels=r.get("network", "in_channels", int, 3),
        n_classes=r.get("network", "n_classes", int, 4),
    )

    trainer = TrainConfig(
        lr=r.get("trainer", "lr", float, 0.001),
        factor=r.get("trainer", "factor", float, 0.1),
        min_lr=r.get("trainer", "min_lr", float, 1e-5),
        min_delta=r.get("trainer", "min_delta", float, 1e-4),
        plateau_patience=r.get("trainer", "plateau_patience", int, 10),
        stop_patience=r.get("trainer", "stop_patience", int, 30),
        batch_size=r.get("trainer", "batch_size", int, 8),
        max_epochs=r.get("trainer", "max_epochs", int, 1000),
        momentum=r.get("trainer", "momentum", float, 0.9),
        seed=r.get("trainer", "seed", int, 0),
        tversky=TverskyParams(
            alpha=r.get("trainer", "tversky_alpha", float, 0.5),
            beta=r.get("trainer", "tversky_beta", float, 0.5),
            smooth=r.get("trainer", "tversky_smooth", float, 1e-6),
        ),
        augment=augment,
    )

    def _classes(raw: str) -> tuple[int, ...]:
        ids = []
        for name in raw.split(","):
            cleaned = name.strip().upper()
            if cleaned not in SUPERCLASS_IDS:
                raise ValueError(f"unknown class {name!r}")
            ids.append(SUPERCLASS_IDS[cleaned])
        return tuple(ids)

    metric_classes = r.get(
        "metrics", "classes", _classes, tuple(range(len(SUPERCLASS_NAMES)))
    )

    fixture = FixtureConfig(
        n_single=r.get("fixture", "n_single", int, 8),
        n_multi=r.get("fixture", "n_multi", int, 2),
        side=r.get("fixture", "side", int, 32),
        seed=r.get("fixture", "seed", int, 0),
    )

    cfg = PipelineConfig(
        data_root=data_root,
        output_dir=output_dir,
        superclass_table=superclass_table,
        variant=variant,
        split_seed=r.get("dataset", "seed", int, 7),
        ratios=ratios,
        divisor=r.get("dataset", "divisor", int, 32),
        crop_anchor=r.get("dataset", "crop_anchor", str, "top_left"),
        loc_columns=loc_columns,
        augment=augment,
        network=network,
        net_seed=r.get("network", "seed", int, 1),
        trainer=trainer,
        metric_classes=metric_classes,
        overlay_alpha=r.get("report", "overlay_alpha", float, 0.4),
        fixture=fixture,
    )
    if check_paths:
        if not cfg.data_root.exists():
            raise ConfigError(f"paths.data_root: {cfg.data_root} does not exist")
        if cfg.superclass_table is not None and not cfg.superclass_table.exists():
            raise ConfigError(f"paths.superclass_table: {cfg.superclass_table} does not exist")
    return cfg
