import rtcnet
import rtcnet.structure

from pathlib import Path

import numpy as np

DEFAULT_CONFIG = {
    "seed": 0,
    "precision": "single",

    "net.input_height": 448,
    "net.input_width": 512,
    "net.input_channels": 3,
    "net.encoder_channels": (64, 128, 256, 512),
    "net.block_conv_counts": (2, 2, 3, 3),
    "net.decoder_channels": (256, 128, 64, 64),
    "net.num_classes": 2,
    "net.upsample_mode": "transposed_conv",

    "train.learning_rate": 1e-4,
    "train.l2": 5e-4,
    "train.batch_size": 4,
    "train.epochs": 20,
    "train.momentum": 0.9,
    "train.class_weights": (1.0, 1.0),
    "train.checkpoint_every": 5,

    "augment.target_count": 1960,
    "augment.flip_prob": 0.5,
    "augment.translate_prob": 0.5,
    "augment.translate_fraction": 0.1,
    "augment.scale_prob": 0.5,
    "augment.scale_range": (1.0, 1.3),
    "augment.crop_prob": 0.5,
    "augment.crop_fraction": (0.8, 1.0),
    "augment.workers": 1,

    "data.fusion_threshold": 0.5,
    "data.test_count": 22,
    "data.workers": 4,

    "eval.min_area": 1,
    "eval.averaging": "micro",

    "logger.level": "INFO",
    "logger.format": "[%(asctime)s] %(levelname)s # %(message)s",
    "logger.folder": "{year}/{month}/{day}",
    "logger.filename": "{hour}{minute}{second}.{command}.log",
}

PRECISIONS = {"single": np.float32, "double": np.float64}

class ConfigError(ValueError):
    def __init__(self, message: str, path=None, line: int = None) -> None:
        self.path = path
        self.line = line
        where = f"{path or '<config>'}:{line}: " if line is not None else ""
        super().__init__(f"{where}{message}")

def _coerce(raw: str, default):
    """Parse raw text into the type of default."""
    raw = raw.strip()
    if isinstance(default, bool):
        if raw.lower() not in ("true", "false"):
            raise ValueError(f"expected true or false, got {raw!r}")
        return raw.lower() == "true"
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        kind = type(default[0]) if default else str
        items = [item.strip() for item in raw.split(",") if item.strip()]
        return tuple(kind(item) for item in items)
    return raw

def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format(item) for item in value)
    return str(value)

def loads(text: str, path=None, base: dict = None) -> dict:
    """
    Parse the flat key-value config grammar.
    Args:
        text (str): Config text
        path: File name used in error messages
        base (dict): Values to start from, DEFAULT_CONFIG if None
    Returns:
        dict: Merged configuration
    """
    conf = dict(DEFAULT_CONFIG if base is None else base)
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"expected 'key = value', got {stripped!r}", path, lineno)
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in DEFAULT_CONFIG:
            raise ConfigError(f"unknown key {key!r}", path, lineno)
        try:
            conf[key] = _coerce(raw, DEFAULT_CONFIG[key])
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}", path, lineno) from None
    return conf

def load(path) -> dict:
    """Load a config file on top of DEFAULT_CONFIG"""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path} does not exist!")
    return loads(path.read_text(), path)

def dumps(conf: dict) -> str:
    """Canonical text form: sorted keys, one per line"""
    return "".join(f"{key} = {_format(conf[key])}\n" for key in sorted(conf))

def override(conf: dict, **flags) -> dict:
    """Flags win over file values; None means the flag was not given."""
    merged = dict(conf)
    for key, value in flags.items():
        if value is None:
            continue
        if key not in DEFAULT_CONFIG:
            raise ConfigError(f"unknown key {key!r}")
        merged[key] = value
    return merged

def dtype(conf: dict) -> type:
    if conf["precision"] not in PRECISIONS:
        raise ConfigError(f"precision not in {list(PRECISIONS)}")
    return PRECISIONS[conf["precision"]]

def network_config(conf: dict) -> rtcnet.structure.NetworkConfig:
    return rtcnet.structure.NetworkConfig(
        input_dims=(conf["net.input_height"], conf["net.input_width"], conf["net.input_channels"]),
        encoder_channels=tuple(conf["net.encoder_channels"]),
        block_conv_counts=tuple(conf["net.block_conv_counts"]),
        decoder_channels=tuple(conf["net.decoder_channels"]),
        num_classes=conf["net.num_classes"],
        upsample_mode=conf["net.upsample_mode"],
    )

def network_entries(config: rtcnet.structure.NetworkConfig) -> dict:
    """Inverse of network_config, for config echo."""
    return {
        "net.input_height": config.height,
        "net.input_width": config.width,
        "net.input_channels": config.channels,
        "net.encoder_channels": tuple(config.encoder_channels),
        "net.block_conv_counts": tuple(config.block_conv_counts),
        "net.decoder_channels": tuple(config.decoder_channels),
        "net.num_classes": config.num_classes,
        "net.upsample_mode": config.upsample_mode,
    }

def train_config(conf: dict) -> rtcnet.structure.TrainConfig:
    return rtcnet.structure.TrainConfig(
        learning_rate=conf["train.learning_rate"],
        l2=conf["train.l2"],
        batch_size=conf["train.batch_size"],
        epochs=conf["train.epochs"],
        seed=conf["seed"],
        momentum=conf["train.momentum"],
        class_weights=tuple(conf["train.class_weights"]),
        checkpoint_every=conf["train.checkpoint_every"],
    )

def augment_spec(conf: dict) -> rtcnet.structure.AugmentSpec:
    return rtcnet.structure.AugmentSpec(
        target_count=conf["augment.target_count"],
        seed=conf["seed"],
        flip_prob=conf["augment.flip_prob"],
        translate_prob=conf["augment.translate_prob"],
        translate_fraction=conf["augment.translate_fraction"],
        scale_prob=conf["augment.scale_prob"],
        scale_range=tuple(conf["augment.scale_range"]),
        crop_prob=conf["augment.crop_prob"],
        crop_fraction=tuple(conf["augment.crop_fraction"]),
    )
