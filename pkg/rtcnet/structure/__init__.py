from __future__ import annotations

import rtcnet.toolbox

from dataclasses import dataclass, field, asdict
from pathlib import Path
import json

import numpy as np

SOURCES = ["eophtha", "diaretdb1", "heimed", "synthetic"]
UPSAMPLE_MODES = ["transposed_conv", "unpool"]
BLOCK_CONV_COUNTS = (2, 2, 3, 3)

@dataclass(frozen=True)
class NetworkConfig:
    """Declarative RTC-Net plan. input_dims is (height, width, channels)."""
    input_dims: tuple[int, int, int] = (448, 512, 3)
    encoder_channels: tuple[int, ...] = (64, 128, 256, 512)
    block_conv_counts: tuple[int, ...] = BLOCK_CONV_COUNTS
    decoder_channels: tuple[int, ...] = (256, 128, 64, 64)
    num_classes: int = 2
    upsample_mode: str = "transposed_conv"

    @property
    def height(self) -> int:
        return self.input_dims[0]

    @property
    def width(self) -> int:
        return self.input_dims[1]

    @property
    def channels(self) -> int:
        return self.input_dims[2]

    def validate(self) -> None:
        if len(self.input_dims) != 3 or min(self.input_dims) <= 0:
            raise ValueError(f"input_dims must be three positive ints (h, w, c), got {self.input_dims}")
        rtcnet.toolbox.check_divisible(self.height, 16, "input height")
        rtcnet.toolbox.check_divisible(self.width, 16, "input width")
        if len(self.encoder_channels) != 4:
            raise ValueError(f"encoder_channels needs 4 entries, got {len(self.encoder_channels)}")
        if len(self.decoder_channels) != 4:
            raise ValueError(f"decoder_channels needs 4 entries, got {len(self.decoder_channels)}")
        if min(self.encoder_channels) <= 0 or min(self.decoder_channels) <= 0:
            raise ValueError("channel counts must be positive")
        if tuple(self.block_conv_counts) != BLOCK_CONV_COUNTS:
            raise ValueError(f"block_conv_counts is fixed at {BLOCK_CONV_COUNTS}, got {self.block_conv_counts}")
        if self.num_classes != 2:
            raise ValueError(f"only two-class segmentation is supported, got num_classes={self.num_classes}")
        if self.upsample_mode not in UPSAMPLE_MODES:
            raise ValueError(f"upsample_mode not in {UPSAMPLE_MODES}")
        if self.upsample_mode == "unpool":
            incoming = (self.encoder_channels[3],) + tuple(self.decoder_channels[:3])
            mirrored = tuple(reversed(self.encoder_channels))
            if incoming != mirrored:
                raise ValueError(
                    f"unpool decoder needs stage inputs {incoming} to match mirrored encoder channels {mirrored}"
                )

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    l2: float = 5e-4
    batch_size: int = 4
    epochs: int = 20
    seed: int = 0
    momentum: float = 0.9
    class_weights: tuple[float, float] = (1.0, 1.0)
    checkpoint_every: int = 5

    def __post_init__(self) -> None:
        # lr == 0 is allowed (null update)
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.checkpoint_every < 1:
            raise ValueError(f"checkpoint_every must be >= 1, got {self.checkpoint_every}")
        if self.l2 < 0 or not 0 <= self.momentum < 1:
            raise ValueError(f"need l2 >= 0 and 0 <= momentum < 1, got l2={self.l2} momentum={self.momentum}")
        if len(self.class_weights) != 2 or min(self.class_weights) < 0:
            raise ValueError(f"class_weights must be two non-negative reals, got {self.class_weights}")

@dataclass(frozen=True)
class AugmentSpec:
    """Seeded recipe expanding M source pairs into target_count pairs."""
    target_count: int = 1960
    seed: int = 0
    flip_prob: float = 0.5
    translate_prob: float = 0.5
    translate_fraction: float = 0.1
    scale_prob: float = 0.5
    scale_range: tuple[float, float] = (1.0, 1.3)
    crop_prob: float = 0.5
    crop_fraction: tuple[float, float] = (0.8, 1.0)

    def __post_init__(self) -> None:
        if self.target_count < 1:
            raise ValueError(f"target_count must be positive, got {self.target_count}")
        if not 0 < self.scale_range[0] <= self.scale_range[1]:
            raise ValueError(f"invalid scale_range {self.scale_range}")
        if not 0 < self.crop_fraction[0] <= self.crop_fraction[1] <= 1:
            raise ValueError(f"invalid crop_fraction {self.crop_fraction}")
        if not 0 <= self.translate_fraction < 1:
            raise ValueError(f"invalid translate_fraction {self.translate_fraction}")

@dataclass
class FundusSample:
    """Image/mask pair with provenance. image is (1,3,h,w) in [0,1], mask is (1,1,h,w) binary."""
    id: str
    source: str
    image: np.ndarray
    mask: np.ndarray
    original_dims: tuple[int, int]

    def __post_init__(self) -> None:
        if self.source not in SOURCES:
            raise ValueError(f"Source not in {SOURCES}")
        if self.image.ndim != 4 or self.mask.ndim != 4 or self.mask.shape[1] != 1:
            raise ValueError(f"{self.id}: expected image (1,c,h,w) and mask (1,1,h,w), got {self.image.shape} and {self.mask.shape}")
        if self.image.shape[2:] != self.mask.shape[2:]:
            raise ValueError(f"{self.id}: image {self.image.shape} and mask {self.mask.shape} are not congruent")
        if not np.isin(self.mask, (0, 1)).all():
            raise ValueError(f"{self.id}: mask is not binary")
        if self.image.size and (self.image.min() < 0 or self.image.max() > 1):
            raise ValueError(f"{self.id}: image values outside [0, 1]")

    @property
    def dims(self) -> tuple[int, int]:
        return self.image.shape[2], self.image.shape[3]

@dataclass(frozen=True)
class SplitPlan:
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    seed: int

    def __post_init__(self) -> None:
        overlap = set(self.train_ids) & set(self.test_ids)
        if overlap:
            raise ValueError(f"train and test ids overlap: {sorted(overlap)[:5]}")

    def to_dict(self) -> dict:
        return {"train": list(self.train_ids), "test": list(self.test_ids), "seed": self.seed}

@dataclass
class RunManifest:
    command: str
    params: dict
    config: str
    seed: int
    version: str
    started: str = field(default_factory=rtcnet.toolbox.timestamp)
    finished: str = ""
    datasets: dict = field(default_factory=dict)
    split: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save(self, path: Path) -> None:
        self.finished = rtcnet.toolbox.timestamp()
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: Path) -> RunManifest:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"{path} does not exist")
        return cls(**json.loads(path.read_text()))
