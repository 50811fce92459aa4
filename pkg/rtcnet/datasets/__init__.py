from __future__ import annotations

import rtcnet.toolbox
from rtcnet.structure import FundusSample, SplitPlan

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import import_module
from pathlib import Path
from types import ModuleType
from typing import Callable, Iterable, Sequence
import csv
import io
import logging

import numpy as np

logger = logging.getLogger("rtcnet.datasets")

BasicMethodPath = Path(__file__).parent
IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png", ".tif", ".tiff")
EXPERTS = 4

methods: dict[str, ModuleType] = {}

@dataclass
class LoadReport:
    """One row per file considered by a loader: (file, status, reason)."""
    rows: list[tuple[str, str, str]] = field(default_factory=list)

    def add(self, file: Path | str, status: str, reason: str = "") -> None:
        self.rows.append((str(file), status, reason))

    def merge(self, other: LoadReport) -> LoadReport:
        self.rows += other.rows
        return self

    @property
    def loaded(self) -> int:
        return sum(1 for _, status, _ in self.rows if status == "loaded")

    @property
    def skipped(self) -> int:
        return sum(1 for _, status, _ in self.rows if status == "skipped")

    def to_tsv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, delimiter="\t", lineterminator="\n")
        writer.writerow(["file", "status", "reason"])
        writer.writerows(self.rows)
        return buffer.getvalue()

    def save(self, path: Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.to_tsv())

def is_image(path: Path) -> bool:
    return path.is_file() and path.suffix.lower() in IMAGE_SUFFIXES

def binary_mask(path: Path) -> np.ndarray:
    """Annotation file to a {0,1} (h, w) mask. Any non-zero pixel is exudate."""
    return (rtcnet.toolbox.read_gray(path) > 0).astype(np.float32)

def make_sample(id: str, source: str, image: np.ndarray, mask: np.ndarray) -> FundusSample:
    if image.shape[1:] != mask.shape:
        raise ValueError(f"image {image.shape[1:]} and annotation {mask.shape} differ in size")
    return FundusSample(id, source, image[np.newaxis], mask[np.newaxis, np.newaxis].astype(np.float32),
                        (image.shape[1], image.shape[2]))

def parallel_load(entries: Sequence, load_one: Callable, workers: int = 4,
                  dims: tuple[int, int] = None) -> tuple[list[FundusSample], LoadReport]:
    """
    Run load_one over entries on a thread pool and merge the per-file results.

    load_one(entry) returns (sample or None, (file, status, reason)). Samples keep entry order.
    With dims set, each sample is resized inside its worker.
    """
    def run(entry):
        sample, row = load_one(entry)
        if sample is not None and dims is not None:
            sample = resize_to_input(sample, dims)
        return sample, row

    report = LoadReport()
    samples = []
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for sample, row in pool.map(run, entries):
            report.add(*row)
            if sample is not None:
                samples.append(sample)
            elif row[1] == "skipped":
                logger.warning(f"skipped {row[0]}: {row[2]}")
    return samples, report

def fuse_expert_labels(maps: Sequence[np.ndarray], threshold: float = 0.5) -> np.ndarray:
    """
    Combine four expert maps into one binary mask.
    Args:
        maps (Sequence[np.ndarray]): Four congruent (h, w) maps in [0, 1]
        threshold (float): A pixel is positive iff the mean of the maps is >= threshold
    Returns:
        np.ndarray: (h, w) float32 mask of 0/1
    """
    if len(maps) != EXPERTS:
        raise ValueError(f"expected {EXPERTS} expert maps, got {len(maps)}")
    shapes = {np.shape(m) for m in maps}
    if len(shapes) != 1:
        raise ValueError(f"expert maps are not congruent: {sorted(shapes)}")
    stack = np.stack([np.asarray(m, dtype=np.float64) for m in maps])
    return (stack.sum(axis=0) >= threshold * EXPERTS).astype(np.float32)

def resize_to_input(sample: FundusSample, dims: tuple[int, int] = (448, 512)) -> FundusSample:
    """
    Bilinear image resize and nearest mask resize to the network input size.
    Args:
        sample (FundusSample): Sample at any size
        dims (tuple[int, int]): (height, width), both multiples of 16
    Returns:
        FundusSample: New sample; original_dims is carried over
    """
    height, width = dims
    rtcnet.toolbox.check_divisible(height, 16, "target height")
    rtcnet.toolbox.check_divisible(width, 16, "target width")
    if sample.dims == (height, width):
        return sample
    image = np.stack([rtcnet.toolbox.resize_plane(plane, height, width) for plane in sample.image[0]])
    mask = rtcnet.toolbox.resize_plane(sample.mask[0, 0], height, width, nearest=True)
    return FundusSample(sample.id, sample.source,
                        np.clip(image, 0.0, 1.0).astype(sample.image.dtype)[np.newaxis],
                        mask.astype(sample.mask.dtype)[np.newaxis, np.newaxis],
                        sample.original_dims)

def make_split(ids: Iterable[str], test_count: int = 22, seed: int = 0) -> SplitPlan:
    """
    Seeded train/test partition. ids are sorted first so the plan does not depend on load order.
    """
    ids = sorted(ids)
    if len(set(ids)) != len(ids):
        raise ValueError("sample ids are not unique")
    if not 0 <= test_count <= len(ids):
        raise ValueError(f"test_count {test_count} out of range for {len(ids)} samples")
    order = np.random.default_rng(seed).permutation(len(ids))
    test = sorted(ids[k] for k in order[:test_count])
    train = sorted(ids[k] for k in order[test_count:])
    return SplitPlan(tuple(train), tuple(test), seed)

def split(samples: Sequence[FundusSample], plan: SplitPlan) -> tuple[list[FundusSample], list[FundusSample]]:
    by_id = {sample.id: sample for sample in samples}
    planned = set(plan.train_ids) | set(plan.test_ids)
    if planned != set(by_id):
        missing, extra = sorted(set(by_id) - planned), sorted(planned - set(by_id))
        raise ValueError(f"split plan does not partition the samples (unplanned: {missing[:5]}, unknown: {extra[:5]})")
    return [by_id[i] for i in plan.train_ids], [by_id[i] for i in plan.test_ids]

def loader(methodPath: Path) -> None:
    """Import every loader module under methodPath and register it by its dataset name."""
    for method in sorted(methodPath.glob("*.py")):
        if method.stem == "__init__":
            continue
        this = import_module(f"rtcnet.datasets.{method.stem}")
        methods[this.name] = this

def load(name: str, root: Path, fusion_threshold: float = 0.5, workers: int = 4,
         dims: tuple[int, int] = None) -> tuple[list[FundusSample], LoadReport]:
    """
    Load a dataset by name.
    Args:
        name (str): eophtha, diaretdb1, heimed or dir
        root (Path): Dataset root directory
        fusion_threshold (float): Expert fusion threshold (diaretdb1 only)
        workers (int): Reader threads
        dims (tuple[int, int]): Resize every sample to (height, width); native size when None
    Returns:
        tuple: (samples sorted by id, load report)
    """
    if name not in methods:
        raise ValueError(f"Dataset not in {sorted(methods)}")
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"{root} is not a directory")
    samples, report = methods[name].load(root, fusion_threshold=fusion_threshold, workers=workers, dims=dims)
    samples.sort(key=lambda sample: sample.id)
    logger.info(f"{name}: loaded {report.loaded} samples from {root}, skipped {report.skipped}")
    return samples, report

loader(BasicMethodPath)
