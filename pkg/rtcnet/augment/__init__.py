from __future__ import annotations

import rtcnet.toolbox
from rtcnet.structure import AugmentSpec, FundusSample

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence
import csv
import logging
import re

import numpy as np

logger = logging.getLogger("rtcnet.augment")

MANIFEST = "manifest.tsv"

@dataclass(frozen=True)
class GeoTransform:
    """
    One geometric operation applied identically to image and mask.

    params per kind: hflip/vflip (), translate (dx, dy), scale (factor,),
    crop (top, left, height, width), resize (height, width).
    """
    kind: str
    params: tuple = ()

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"Transform kind not in {list(KINDS)}")
        if len(self.params) != KINDS[self.kind]:
            raise ValueError(f"{self.kind} takes {KINDS[self.kind]} parameters, got {self.params}")
        if self.kind == "scale" and not self.params[0] > 0:
            raise ValueError(f"scale factor must be positive, got {self.params[0]}")
        if self.kind in ("crop", "resize") and min(self.params[-2:]) <= 0:
            raise ValueError(f"{self.kind} needs positive height and width, got {self.params}")

    @classmethod
    def hflip(cls) -> GeoTransform:
        return cls("hflip")

    @classmethod
    def vflip(cls) -> GeoTransform:
        return cls("vflip")

    @classmethod
    def translate(cls, dx: int, dy: int) -> GeoTransform:
        return cls("translate", (int(dx), int(dy)))

    @classmethod
    def scale(cls, factor: float) -> GeoTransform:
        return cls("scale", (float(factor),))

    @classmethod
    def crop(cls, top: int, left: int, height: int, width: int) -> GeoTransform:
        return cls("crop", (int(top), int(left), int(height), int(width)))

    @classmethod
    def resize(cls, height: int, width: int) -> GeoTransform:
        return cls("resize", (int(height), int(width)))

    def __str__(self) -> str:
        if not self.params:
            return self.kind
        if self.kind == "scale":
            return f"scale({self.params[0]!r})"
        names = PARAM_NAMES[self.kind]
        return f"{self.kind}({','.join(f'{name}={value}' for name, value in zip(names, self.params))})"

KINDS = {"hflip": 0, "vflip": 0, "translate": 2, "scale": 1, "crop": 4, "resize": 2}
PARAM_NAMES = {"translate": ("dx", "dy"), "crop": ("top", "left", "height", "width"), "resize": ("height", "width")}

def chain_text(chain: Sequence[GeoTransform]) -> str:
    return " | ".join(str(t) for t in chain) if chain else "original"

def parse_chain(text: str) -> tuple[GeoTransform, ...]:
    """Inverse of chain_text."""
    text = text.strip()
    if text == "original":
        return ()
    chain = []
    for part in text.split("|"):
        match = re.fullmatch(r"\s*(\w+)(?:\((.*)\))?\s*", part)
        if not match:
            raise ValueError(f"cannot parse transform {part.strip()!r}")
        kind, args = match.group(1), match.group(2)
        if kind == "scale":
            chain.append(GeoTransform.scale(float(args)))
        elif args:
            values = dict(item.split("=", 1) for item in args.split(","))
            chain.append(GeoTransform(kind, tuple(int(values[name]) for name in PARAM_NAMES.get(kind, ()))))
        else:
            chain.append(GeoTransform(kind))
    return tuple(chain)

def _planes(array: np.ndarray) -> np.ndarray:
    return array.reshape((-1,) + array.shape[-2:])

def _resize(array: np.ndarray, height: int, width: int, nearest: bool) -> np.ndarray:
    planes = [rtcnet.toolbox.resize_plane(plane, height, width, nearest) for plane in _planes(array)]
    out = np.stack(planes).reshape(array.shape[:-2] + (height, width))
    return out.astype(array.dtype) if nearest else np.clip(out, 0.0, 1.0).astype(array.dtype)

def _shift(array: np.ndarray, dx: int, dy: int) -> np.ndarray:
    out = np.zeros_like(array)
    h, w = array.shape[-2:]
    if abs(dx) >= w or abs(dy) >= h:
        return out
    out[..., max(0, dy):h - max(0, -dy), max(0, dx):w - max(0, -dx)] = \
        array[..., max(0, -dy):h - max(0, dy), max(0, -dx):w - max(0, dx)]
    return out

def _fit(array: np.ndarray, height: int, width: int) -> np.ndarray:
    """Centered crop or zero-pad to (height, width)."""
    h, w = array.shape[-2:]
    out = np.zeros(array.shape[:-2] + (height, width), dtype=array.dtype)
    src_top, dst_top = max(0, (h - height) // 2), max(0, (height - h) // 2)
    src_left, dst_left = max(0, (w - width) // 2), max(0, (width - w) // 2)
    rows, cols = min(h, height), min(w, width)
    out[..., dst_top:dst_top + rows, dst_left:dst_left + cols] = \
        array[..., src_top:src_top + rows, src_left:src_left + cols]
    return out

def _transform(array: np.ndarray, t: GeoTransform, nearest: bool) -> np.ndarray:
    h, w = array.shape[-2:]
    if t.kind == "hflip":
        return np.ascontiguousarray(array[..., ::-1])
    if t.kind == "vflip":
        return np.ascontiguousarray(array[..., ::-1, :])
    if t.kind == "translate":
        return _shift(array, *t.params)
    if t.kind == "scale":
        factor = t.params[0]
        scaled = _resize(array, max(1, int(round(h * factor))), max(1, int(round(w * factor))), nearest)
        return _fit(scaled, h, w)
    if t.kind == "crop":
        top, left, height, width = t.params
        if top < 0 or left < 0 or top + height > h or left + width > w:
            raise ValueError(f"crop rect (top={top}, left={left}, {height}x{width}) lies outside the {h}x{w} frame")
        return np.ascontiguousarray(array[..., top:top + height, left:left + width])
    return _resize(array, *t.params, nearest)

def apply(pair: tuple[np.ndarray, np.ndarray], t: GeoTransform) -> tuple[np.ndarray, np.ndarray]:
    """
    Apply one transform to an (image, mask) pair.

    Images resample bilinearly, masks by nearest neighbour so they stay binary.
    Regions moved in from outside the frame are zero (image) and background (mask).
    """
    image, mask = pair
    if image.shape[-2:] != mask.shape[-2:]:
        raise ValueError(f"image {image.shape} and mask {mask.shape} are not spatially congruent")
    return _transform(image, t, nearest=False), _transform(mask, t, nearest=True)

def apply_chain(pair: tuple[np.ndarray, np.ndarray], chain: Sequence[GeoTransform]) -> tuple[np.ndarray, np.ndarray]:
    for t in chain:
        pair = apply(pair, t)
    return pair

def sample_chain(rng: np.random.Generator, spec: AugmentSpec, height: int, width: int) -> tuple[GeoTransform, ...]:
    """
    Draw a transform chain that returns to the (height, width) frame. Never empty.
    """
    chain = []
    if rng.random() < spec.flip_prob:
        chain.append(GeoTransform.hflip())
    if rng.random() < spec.flip_prob:
        chain.append(GeoTransform.vflip())
    if rng.random() < spec.translate_prob:
        mx, my = int(spec.translate_fraction * width), int(spec.translate_fraction * height)
        chain.append(GeoTransform.translate(rng.integers(-mx, mx + 1), rng.integers(-my, my + 1)))
    if rng.random() < spec.scale_prob:
        chain.append(GeoTransform.scale(round(float(rng.uniform(*spec.scale_range)), 4)))
    if rng.random() < spec.crop_prob:
        fraction = rng.uniform(*spec.crop_fraction)
        ch, cw = max(1, int(round(height * fraction))), max(1, int(round(width * fraction)))
        top, left = int(rng.integers(0, height - ch + 1)), int(rng.integers(0, width - cw + 1))
        chain += [GeoTransform.crop(top, left, ch, cw), GeoTransform.resize(height, width)]
    if not chain:
        chain.append(GeoTransform.hflip())
    return tuple(chain)

@dataclass
class AugmentedSample:
    sample: FundusSample
    source_id: str
    chain: tuple[GeoTransform, ...]

    @property
    def id(self) -> str:
        return self.sample.id

def expand_dataset(samples: Sequence[FundusSample], spec: AugmentSpec, workers: int = 1) -> list[AugmentedSample]:
    """
    Expand M sources into exactly spec.target_count pairs.

    The originals come first, once each and untransformed. Output k >= M takes source
    (k - M) mod M and a chain drawn from its own generator seeded by (spec.seed, k).

    Args:
        samples (Sequence[FundusSample]): Source pairs
        spec (AugmentSpec): Recipe
        workers (int): Threads generating outputs
    Returns:
        list[AugmentedSample]: target_count entries, ids 0000, 0001, ...
    """
    if not samples:
        raise ValueError("cannot expand an empty source set")
    if spec.target_count < len(samples):
        raise ValueError(f"target_count {spec.target_count} is below the {len(samples)} sources")
    width = max(4, len(str(spec.target_count - 1)))

    def make(k: int) -> AugmentedSample:
        source = samples[k if k < len(samples) else (k - len(samples)) % len(samples)]
        chain = ()
        if k >= len(samples):
            chain = sample_chain(np.random.default_rng([spec.seed, k]), spec, *source.dims)
        image, mask = apply_chain((source.image, source.mask), chain)
        sample = FundusSample(f"{k:0{width}d}", "synthetic", image, mask, source.original_dims)
        return AugmentedSample(sample, source.id, chain)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        expanded = list(pool.map(make, range(spec.target_count)))
    logger.info(f"expanded {len(samples)} sources into {len(expanded)} pairs")
    return expanded

def materialize(expanded: Sequence[AugmentedSample], out_dir: Path) -> Path:
    """
    Write images/NNNN.png, masks/NNNN.png and manifest.tsv (id, source_id, chain).
    Returns:
        Path: Manifest path
    """
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    manifest = out_dir / MANIFEST
    with manifest.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(["id", "source_id", "chain"])
        for entry in expanded:
            rtcnet.toolbox.write_rgb(out_dir / "images" / f"{entry.id}.png", entry.sample.image[0])
            rtcnet.toolbox.write_mask(out_dir / "masks" / f"{entry.id}.png", entry.sample.mask[0, 0])
            writer.writerow([entry.id, entry.source_id, chain_text(entry.chain)])
    logger.info(f"materialized {len(expanded)} pairs under {out_dir}")
    return manifest
