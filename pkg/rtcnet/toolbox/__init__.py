from pathlib import Path
from hashlib import sha256
import datetime
import os

from PIL import Image
import numpy as np

def checksum64(data: bytes) -> int:
    """
    64-bit checksum of a byte string.
    Args:
        data (bytes): Bytes to hash
    Returns:
        int: First 8 bytes of the SHA-256 digest, read little-endian
    """
    return int.from_bytes(sha256(data).digest()[:8], "little")

def atomic_write_bytes(path: Path, data: bytes) -> None:
    """
    Write bytes so that readers never observe a half-written file.
    Args:
        path (Path): Destination
        data (bytes): Content
    Returns:
        None
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)

def check_divisible(value: int, divisor: int, what: str) -> None:
    """
    Reject a dimension that is not a multiple of divisor.
    Args:
        value (int): Dimension to check
        divisor (int): Required divisor
        what (str): Name used in the error message
    Returns:
        None
    """
    if value <= 0 or value % divisor:
        raise ValueError(f"{what} must be a positive multiple of {divisor}, got {value}")

def timestamp() -> str:
    """ISO 8601 UTC timestamp with seconds resolution."""
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")

def format_seconds(seconds: float) -> str:
    """
    Human readable duration.
    Args:
        seconds (float): Duration
    Returns:
        str: e.g. "1h02m03s", "4m05s", "6.78s"
    """
    if seconds < 60:
        return f"{seconds:.2f}s"
    minutes, sec = divmod(int(round(seconds)), 60)
    hours, minutes = divmod(minutes, 60)
    if hours:
        return f"{hours}h{minutes:02d}m{sec:02d}s"
    return f"{minutes}m{sec:02d}s"

def read_rgb(path: Path) -> np.ndarray:
    """
    Read a color image.
    Args:
        path (Path): PNG/JPEG file
    Returns:
        np.ndarray: (3, h, w) float32 in [0, 1]
    """
    with Image.open(path) as img:
        rgb = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(rgb.transpose(2, 0, 1))

def read_gray(path: Path) -> np.ndarray:
    """
    Read a grayscale map normalized to [0, 1] by its bit depth.
    Args:
        path (Path): Image file
    Returns:
        np.ndarray: (h, w) float64
    """
    with Image.open(path) as img:
        if img.mode in ("I;16", "I;16B", "I"):
            return np.asarray(img, dtype=np.float64) / 65535.0
        return np.asarray(img.convert("L"), dtype=np.float64) / 255.0

def write_rgb(path: Path, image: np.ndarray) -> None:
    """Write a (3, h, w) [0, 1] image as 8-bit RGB."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pixels = np.clip(np.rint(np.asarray(image).transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(pixels).save(path)

def write_mask(path: Path, mask: np.ndarray) -> None:
    """Write a binary (h, w) mask as 8-bit grayscale, 0 background and 255 exudate."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray((np.asarray(mask) > 0).astype(np.uint8) * 255).save(path)

def resize_plane(plane: np.ndarray, height: int, width: int, nearest: bool = False) -> np.ndarray:
    """
    Resize one (h, w) plane with Pillow.
    Args:
        plane (np.ndarray): 2-D array
        height (int): Output rows
        width (int): Output columns
        nearest (bool): Nearest neighbour (masks) instead of bilinear (images)
    Returns:
        np.ndarray: (height, width), float32 for bilinear, input dtype for nearest
    """
    if nearest:
        img = Image.fromarray(np.ascontiguousarray(plane, dtype=np.uint8))
        return np.array(img.resize((width, height), Image.Resampling.NEAREST), dtype=plane.dtype)
    img = Image.fromarray(np.ascontiguousarray(plane, dtype=np.float32))
    return np.array(img.resize((width, height), Image.Resampling.BILINEAR), dtype=np.float32)

def overlay_mask(image: np.ndarray, mask: np.ndarray, color=(0.0, 1.0, 0.0), alpha: float = 0.5) -> np.ndarray:
    """
    Tint the positive pixels of mask over image.
    Args:
        image (np.ndarray): (3, h, w) in [0, 1]
        mask (np.ndarray): (h, w) binary
        color (tuple): RGB tint in [0, 1]
        alpha (float): Tint opacity
    Returns:
        np.ndarray: (3, h, w) copy of image
    """
    out = np.array(image, dtype=np.float32)
    positive = np.asarray(mask) > 0
    for channel, value in enumerate(color):
        out[channel][positive] = (1 - alpha) * out[channel][positive] + alpha * value
    return out

def figure_row(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Original, overlay and segmented mask side by side as one (3, h, 3w) image."""
    segmented = np.repeat((np.asarray(mask) > 0).astype(np.float32)[np.newaxis], 3, axis=0)
    return np.concatenate([np.asarray(image, dtype=np.float32), overlay_mask(image, mask), segmented], axis=2)
