import rtcnet
import rtcnet.toolbox
from rtcnet.structure import FundusSample, NetworkConfig

from pathlib import Path

from PIL import Image
import numpy as np
import pytest

TINY = NetworkConfig(input_dims=(16, 16, 3), encoder_channels=(2, 3, 4, 4), decoder_channels=(4, 3, 2, 2))
REDUCED = NetworkConfig(input_dims=(64, 64, 3), encoder_channels=(8, 16, 32, 64), decoder_channels=(32, 16, 8, 8))

def blob_sample(id: str, rng: np.random.Generator, size: int = 64, cell: int = 16) -> FundusSample:
    """Dark fundus-like background with one or two bright grid-aligned exudate squares."""
    mask = np.zeros((size, size), dtype=np.float32)
    cells = size // cell
    for k in rng.choice(cells * cells, size=int(rng.integers(1, 3)), replace=False):
        row, col = divmod(int(k), cells)
        mask[row * cell:(row + 1) * cell, col * cell:(col + 1) * cell] = 1.0
    image = np.empty((3, size, size), dtype=np.float32)
    image[0] = 0.35 + 0.6 * mask
    image[1] = 0.15 + 0.7 * mask
    image[2] = 0.05 + 0.1 * mask
    return FundusSample(id, "synthetic", image[np.newaxis], mask[np.newaxis, np.newaxis], (size, size))

def blob_dataset(count: int = 8, size: int = 64, seed: int = 0, cell: int = 16) -> list[FundusSample]:
    rng = np.random.default_rng(seed)
    return [blob_sample(f"blob{k:02d}", rng, size, cell) for k in range(count)]

def disc_mask(height: int, width: int, radius: float) -> np.ndarray:
    rows, cols = np.mgrid[:height, :width]
    return (((rows - height / 2 + 0.5) ** 2 + (cols - width / 2 + 0.5) ** 2) <= radius ** 2).astype(np.float32)

def write_gray(path: Path, plane: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.clip(np.rint(plane * 255), 0, 255).astype(np.uint8)).save(path)

@pytest.fixture
def tiny_config() -> NetworkConfig:
    return TINY

@pytest.fixture
def reduced_config() -> NetworkConfig:
    return REDUCED

@pytest.fixture
def blobs() -> list[FundusSample]:
    return blob_dataset()

@pytest.fixture
def eophtha_root(tmp_path: Path) -> Path:
    """Two lesioned images (one without annotation), one healthy image, 32x48."""
    root = tmp_path / "e_ophtha_EX"
    rng = np.random.default_rng(1)
    for patient, stem in (("DS000001", "C0001"), ("DS000002", "C0002"), ("DS000003", "C0003")):
        rtcnet.toolbox.write_rgb(root / "EX" / patient / f"{stem}.jpg", rng.uniform(0, 1, (3, 32, 48)))
    for patient, stem in (("DS000001", "C0001"), ("DS000002", "C0002")):
        mask = np.zeros((32, 48))
        mask[4:10, 6:20] = 1
        rtcnet.toolbox.write_mask(root / "Annotation_EX" / patient / f"{stem}_EX.png", mask)
    rtcnet.toolbox.write_rgb(root / "healthy" / "DS000009" / "H0001.jpg", rng.uniform(0, 1, (3, 32, 48)))
    return root

@pytest.fixture
def diaretdb1_root(tmp_path: Path) -> Path:
    """Two images under resources/images/ with four graded expert maps each."""
    base = tmp_path / "diaretdb1_v_1_1" / "resources" / "images"
    rng = np.random.default_rng(2)
    for stem in ("image001", "image002"):
        rtcnet.toolbox.write_rgb(base / "ddb1_fundusimages" / f"{stem}.png", rng.uniform(0, 1, (3, 24, 32)))
        for k in range(1, 5):
            write_gray(base / "ddb1_groundtruth" / f"expert{k}" / f"{stem}.png", (rng.random((24, 32)) < 0.5) * 1.0)
    return tmp_path / "diaretdb1_v_1_1"

@pytest.fixture
def heimed_root(tmp_path: Path) -> Path:
    root = tmp_path / "HEI-MED"
    rng = np.random.default_rng(3)
    for stem in ("IMG0001", "IMG0002", "IMG0003"):
        rtcnet.toolbox.write_rgb(root / f"{stem}.jpg", rng.uniform(0, 1, (3, 20, 28)))
    for stem in ("IMG0001", "IMG0002"):
        mask = np.zeros((20, 28))
        mask[2:5, 3:9] = 1
        rtcnet.toolbox.write_mask(root / f"{stem}_GT.png", mask)
    return root
