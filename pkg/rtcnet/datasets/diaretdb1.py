"""
DiaretDB1: ddb1_fundusimages/imageNNN.png with four expert maps in
ddb1_groundtruth/expert{1..4}/imageNNN.png. The two folders may sit under resources/images/.
"""
import rtcnet.datasets
import rtcnet.toolbox

from functools import partial
from pathlib import Path

name = "diaretdb1"
source = "diaretdb1"
IMAGES = "ddb1_fundusimages"
GROUNDTRUTH = "ddb1_groundtruth"

def find_base(root: Path) -> Path:
    if (root / IMAGES).is_dir():
        return root
    for candidate in sorted(root.rglob(IMAGES)):
        if candidate.is_dir():
            return candidate.parent
    raise FileNotFoundError(f"no {IMAGES}/ directory under {root}")

def expert_maps(base: Path, image: Path) -> list[Path]:
    return [base / GROUNDTRUTH / f"expert{k}" / f"{image.stem}.png" for k in range(1, rtcnet.datasets.EXPERTS + 1)]

def load_one(entry: tuple[Path, Path], fusion_threshold: float = 0.5):
    base, image = entry
    maps = expert_maps(base, image)
    missing = [str(path.relative_to(base)) for path in maps if not path.exists()]
    if missing:
        return None, (image, "skipped", f"missing expert maps: {', '.join(missing)}")
    try:
        pixels = rtcnet.toolbox.read_rgb(image)
        mask = rtcnet.datasets.fuse_expert_labels([rtcnet.toolbox.read_gray(path) for path in maps], fusion_threshold)
        sample = rtcnet.datasets.make_sample(image.stem, source, pixels, mask)
    except (OSError, ValueError) as exc:
        return None, (image, "skipped", str(exc))
    return sample, (image, "loaded", "")

def load(root: Path, fusion_threshold: float = 0.5, workers: int = 4, dims: tuple[int, int] = None, **_):
    base = find_base(root)
    entries = [(base, path) for path in sorted((base / IMAGES).iterdir()) if rtcnet.datasets.is_image(path)]
    return rtcnet.datasets.parallel_load(entries, partial(load_one, fusion_threshold=fusion_threshold), workers, dims)
