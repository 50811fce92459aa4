"""
Materialized directory as written by `rtcnet augment`: images/NNNN.png, masks/NNNN.png, manifest.tsv.
"""
import rtcnet.datasets
import rtcnet.toolbox

from pathlib import Path

name = "dir"
source = "synthetic"

def load_one(entry: tuple[Path, Path]):
    image, mask = entry
    if not mask.exists():
        return None, (image, "skipped", f"no mask {mask.name}")
    try:
        sample = rtcnet.datasets.make_sample(image.stem, source, rtcnet.toolbox.read_rgb(image),
                                             rtcnet.datasets.binary_mask(mask))
    except (OSError, ValueError) as exc:
        return None, (image, "skipped", str(exc))
    return sample, (image, "loaded", "")

def load(root: Path, workers: int = 4, dims: tuple[int, int] = None, **_):
    if not (root / "images").is_dir():
        raise FileNotFoundError(f"{root} has no images/ directory")
    entries = [(path, root / "masks" / f"{path.stem}.png")
               for path in sorted((root / "images").iterdir()) if rtcnet.datasets.is_image(path)]
    return rtcnet.datasets.parallel_load(entries, load_one, workers, dims)
