"""
HEI-MED: <stem>.jpg next to its single-expert annotation <stem>_GT.png.
Soft and hard exudates are not distinguished in the annotation.
"""
import rtcnet.datasets
import rtcnet.toolbox

from pathlib import Path

name = "heimed"
source = "heimed"
SUFFIX = "_GT"

def load_one(image: Path):
    annotation = image.with_name(f"{image.stem}{SUFFIX}.png")
    if not annotation.exists():
        return None, (image, "skipped", f"no annotation {annotation.name}")
    try:
        pixels = rtcnet.toolbox.read_rgb(image)
        sample = rtcnet.datasets.make_sample(image.stem, source, pixels, rtcnet.datasets.binary_mask(annotation))
    except (OSError, ValueError) as exc:
        return None, (image, "skipped", str(exc))
    return sample, (image, "loaded", "")

def load(root: Path, workers: int = 4, dims: tuple[int, int] = None, **_):
    images = [path for path in sorted(root.rglob("*"))
              if rtcnet.datasets.is_image(path) and not path.stem.endswith(SUFFIX)]
    return rtcnet.datasets.parallel_load(images, load_one, workers, dims)
