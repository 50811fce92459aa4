"""
E-ophtha-EX: EX/<patient>/<image>, Annotation_EX/<patient>/<image>_EX.png, healthy/<patient>/<image>.
"""
import rtcnet.datasets
import rtcnet.toolbox

from pathlib import Path

import numpy as np

name = "eophtha"
source = "eophtha"
LESIONED = "EX"
ANNOTATIONS = "Annotation_EX"
HEALTHY = "healthy"

def annotation_for(root: Path, image: Path) -> Path:
    patient = image.parent.name
    return root / ANNOTATIONS / patient / f"{image.stem}_EX.png"

def load_one(entry: tuple[Path, Path, bool]):
    root, image, healthy = entry
    try:
        pixels = rtcnet.toolbox.read_rgb(image)
        if healthy:
            mask = np.zeros(pixels.shape[1:], dtype=np.float32)
        else:
            annotation = annotation_for(root, image)
            if not annotation.exists():
                return None, (image, "skipped", f"no annotation at {annotation.relative_to(root)}")
            mask = rtcnet.datasets.binary_mask(annotation)
        sample = rtcnet.datasets.make_sample(image.stem, source, pixels, mask)
    except (OSError, ValueError) as exc:
        return None, (image, "skipped", str(exc))
    return sample, (image, "loaded", "healthy" if healthy else "lesioned")

def load(root: Path, workers: int = 4, dims: tuple[int, int] = None, **_):
    """
    Load lesioned images with their annotations and healthy images with empty masks.
    Returns:
        tuple: (samples, rtcnet.datasets.LoadReport)
    """
    entries = [(root, path, False) for path in sorted((root / LESIONED).rglob("*")) if rtcnet.datasets.is_image(path)]
    entries += [(root, path, True) for path in sorted((root / HEALTHY).rglob("*")) if rtcnet.datasets.is_image(path)]
    if not entries:
        raise FileNotFoundError(f"{root} has neither {LESIONED}/ nor {HEALTHY}/ images")
    return rtcnet.datasets.parallel_load(entries, load_one, workers, dims)
