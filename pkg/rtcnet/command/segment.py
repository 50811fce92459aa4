import rtcnet.command
import rtcnet.network
import rtcnet.toolbox

from pathlib import Path
import logging

logger = logging.getLogger("rtcnet.command")

def segment(conf: dict, out_dir: Path, dataset: str, root: Path, weights: Path, split: Path = None):
    """
    Write <id>_mask.png, <id>_overlay.png and <id>_row.png for every image at network resolution.
    With a split file only its test images are segmented.
    Returns:
        RunManifest: Saved run manifest
    """
    out_dir = Path(out_dir)
    manifest = rtcnet.command.start("segment", conf, out_dir,
                                    {"dataset": dataset, "root": root, "weights": weights, "split": split})
    model = rtcnet.network.load_weights(weights)
    config = model.config
    samples = rtcnet.command.load_samples(conf, dataset, root, (config.height, config.width), out_dir, manifest)
    samples = rtcnet.command.held_out(samples, split)

    for sample in samples:
        mask = rtcnet.network.predict_mask(model, sample.image.astype(model.dtype))[0, 0]
        image = sample.image[0]
        rtcnet.toolbox.write_mask(out_dir / f"{sample.id}_mask.png", mask)
        rtcnet.toolbox.write_rgb(out_dir / f"{sample.id}_overlay.png", rtcnet.toolbox.overlay_mask(image, mask))
        rtcnet.toolbox.write_rgb(out_dir / f"{sample.id}_row.png", rtcnet.toolbox.figure_row(image, mask))
        manifest.artifacts += [f"{sample.id}_mask.png", f"{sample.id}_overlay.png", f"{sample.id}_row.png"]
        logger.debug(f"{sample.id}: {int(mask.sum())} exudate pixels")
    logger.info(f"segmented {len(samples)} images into {out_dir}")
    return rtcnet.command.finish(manifest, out_dir)
