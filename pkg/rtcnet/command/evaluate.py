import rtcnet.command
import rtcnet.config
import rtcnet.datasets
import rtcnet.metrics
import rtcnet.network
import rtcnet.toolbox

from pathlib import Path

import numpy as np

REPORT_TSV = "report.tsv"
REPORT_TABLE = "report.txt"
PER_IMAGE = "per-image.tsv"

def find_prediction(predictions: Path, id: str) -> Path:
    for candidate in (predictions / f"{id}_mask.png", predictions / f"{id}.png"):
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"no prediction for {id} in {predictions} (looked for {id}_mask.png and {id}.png)")

def read_prediction(path: Path, dims: tuple[int, int]) -> np.ndarray:
    mask = rtcnet.datasets.binary_mask(path)
    if mask.shape != dims:
        mask = rtcnet.toolbox.resize_plane(mask, *dims, nearest=True)
    return mask

def evaluate(conf: dict, out_dir: Path, dataset: str, root: Path, predictions: Path = None,
             weights: Path = None, split: Path = None):
    """
    Score predicted masks against ground truth.

    Predictions come from a directory of masks or from a weight file run on the fly.
    Returns:
        tuple: (RunManifest, rtcnet.metrics.Report)
    """
    if (predictions is None) == (weights is None):
        raise ValueError("give exactly one of --predictions or --weights")
    out_dir = Path(out_dir)
    params = {"dataset": dataset, "root": root, "predictions": predictions, "weights": weights, "split": split}
    manifest = rtcnet.command.start("evaluate", conf, out_dir, params)

    model = rtcnet.network.load_weights(weights) if weights is not None else None
    config = model.config if model is not None else rtcnet.config.network_config(conf)
    dims = (config.height, config.width)
    samples = rtcnet.command.load_samples(conf, dataset, root, dims, out_dir, manifest)
    samples = rtcnet.command.held_out(samples, split)

    results = []
    for sample in samples:
        if model is not None:
            pred = rtcnet.network.predict_mask(model, sample.image.astype(model.dtype))[0, 0]
        else:
            pred = read_prediction(find_prediction(Path(predictions), sample.id), dims)
        results.append(rtcnet.metrics.evaluate_image(sample.id, pred, sample.mask[0, 0], conf["eval.min_area"]))

    report = rtcnet.metrics.aggregate_report(results, dataset, conf["eval.averaging"])
    (out_dir / REPORT_TSV).write_text(report.to_tsv())
    (out_dir / REPORT_TABLE).write_text(report.to_table())
    (out_dir / PER_IMAGE).write_text(report.per_image_tsv())
    manifest.artifacts += [REPORT_TSV, REPORT_TABLE, PER_IMAGE]
    return rtcnet.command.finish(manifest, out_dir), report
