import rtcnet.augment
import rtcnet.command
import rtcnet.config
import rtcnet.datasets

from pathlib import Path

def augment(conf: dict, out_dir: Path, dataset: str, root: Path):
    """
    Split the dataset, expand its training part and materialize the result under out_dir.
    Returns:
        RunManifest: Saved run manifest
    """
    out_dir = Path(out_dir)
    manifest = rtcnet.command.start("augment", conf, out_dir, {"dataset": dataset, "root": root})
    config = rtcnet.config.network_config(conf)
    config.validate()
    samples = rtcnet.command.load_samples(conf, dataset, root, (config.height, config.width), out_dir, manifest)

    if conf["data.test_count"]:
        plan = rtcnet.datasets.make_split([s.id for s in samples], conf["data.test_count"], conf["seed"])
        samples, _ = rtcnet.datasets.split(samples, plan)
        rtcnet.command.save_split(plan, out_dir, manifest)

    expanded = rtcnet.augment.expand_dataset(samples, rtcnet.config.augment_spec(conf), conf["augment.workers"])
    rtcnet.augment.materialize(expanded, out_dir)
    manifest.artifacts += ["images/", "masks/", rtcnet.augment.MANIFEST]
    return rtcnet.command.finish(manifest, out_dir)
