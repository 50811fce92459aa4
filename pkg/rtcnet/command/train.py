import rtcnet.command
import rtcnet.config
import rtcnet.datasets
import rtcnet.network
import rtcnet.trainer

from pathlib import Path

def train(conf: dict, out_dir: Path, dataset: str, root: Path, resume: Path = None, split: Path = None):
    """
    Train RTC-Net from scratch (or from a checkpoint) on a dataset.

    Materialized directories are used whole. Benchmark datasets are split first, from the
    given split file or from data.test_count and the seed, and only the training part is used.

    Returns:
        RunManifest: Saved run manifest
    """
    out_dir = Path(out_dir)
    params = {"dataset": dataset, "root": root, "resume": resume, "split": split}
    manifest = rtcnet.command.start("train", conf, out_dir, params)
    config = rtcnet.config.network_config(conf)
    config.validate()
    samples = rtcnet.command.load_samples(conf, dataset, root, (config.height, config.width), out_dir, manifest)

    plan = None
    if split is not None:
        plan = rtcnet.command.load_split(split)
    elif dataset != "dir" and conf["data.test_count"]:
        plan = rtcnet.datasets.make_split([s.id for s in samples], conf["data.test_count"], conf["seed"])
    if plan is not None:
        samples, _ = rtcnet.datasets.split(samples, plan)
        rtcnet.command.save_split(plan, out_dir, manifest)

    model = rtcnet.network.build(config, conf["seed"], rtcnet.config.dtype(conf))
    model, history = rtcnet.trainer.train(model, samples, rtcnet.config.train_config(conf), out_dir, resume)
    (out_dir / "history.tsv").write_text(history.to_tsv())
    manifest.artifacts += ["train.log", "history.tsv", "checkpoints/", "final.rtcn"]
    return rtcnet.command.finish(manifest, out_dir)
