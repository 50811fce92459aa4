import rtcnet
import rtcnet.config
import rtcnet.datasets
import rtcnet.logger
from rtcnet.structure import FundusSample, RunManifest, SplitPlan

from contextlib import contextmanager
from pathlib import Path
import json
import logging

import click

logger = logging.getLogger("rtcnet.command")

MANIFEST = "manifest.json"
SPLIT = "split.json"
LOAD_REPORT = "load-report.tsv"

@contextmanager
def domain_errors():
    """Turn library rejections into a non-zero exit with the message on stderr."""
    try:
        yield
    except click.ClickException:
        raise
    except (ValueError, KeyError, OSError, FloatingPointError, RuntimeError) as exc:
        logger.debug("command failed", exc_info=True)
        message = exc.args[0] if isinstance(exc, KeyError) and exc.args else str(exc)
        raise click.ClickException(str(message)) from None

def configure(config_path: Path = None, debug: bool = False, **flags) -> dict:
    """
    Build the active configuration: defaults, then the config file, then flags.
    Args:
        config_path (Path): Config file, or None for defaults only
        debug (bool): Verbose logging
        **flags: Dotted config keys given on the command line (None = not given)
    Returns:
        dict: Configuration, also stored as rtcnet.conf
    """
    conf = rtcnet.config.load(config_path) if config_path else dict(rtcnet.config.DEFAULT_CONFIG)
    conf = rtcnet.config.override(conf, **flags)
    rtcnet.config.dtype(conf)
    rtcnet.conf = conf
    rtcnet.debug = debug
    return conf

def _jsonable(params: dict) -> dict:
    return {key: str(Path(value).resolve()) if isinstance(value, Path) else value for key, value in params.items()}

def start(command: str, conf: dict, out_dir: Path, params: dict) -> RunManifest:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    logfile = rtcnet.logger.setup_logger(conf, out_dir, command)
    logger.debug(f"{command}: logging to {logfile}")
    return RunManifest(command, _jsonable(params), rtcnet.config.dumps(conf), conf["seed"], rtcnet.__version__)

def finish(manifest: RunManifest, out_dir: Path) -> RunManifest:
    manifest.save(Path(out_dir) / MANIFEST)
    logger.info(f"{manifest.command} finished, manifest at {Path(out_dir) / MANIFEST}")
    return manifest

def load_samples(conf: dict, dataset: str, root: Path, dims: tuple[int, int], out_dir: Path,
                 manifest: RunManifest) -> list[FundusSample]:
    samples, report = rtcnet.datasets.load(dataset, root, conf["data.fusion_threshold"], conf["data.workers"], dims)
    report.save(Path(out_dir) / LOAD_REPORT)
    manifest.datasets[dataset] = str(root)
    manifest.artifacts.append(LOAD_REPORT)
    if not samples:
        raise ValueError(f"no samples could be loaded from {root}; see {Path(out_dir) / LOAD_REPORT}")
    return samples

def save_split(plan: SplitPlan, out_dir: Path, manifest: RunManifest) -> None:
    (Path(out_dir) / SPLIT).write_text(json.dumps(plan.to_dict(), indent=2))
    manifest.split = plan.to_dict()
    manifest.artifacts.append(SPLIT)

def load_split(path: Path) -> SplitPlan:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path} does not exist")
    data = json.loads(path.read_text())
    return SplitPlan(tuple(data["train"]), tuple(data["test"]), int(data["seed"]))

def held_out(samples: list[FundusSample], split_path: Path = None) -> list[FundusSample]:
    if split_path is None:
        return samples
    _, test = rtcnet.datasets.split(samples, load_split(split_path))
    return test

from .augment import augment
from .train import train
from .segment import segment
from .evaluate import evaluate
from .summary import summary
from .rerun import rerun

COMMANDS = {
    "augment": augment,
    "train": train,
    "segment": segment,
    "evaluate": evaluate,
    "summary": summary,
}
