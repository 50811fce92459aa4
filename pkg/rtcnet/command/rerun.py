import rtcnet
import rtcnet.command
import rtcnet.config
from rtcnet.structure import RunManifest

from pathlib import Path
import logging

logger = logging.getLogger("rtcnet.command")

def rerun(manifest_path: Path, out_dir: Path = None):
    """
    Execute a recorded run again with its recorded configuration and parameters.
    Args:
        manifest_path (Path): manifest.json of the earlier run
        out_dir (Path): Where to write; <manifest dir>/rerun by default
    Returns:
        Whatever the recorded command returns
    """
    manifest_path = Path(manifest_path)
    recorded = RunManifest.load(manifest_path)
    if recorded.command not in rtcnet.command.COMMANDS:
        raise ValueError(f"manifest records unknown command {recorded.command!r}")
    if recorded.version != rtcnet.__version__:
        logger.warning(f"manifest was written by rtcnet {recorded.version}, running {rtcnet.__version__}")
    conf = rtcnet.config.loads(recorded.config, path=manifest_path)
    rtcnet.conf = conf
    params = {key: Path(value) if key in ("root", "weights", "predictions", "resume", "split") and value is not None
              else value for key, value in recorded.params.items()}
    out_dir = Path(out_dir) if out_dir is not None else manifest_path.parent / "rerun"
    logger.info(f"rerunning {recorded.command} from {manifest_path} into {out_dir}")
    return rtcnet.command.COMMANDS[recorded.command](conf, out_dir, **params)
