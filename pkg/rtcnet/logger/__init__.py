import rtcnet

from prompt_toolkit import print_formatted_text
from prompt_toolkit.formatted_text import ANSI
from pathlib import Path
import logging
import datetime

class PromptHandler(logging.StreamHandler):
    def emit(self, record):
        try:
            msg = self.format(record)
            print_formatted_text(ANSI(msg))
        except Exception:
            self.handleError(record)


logger = logging.getLogger("rtcnet")
basePath: Path = None

DEFAULT_LEVEL = "INFO"
DEFAULT_FORMAT = "[%(asctime)s] %(levelname)s # %(message)s"
DEFAULT_RUN_FORMAT = "%(message)s"

logger.handlers = [PromptHandler()]
logger.setLevel(logging.INFO)
logger.handlers[0].setLevel(logging.INFO)
logger.handlers[0].setFormatter(logging.Formatter(DEFAULT_FORMAT))

def _time_formatting(line: str, usetime: datetime.datetime, command: str = None) -> str:
    """
    Format time in a log path template

    Args:
        line (str): Template
        usetime (datetime.datetime): Time to format
        command (str): Subcommand name
    Returns:
        str: Formatted template
    """
    return line.format(
        year=usetime.year,
        month=f"{usetime.month:02d}",
        day=f"{usetime.day:02d}",
        hour=f"{usetime.hour:02d}",
        minute=f"{usetime.minute:02d}",
        second=f"{usetime.second:02d}",
        microsecond=usetime.microsecond,
        command=command,
    )

def create_logger(name: str, path: Path) -> logging.Logger:
    """
    Create a logger writing bare lines to a run file (e.g. the per-epoch training log).

    Args:
        name (str): Run name, becomes rtcnet.run.<name>
        path (Path): File to write
    Returns:
        logging.Logger: Logger object
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    runlogger = logging.getLogger(f"rtcnet.run.{name}")
    runlogger.propagate = False
    runlogger.setLevel(logging.INFO)
    for handler in list(runlogger.handlers):
        runlogger.removeHandler(handler)
        handler.close()

    filehandler = logging.FileHandler(filename=str(path), encoding="utf-8")
    filehandler.setLevel(logging.INFO)
    filehandler.setFormatter(logging.Formatter(DEFAULT_RUN_FORMAT))
    runlogger.addHandler(filehandler)
    return runlogger

def close_logger(runlogger: logging.Logger) -> None:
    for handler in list(runlogger.handlers):
        runlogger.removeHandler(handler)
        handler.close()

def setup_logger(conf: dict, out_dir: Path, command: str) -> Path:
    """
    Apply the logger.* settings and add a file handler under out_dir/logs.

    Args:
        conf (dict): Active configuration
        out_dir (Path): Run output directory
        command (str): Subcommand name, used in the file name
    Returns:
        Path: Log file path
    """
    global basePath

    level = logging.getLevelName(conf.get("logger.level", DEFAULT_LEVEL))
    formatter = logging.Formatter(conf.get("logger.format", DEFAULT_FORMAT))
    logger.setLevel(level)
    logger.handlers[0].setLevel(level)
    logger.handlers[0].setFormatter(formatter)
    for handler in logger.handlers[1:]:
        logger.removeHandler(handler)
        handler.close()

    basePath = (Path(out_dir) / "logs").resolve()
    now = datetime.datetime.now()
    folder = basePath / _time_formatting(conf["logger.folder"], now, command)
    folder.mkdir(parents=True, exist_ok=True)
    filename = _time_formatting(conf["logger.filename"], now, command).replace("/", "-")

    filehandler = logging.FileHandler(filename=str(folder / filename), encoding="utf-8")
    filehandler.setLevel(logging.INFO)
    filehandler.setFormatter(formatter)
    logger.addHandler(filehandler)

    if rtcnet.debug:
        logger.setLevel(logging.DEBUG)
        for handler in logger.handlers:
            handler.setLevel(logging.DEBUG)

    return folder / filename
