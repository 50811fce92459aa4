import click
import pathlib

import rtcnet
import rtcnet.command

__version__ = rtcnet.__version__

DATASETS = ["eophtha", "diaretdb1", "heimed", "dir"]
ExistingPath = click.Path(exists=True, path_type=pathlib.Path)

def common_options(func):
    options = [
        click.option("-c", "--config", type=ExistingPath, default=None, help="Config file (key = value lines)."),
        click.option("--seed", type=int, default=None, help="Seed for every random choice of the run."),
        click.option("-o", "--out", type=click.Path(path_type=pathlib.Path), default=pathlib.Path("rtcnet-out"),
                     show_default=True, help="Output directory."),
        click.option("--precision", type=click.Choice(["single", "double"]), default=None, help="Float precision."),
        click.option("--debug", is_flag=True, default=False, help="Verbose logging."),
    ]
    for option in reversed(options):
        func = option(func)
    return func

def data_options(func):
    options = [
        click.option("--dataset", type=click.Choice(DATASETS), required=True, help="Dataset layout of --root."),
        click.option("--root", type=ExistingPath, required=True, help="Dataset directory."),
        click.option("--fusion-threshold", type=float, default=None, help="Expert fusion threshold (diaretdb1)."),
    ]
    for option in reversed(options):
        func = option(func)
    return func

def _configure(config, seed, precision, debug, **flags):
    return rtcnet.command.configure(config, debug, seed=seed, precision=precision, **flags)

@click.version_option(prog_name="rtcnet", version=__version__)
@click.group()
def main():
    """
    RTC-Net: residual encoder-decoder segmentation of exudates in retinal fundus images.
    """
    pass

@main.command("augment")
@common_options
@data_options
def augment(config, seed, out, precision, debug, dataset, root, fusion_threshold):
    """
    Expand the training part of a dataset and write it to OUT as images/, masks/ and manifest.tsv.
    """
    with rtcnet.command.domain_errors():
        conf = _configure(config, seed, precision, debug, **{"data.fusion_threshold": fusion_threshold})
        rtcnet.command.augment(conf, out, dataset, root)

@main.command("train")
@common_options
@data_options
@click.option("--epochs", type=int, default=None, help="Number of epochs.")
@click.option("--learning-rate", type=float, default=None, help="SGD learning rate.")
@click.option("--batch-size", type=int, default=None, help="Images per mini-batch.")
@click.option("--resume", type=ExistingPath, default=None, help="Checkpoint to continue from.")
@click.option("--split", type=ExistingPath, default=None, help="split.json selecting the training images.")
def train(config, seed, out, precision, debug, dataset, root, fusion_threshold,
          epochs, learning_rate, batch_size, resume, split):
    """
    Train the network; writes checkpoints/, final.rtcn, train.log and history.tsv to OUT.
    """
    with rtcnet.command.domain_errors():
        conf = _configure(config, seed, precision, debug, **{
            "data.fusion_threshold": fusion_threshold,
            "train.epochs": epochs,
            "train.learning_rate": learning_rate,
            "train.batch_size": batch_size,
        })
        rtcnet.command.train(conf, out, dataset, root, resume, split)

@main.command("segment")
@common_options
@data_options
@click.option("-w", "--weights", type=ExistingPath, required=True, help="Weight file.")
@click.option("--split", type=ExistingPath, default=None, help="Only segment the test images of this split.json.")
def segment(config, seed, out, precision, debug, dataset, root, fusion_threshold, weights, split):
    """
    Write binary mask, overlay and figure-row PNGs per image.
    """
    with rtcnet.command.domain_errors():
        conf = _configure(config, seed, precision, debug, **{"data.fusion_threshold": fusion_threshold})
        rtcnet.command.segment(conf, out, dataset, root, weights, split)

@main.command("evaluate")
@common_options
@data_options
@click.option("-p", "--predictions", type=ExistingPath, default=None, help="Directory of predicted mask PNGs.")
@click.option("-w", "--weights", type=ExistingPath, default=None, help="Predict with this weight file instead.")
@click.option("--min-area", type=int, default=None, help="Positive pixels needed for an image to count as having exudate.")
@click.option("--averaging", type=click.Choice(["micro", "macro"]), default=None, help="Pixel metric averaging.")
@click.option("--split", type=ExistingPath, default=None, help="Only evaluate the test images of this split.json.")
def evaluate(config, seed, out, precision, debug, dataset, root, fusion_threshold,
             predictions, weights, min_area, averaging, split):
    """
    Print and write the metrics report (report.tsv, report.txt, per-image.tsv).
    """
    with rtcnet.command.domain_errors():
        conf = _configure(config, seed, precision, debug, **{
            "data.fusion_threshold": fusion_threshold,
            "eval.min_area": min_area,
            "eval.averaging": averaging,
        })
        _, report = rtcnet.command.evaluate(conf, out, dataset, root, predictions, weights, split)
    click.echo(report.to_table(), nl=False)

@main.command("summary")
@common_options
@click.option("-w", "--weights", type=ExistingPath, default=None, help="Describe this weight file instead of the config.")
def summary(config, seed, out, precision, debug, weights):
    """
    Print the layer-by-layer shape chain and the parameter count.
    """
    with rtcnet.command.domain_errors():
        conf = _configure(config, seed, precision, debug)
        _, text = rtcnet.command.summary(conf, out, weights)
    click.echo(text, nl=False)

@main.command("rerun")
@click.argument("manifest", type=ExistingPath)
@click.option("-o", "--out", type=click.Path(path_type=pathlib.Path), default=None,
              help="Output directory (default: <manifest dir>/rerun).")
@click.option("--debug", is_flag=True, default=False, help="Verbose logging.")
def rerun(manifest, out, debug):
    """
    Re-execute the run recorded in MANIFEST with its recorded configuration.
    """
    rtcnet.debug = debug
    with rtcnet.command.domain_errors():
        result = rtcnet.command.rerun(manifest, out)
    if isinstance(result, tuple):
        click.echo(result[1] if isinstance(result[1], str) else result[1].to_table(), nl=False)

if __name__ == "__main__":
    main()
