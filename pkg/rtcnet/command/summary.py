import rtcnet.command
import rtcnet.config
import rtcnet.network

from pathlib import Path

def render(rows: list, total: int) -> str:
    lines = [f"{'layer':<20} {'kind':<18} {'output (h×w×c)':>16} {'params':>12}"]
    for name, kind, (h, w, c), params in rows:
        lines.append(f"{name:<20} {kind:<18} {f'{h}×{w}×{c}':>16} {params:>12,}")
    lines.append(f"total parameters: {total:,}")
    return "\n".join(lines) + "\n"

def summary(conf: dict, out_dir: Path, weights: Path = None):
    """
    Layer table and parameter count of the configured network, or of a weight file.
    Returns:
        tuple: (RunManifest, table text)
    """
    out_dir = Path(out_dir)
    manifest = rtcnet.command.start("summary", conf, out_dir, {"weights": weights})
    if weights is not None:
        model = rtcnet.network.load_weights(weights)
        config, total = model.config, rtcnet.network.param_count(model)
    else:
        config = rtcnet.config.network_config(conf)
        config.validate()
        total = rtcnet.network.config_param_count(config)
    text = render(rtcnet.network.shape_chain(config), total)
    (out_dir / "summary.txt").write_text(text, encoding="utf-8")
    manifest.artifacts.append("summary.txt")
    return rtcnet.command.finish(manifest, out_dir), text
