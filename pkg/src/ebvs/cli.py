"""Command-line entry point.

    ebvs simulate --config trial.yaml [--record events.txt] [--out DIR]
    ebvs replay --events events.txt --config trial.yaml [--out DIR]
    ebvs detect --events events.txt [--out corners.txt]
    ebvs heatmap --corners corners.txt [--image heat.pgm]
    ebvs suite --config-dir configs/ [--out DIR]

Exit status is 0 on success, 1 when a trial fails and 2 on bad input.
``EBVS_SEED`` overrides the seed of every loaded trial config.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .corners import CORNER, HarrisConfig, detect_batch
from .events import TimeSurface
from .eventio import EventFileError, read_events, write_events
from .harness import (TrialConfig, format_table, load_config, record_events, replay_trial,
                      run_suite, run_trial, summary_rows, write_outputs)
from .heatmap import CornerHeatMap, extract_peaks
from .servo import ConfigError

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2
CONFIG_SUFFIXES = (".yaml", ".yml", ".json")

log = logging.getLogger("ebvs")


def _load(path: str | Path) -> TrialConfig:
    config = load_config(path)
    seed = os.environ.get("EBVS_SEED")
    if seed is not None:
        try:
            config.seed = int(seed)
        except ValueError as exc:
            raise ConfigError(f"EBVS_SEED must be an integer, got {seed!r}") from exc
    return config


def _report(result, config: TrialConfig, out: str | None) -> int:
    if out or config.output_dir:
        write_outputs(result, config, Path(out or config.output_dir))
    print(json.dumps(result.metrics.to_dict(), indent=2))
    return EXIT_OK if result.metrics.success else EXIT_FAIL


def cmd_simulate(args) -> int:
    config = _load(args.config)
    result = run_trial(config, record=bool(args.record))
    if args.record:
        Path(args.record).write_text(record_events(result, config))
    return _report(result, config, args.out)


def cmd_replay(args) -> int:
    config = _load(args.config)
    return _report(replay_trial(config, args.events), config, args.out)


def cmd_detect(args) -> int:
    events, width, height = read_events(args.events)
    surface = TimeSurface(width, height)
    t0 = time.perf_counter()
    classes, _ = detect_batch(surface, events, HarrisConfig(threshold=args.threshold))
    wall = time.perf_counter() - t0
    corners = events[classes == CORNER]
    out = Path(args.out) if args.out else Path(args.events).with_suffix(".corners.txt")
    write_events(out, corners, width, height)
    n = len(events)
    span = (events["t"][-1] - events["t"][0]) * 1e-6 if n > 1 else 0.0
    print(f"events in:   {n}")
    print(f"corners out: {len(corners)} ({100.0 * len(corners) / max(n, 1):.1f}%)")
    if span > 0:
        print(f"corner rate: {len(corners) / span:.1f} /s of stream time")
    print(f"throughput:  {n / wall if wall > 0 else float('inf'):.0f} events/s")
    print(f"wrote {out}")
    return EXIT_OK


def write_pgm(path: str | Path, values: np.ndarray) -> None:
    """8-bit binary PGM scaled to the map maximum."""
    top = float(values.max()) if values.size else 0.0
    img = np.zeros(values.shape, np.uint8) if top <= 0 else np.rint(255 * values / top).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(img.tobytes())


def cmd_heatmap(args) -> int:
    corners, width, height = read_events(args.corners)
    hm = CornerHeatMap(width, height, tau=args.tau)
    hm.deposit_many(corners["u"], corners["v"], corners["t"])
    peaks = extract_peaks(hm)
    image = Path(args.image) if args.image else Path(args.corners).with_suffix(".pgm")
    write_pgm(image, hm.values)
    print("x,y,value")
    for (x, y), val in zip(peaks.points, peaks.values):
        print(f"{int(x)},{int(y)},{val:.6f}")
    log.info("wrote %s", image)
    return EXIT_OK


def cmd_suite(args) -> int:
    folder = Path(args.config_dir)
    if not folder.is_dir():
        raise ConfigError(f"{folder} is not a directory")
    paths = sorted(p for p in folder.iterdir() if p.suffix in CONFIG_SUFFIXES)
    if not paths:
        raise ConfigError(f"no trial configs in {folder}")
    configs = [_load(p) for p in paths]
    metrics = run_suite(configs)
    print(format_table(metrics), end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(json.dumps(summary_rows(metrics), indent=2) + "\n")
    return EXIT_OK if all(m.success for m in metrics) else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ebvs", description="Event-based visual servoing simulator")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one closed-loop trial")
    p.add_argument("--config", required=True)
    p.add_argument("--record", help="write the generated event stream here")
    p.add_argument("--out", help="directory for metrics and traces")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("replay", help="rerun a trial on a recorded event stream")
    p.add_argument("--events", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("detect", help="classify events and keep the corners")
    p.add_argument("--events", required=True)
    p.add_argument("--out", help="corner-event file (default: <events>.corners.txt)")
    p.add_argument("--threshold", type=float, default=HarrisConfig.threshold)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("heatmap", help="accumulate corner events and list the peaks")
    p.add_argument("--corners", required=True)
    p.add_argument("--image", help="PGM output (default: <corners>.pgm)")
    p.add_argument("--tau", type=float, default=5.0, help="decay rate, 1/s")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("suite", help="run every config in a directory")
    p.add_argument("--config-dir", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_suite)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, EventFileError, FileNotFoundError, ValueError) as exc:
        print(f"ebvs: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
