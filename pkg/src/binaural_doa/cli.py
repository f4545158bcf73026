"""Command line entry point.

    binaural-doa run --config run.ini [--figures]
    binaural-doa simulate --spec scenes.ini --out scenes/
    binaural-doa protodb --geometry mics.txt --out protodb.csv

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .doa import build_prototype_db
from .geometry import load_geometry
from .report import ConfigError, WavScene, load_config, run
from .scene import export_labels, render_scene
from .stft import StftConfig, write_wav

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

logger = logging.getLogger("binaural_doa")


def _cmd_run(args):
    config = load_config(args.config)
    if args.output_dir:
        config.output_dir = Path(args.output_dir)
    if args.workers:
        config.workers = args.workers
    report = run(config, write=True, figures=args.figures)
    for d in report.summary(by_snr=False):
        print(f"{d['estimator']:>3} threshold {d['cdr_threshold_db']:>5} dB: "
              f"ACC {100 * d['mean_acc']:.1f}% ({d['frames']} frames, {d['scenes']} scenes)")
    failed = {r.scene for r in report.rows if r.status != "ok"}
    if failed:
        print(f"{len(failed)} scene(s) failed, see results.csv", file=sys.stderr)
    print(f"report written to {config.output_dir}")
    return EXIT_OK


def _cmd_simulate(args):
    config = load_config(args.spec)
    out = Path(args.out)
    fs = config.stft.sample_rate
    for i, scene in enumerate(config.scenes):
        if isinstance(scene, WavScene):
            logger.info("skipping recorded scene %s", scene.name)
            continue
        name = scene.name or f"scene{i:04d}"
        render = render_scene(scene, config.coherence, config.stft, config.settings.num_head)
        d = out / name
        d.mkdir(parents=True, exist_ok=True)
        write_wav(d / "mixture.wav", render.mixture, fs)
        for j, s in enumerate(render.speech_only):
            write_wav(d / f"speech_{j + 1}.wav", s, fs)
        write_wav(d / "noise.wav", render.noise_only, fs)
        export_labels(d / "labels.csv", render)
        meta = dict(azimuths=render.azimuths.tolist(), snr_db=repr(float(scene.snr_db)),
                    duration=scene.duration, seed=scene.seed, noise=scene.noise,
                    geometry=scene.geometry.tolist(), sample_rate=fs)
        (d / "scene.json").write_text(json.dumps(meta, indent=2) + "\n")
        print(f"{name}: {render.mixture.shape[0]} channels, {render.mixture.shape[1]} samples")
    return EXIT_OK


def _cmd_protodb(args):
    try:
        pos = load_geometry(args.geometry)
    except (OSError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    num_head = args.num_head if args.num_head else (len(pos) - 1 if len(pos) % 2 else len(pos))
    if not 2 <= num_head <= len(pos):
        raise ConfigError(f"--num-head must lie in 2..{len(pos)}")
    try:
        cfg = StftConfig.from_duration(args.sample_rate, args.window_ms)
        db = build_prototype_db(pos[:num_head], args.resolution, cfg, args.c)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    db.save(args.out)
    print(f"{len(db.directions)} directions x {db.num_bins} bins x {num_head} mics -> {args.out}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="binaural-doa", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="evaluate scenes and write CSV reports")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir", help="override [run] output_dir")
    p.add_argument("--workers", type=int, help="parallel scene workers")
    p.add_argument("--figures", action="store_true", help="also render summary.png")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("simulate", help="render the configured scenes to WAV")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("protodb", help="build a free-field prototype RTF database")
    p.add_argument("--geometry", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resolution", type=float, default=5.0, help="grid step in degrees")
    p.add_argument("--num-head", type=int, help="head microphones (default: all but an odd last row)")
    p.add_argument("--sample-rate", type=float, default=16000.0)
    p.add_argument("--window-ms", type=float, default=32.0)
    p.add_argument("--c", type=float, default=343.0, help="speed of sound in m/s")
    p.set_defaults(func=_cmd_protodb)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        logger.debug("runtime failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
