"""Command line driver.

    cfcw simulate --config star-0p5 --out runs/star
    cfcw track    --config star-0p5 [--capture runs/star/capture.wav]
    cfcw recover  --trajectory runs/word/trajectory.csv --out runs/word
    cfcw report   --config word-fit --seed 3
    cfcw gen-word --word home --size 0.08 --pose slant-beside --out runs/home

``--config`` takes a TOML file or the name of a bundled experiment.  Errors
exit with status 1 (pipeline stage failed) or 2 (bad arguments or config),
with the stage named in the message.
"""
import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import CFCWError, InvalidConfiguration, StageError

log = logging.getLogger("cfcw")


def _config(args):
    from . import config as cf

    if args.config is None:
        raise InvalidConfiguration("--config is required")
    p = Path(args.config)
    cfg = cf.load_config(p if p.suffix == ".toml" or p.exists() else cf.bundled(args.config))
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _out(args, cfg=None):
    if args.out:
        return Path(args.out)
    if cfg is not None and cfg.out:
        return Path(cfg.out)
    return Path("out") / (cfg.name if cfg is not None else "cfcw")


def _print_report(res):
    from .pipeline import format_report

    print(format_report(res.metrics))
    for k, f in res.files.items():
        log.info("wrote %s: %s", k, f)


def cmd_simulate(args):
    from .pipeline import run_pipeline

    cfg = _config(args)
    res = run_pipeline(cfg, _out(args, cfg), stages=("simulate",))
    _print_report(res)


def cmd_track(args):
    from .pipeline import read_capture, run_pipeline, stage

    cfg = _config(args)
    cap = None
    if args.capture:
        with stage("simulate"):
            cap = read_capture(args.capture)
    res = run_pipeline(cfg, _out(args, cfg), stages=("simulate", "demod", "startpoint", "localize"),
                       capture=cap, plots=False)
    _print_report(res)


def cmd_recover(args):
    from .handwriting import recover_ink
    from .localize import Trajectory3D
    from .pipeline import STAGES, run_pipeline, stage

    if args.trajectory is None:
        cfg = _config(args)
        cfg.handwriting.enabled = True
        res = run_pipeline(cfg, _out(args, cfg), stages=STAGES[:5], plots=False)
        _print_report(res)
        return
    out = _out(args)
    out.mkdir(parents=True, exist_ok=True)
    with stage("handwriting"):
        traj = Trajectory3D.from_csv(args.trajectory)
        ink = recover_ink(traj.timestamps, traj.points)
        ink.ink.to_svg(out / "ink.svg")
        ink.ink.to_csv(out / "ink.csv")
    w, h = ink.ink.extent()
    print(f"strokes  {len(ink.strokes)}\nkept     {ink.kept.mean():.3f}\n"
          f"width_mm {1e3 * w:.2f}\nheight_mm {1e3 * h:.2f}")


def cmd_report(args):
    from .pipeline import run_pipeline

    cfg = _config(args)
    res = run_pipeline(cfg, _out(args, cfg))
    _print_report(res)


def cmd_gen_word(args):
    from .handwriting import Ink2D
    from .pipeline import Truth, stage, write_path_csv
    from .words import STROKE, SyntheticWordSpec, generate_word

    out = _out(args)
    out.mkdir(parents=True, exist_ok=True)
    with stage("simulate"):
        spec = SyntheticWordSpec(word=args.word, size=args.size, pose=args.pose, speed=args.speed,
                                 lift_height=args.lift_height, surface=args.surface)
        w = generate_word(spec, args.rate)
        write_path_csv(out / "word.csv", Truth(w.path, w))
        ids = [np.flatnonzero((w.stroke_ids == k) & (w.labels == STROKE))
               for k in np.unique(w.stroke_ids[w.stroke_ids >= 0])]
        Ink2D([w.ink[i] for i in ids if len(i)]).to_svg(out / "word.svg")
    lo, hi = w.positions.min(axis=0), w.positions.max(axis=0)
    print(f"samples  {len(w.timestamps)}\nduration {w.timestamps[-1]:.3f}\nlifts    {w.n_lifts}\n"
          f"stops    {len(w.stop_times)}\nbbox_mm  {np.round(1e3 * (hi - lo), 2).tolist()}")


def build_parser():
    p = argparse.ArgumentParser(prog="cfcw", description="Cross-frequency acoustic tracking "
                                "experiments (simulation, tracking, ink recovery).")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="TOML file or bundled experiment name")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", help="output directory")
        return sp

    common(sub.add_parser("simulate", help="write the simulated capture and ground truth")) \
        .set_defaults(func=cmd_simulate)
    sp = common(sub.add_parser("track", help="capture -> start fix -> 3D trajectory"))
    sp.add_argument("--capture", help="7-channel 16 kHz float WAV instead of simulating")
    sp.set_defaults(func=cmd_track)
    sp = common(sub.add_parser("recover", help="trajectory -> flat ink (SVG, CSV)"))
    sp.add_argument("--trajectory", help="trajectory CSV; otherwise run the config")
    sp.set_defaults(func=cmd_recover)
    common(sub.add_parser("report", help="run every stage, write CSVs and SVG plots")) \
        .set_defaults(func=cmd_report)
    sp = common(sub.add_parser("gen-word", help="labelled synthetic handwriting path"), False)
    sp.add_argument("--word", default="fit")
    sp.add_argument("--size", type=float, default=0.10, help="word width (m)")
    sp.add_argument("--pose", default="flat-top")
    sp.add_argument("--speed", type=float, default=0.25, help="peak pen speed (m/s)")
    sp.add_argument("--lift-height", type=float, default=0.02)
    sp.add_argument("--surface", default="plane", choices=["plane", "cylinder"])
    sp.add_argument("--rate", type=float, default=1000.0)
    sp.set_defaults(func=cmd_gen_word)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and args.seed < 0:
        print("cfcw: [config] --seed must be non-negative", file=sys.stderr)
        return 2
    try:
        args.func(args)
    except StageError as e:
        print(f"cfcw: {e}", file=sys.stderr)
        return 1
    except CFCWError as e:
        print(f"cfcw: [config] {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
