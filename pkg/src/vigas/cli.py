"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .audio import read_wav, write_wav
from .config import apply_overrides, dump_config, flat_keys, parse_lines
from .dataset import DataConfig, Manifest, generate_dataset, load_clip
from .errors import InvalidConfig, VigasError
from .evaluate import EvalConfig, canonical_method, evaluate, format_table, write_reports
from .localization import BoundingBox
from .net import load_checkpoint, synthesize
from .render import read_image
from .training import TrainConfig, read_log, train

log = logging.getLogger("vigas")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass(frozen=True)
class CliConfig:
    subcommand: str
    config: str | None
    seed: int | None
    out: str
    verbosity: int


def _keys_epilog(cls) -> str:
    return "config keys (for --config files and --set):\n  " + "\n  ".join(flat_keys(cls))


def _resolve(cls, args, direct: dict):
    """Defaults, then the config file, then dedicated flags, then ``--set`` pairs."""
    cfg = cls()
    if args.config:
        cfg = apply_overrides(cfg, parse_lines(Path(args.config).read_text()))
    cfg = apply_overrides(cfg, {k: str(v) for k, v in direct.items() if v is not None})
    sets = {}
    for item in args.set or []:
        if "=" not in item:
            raise InvalidConfig(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        sets[key.strip()] = value.strip()
    return apply_overrides(cfg, sets)


def _record_config(cfg, out_dir: Path, name: str = "resolved_config.txt"):
    text = dump_config(cfg)
    log.info("resolved config:\n%s", text.rstrip())
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / name).write_text(text)


def _threads(args) -> int:
    n = args.threads if args.threads is not None else int(os.environ.get("VIGAS_THREADS", "1"))
    if n < 1:
        raise InvalidConfig("--threads must be at least 1")
    torch.set_num_threads(n)
    return n


def cmd_gen_data(args) -> int:
    threads = _threads(args)
    cfg = _resolve(DataConfig, args, {"scenes": args.scenes, "clips_per_scene": args.clips_per_scene,
                                      "seed": args.seed, "protocol": args.protocol})
    cfg = dataclasses.replace(cfg, workers=min(cfg.workers, threads))
    out = Path(args.out)
    _record_config(cfg, out)
    manifest = generate_dataset(cfg, out)
    sizes = {s: len(manifest.split(s)) for s in ("train", "val", "test")}
    print(f"scenes {len(manifest.scene_ids())}  clips {len(manifest.clips)}  "
          + "  ".join(f"{k} {v}" for k, v in sizes.items()))
    return EXIT_OK


def cmd_train(args, enhance: bool = False) -> int:
    _threads(args)
    direct = {"seed": args.seed, "epochs": args.epochs, "batch_size": args.batch_size,
              "learning_rate": args.lr}
    if enhance or args.enhance:
        direct["enhancement_mode"] = "true"
    if args.ablate_visual:
        direct["net.use_visual"] = "false"
        direct["net.use_bbox"] = "false"
    cfg = _resolve(TrainConfig, args, direct)
    manifest = Manifest.load(args.data)
    out = Path(args.out)
    _record_config(cfg, out)
    result = train(cfg, manifest, out)
    last = result.history[-1]
    print(f"epochs {last['epoch']}  train {last['train_loss']:.5f}  val {last['val_loss']:.5f}  "
          f"best {result.best_val_loss:.5f} -> {result.best_checkpoint}")
    return EXIT_OK


def cmd_eval(args) -> int:
    _threads(args)
    cfg = _resolve(EvalConfig, args, {"split": args.split, "checkpoint": args.checkpoint,
                                      "enhancement": "true" if args.enhance else None})
    manifest = Manifest.load(args.data)
    out = Path(args.out)
    _record_config(cfg, out)
    methods = [canonical_method(m) for m in args.methods.split(",") if m.strip()]
    reports = []
    for m in methods:
        method_cfg = cfg
        if m == "vigas-no-visual":
            if not args.no_visual_checkpoint:
                raise InvalidConfig("method vigas-no-visual needs --no-visual-checkpoint")
            method_cfg = dataclasses.replace(cfg, checkpoint=args.no_visual_checkpoint)
        log.info("evaluating %s on %s", m, cfg.split)
        reports.append(evaluate(m, manifest, method_cfg))
    write_reports(reports, out)
    table = format_table(reports)
    print(table, end="")
    if args.assert_ordering:
        by = {r.method: r for r in reports}
        if "vigas" not in by or "input-copy" not in by:
            raise InvalidConfig("--assert-ordering needs both vigas and input methods")
        if not by["vigas"].mag < by["input-copy"].mag:
            print(f"ordering violated: vigas Mag {by['vigas'].mag:.4f} >= input {by['input-copy'].mag:.4f}",
                  file=sys.stderr)
            return EXIT_RUNTIME
    return EXIT_OK


def _parse_floats(text: str, n: int, name: str) -> np.ndarray:
    vals = [float(x) for x in text.split(",")]
    if len(vals) != n:
        raise InvalidConfig(f"{name} needs {n} comma-separated numbers, got {len(vals)}")
    return np.array(vals)


def cmd_infer(args) -> int:
    _threads(args)
    net = load_checkpoint(args.checkpoint)
    target = None
    if args.clip:
        if not args.data:
            raise InvalidConfig("--clip needs --data")
        manifest = Manifest.load(args.data)
        entry = next((c for c in manifest.clips if c.clip_id == args.clip), None)
        if entry is None:
            raise VigasError(f"clip {args.clip!r} not in {args.data}")
        rec = load_clip(manifest.root, entry)
        audio, img, bbox = rec.source_audio, rec.source_img, rec.bbox
        pose = rec.emitter_pose if args.enhance else rec.pose
        target = rec.clean_emitter_audio if args.enhance else rec.target_audio
    else:
        if not (args.audio and args.image and args.bbox and args.pose):
            raise InvalidConfig("give --clip, or all of --audio --image --bbox --pose")
        audio, img = read_wav(args.audio), read_image(args.image)
        bbox = BoundingBox(*_parse_floats(args.bbox, 4, "--bbox"))
        pose = _parse_floats(args.pose, 9, "--pose")
    pred = synthesize(audio, img, bbox, pose, net, args.cutoff)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_wav(out, pred)
    print(f"wrote {out}")
    if args.plot:
        from .plots import plot_waveforms
        waves = {"input": audio, "prediction": pred}
        if target is not None:
            waves["target"] = target
        plot_waveforms(args.plot, waves)
        print(f"wrote {args.plot}")
    return EXIT_OK


def cmd_plot(args) -> int:
    from .plots import plot_loss, plot_spectrograms, plot_waveforms

    if args.log:
        plot_loss(args.out, read_log(args.log))
    elif args.wav:
        waves = {Path(p).stem: read_wav(p) for p in args.wav}
        (plot_spectrograms if args.spectrogram else plot_waveforms)(args.out, waves)
    else:
        raise InvalidConfig("plot needs --log or --wav")
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, help="worker/thread cap (default: $VIGAS_THREADS or 1)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    fmt = argparse.RawDescriptionHelpFormatter
    p = _Parser(prog="vigas", description="Novel-view acoustic synthesis toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", parents=[common], formatter_class=fmt,
                       help="render a synthetic dataset", epilog=_keys_epilog(DataConfig))
    g.add_argument("--out", required=True)
    g.add_argument("--scenes", type=int)
    g.add_argument("--clips-per-scene", type=int)
    g.add_argument("--protocol", choices=["novel", "single"])
    g.set_defaults(func=cmd_gen_data)

    for name, help_text in (("train", "train the synthesis network"),
                            ("enhance", "train in enhancement mode (alias of train --enhance)")):
        t = sub.add_parser(name, parents=[common], formatter_class=fmt, help=help_text,
                           epilog=_keys_epilog(TrainConfig))
        t.add_argument("--data", required=True)
        t.add_argument("--out", required=True)
        t.add_argument("--epochs", type=int)
        t.add_argument("--batch-size", type=int)
        t.add_argument("--lr", type=float)
        t.add_argument("--ablate-visual", action="store_true", help="drop image and box inputs")
        t.add_argument("--enhance", action="store_true", help="clean emitter signal as the target")
        t.set_defaults(func=(lambda a: cmd_train(a, enhance=True)) if name == "enhance" else cmd_train)

    e = sub.add_parser("eval", parents=[common], formatter_class=fmt, help="score methods on a split",
                       epilog=_keys_epilog(EvalConfig))
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--methods", default="input,vigas",
                   help="comma list of input, tf, dsp, vigas, vigas-no-visual, oracle")
    e.add_argument("--checkpoint")
    e.add_argument("--no-visual-checkpoint")
    e.add_argument("--split", choices=["train", "val", "test"])
    e.add_argument("--enhance", action="store_true")
    e.add_argument("--assert-ordering", action="store_true",
                   help="exit 2 unless vigas beats input copy on Mag")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", parents=[common], help="synthesize one clip")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--out", required=True, help="output WAV path")
    i.add_argument("--data")
    i.add_argument("--clip")
    i.add_argument("--audio")
    i.add_argument("--image")
    i.add_argument("--bbox", help="y_min,y_max,x_min,x_max")
    i.add_argument("--pose", help="nine comma-separated values")
    i.add_argument("--cutoff", type=float, default=80.0)
    i.add_argument("--enhance", action="store_true")
    i.add_argument("--plot", help="write a left/right waveform PNG here")
    i.set_defaults(func=cmd_infer)

    pl = sub.add_parser("plot", parents=[common], help="emit a PNG figure")
    pl.add_argument("--out", required=True)
    pl.add_argument("--log", help="training CSV log")
    pl.add_argument("--wav", nargs="+")
    pl.add_argument("--spectrogram", action="store_true")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return EXIT_OK if not e.code else EXIT_USAGE
    level = logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    log.info("%s", CliConfig(args.command, args.config, args.seed, args.out, args.verbose))
    try:
        return args.func(args)
    except (InvalidConfig, UsageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (VigasError, OSError, RuntimeError, ArithmeticError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
