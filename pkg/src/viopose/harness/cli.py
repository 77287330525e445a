"""Command line: viopose generate | train | eval | analyze | gradcheck."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import PRESETS, ConfigError, resolve


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _config_args(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--preset", choices=PRESETS, help="named configuration (default: default)")
    g.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value, e.g. train.epochs=5 (repeatable)")


def _kalman_args(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--kalman", dest="kalman", action="store_true", default=None, help="apply Kalman fusion")
    g.add_argument("--no-kalman", dest="kalman", action="store_false", help="report raw mixed poses")


class Parser(argparse.ArgumentParser):
    def error(self, message):
        # one line on stderr, no usage block
        self.exit(2, f"error: usage: {self.prog}: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = Parser(prog="viopose", description="Audiovisual violin pose estimation on synthetic data")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("generate", help="render a synthetic dataset")
    _config_args(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--force", action="store_true", help="replace an existing dataset in --out")

    p = sub.add_parser("train", help="train a model")
    _config_args(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--resume", action="store_true", help="continue from --out/last")

    p = sub.add_parser("eval", help="metric suite on a dataset split")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--out", type=Path, help="write metrics.json and per_joint.csv here")
    _kalman_args(p)

    p = sub.add_parser("analyze", help="violin performance analysis tasks")
    p.add_argument("--checkpoint", action="append", default=[], metavar="[NAME=]DIR",
                   help="checkpoint to analyze (repeatable; NAME labels the table row)")
    p.add_argument("--oracle", action="store_true", help="also score ground-truth poses")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--out", type=Path, help="write scores.json, table.txt and SVG plots here")
    p.add_argument("--no-plots", action="store_true")
    _kalman_args(p)

    p = sub.add_parser("gradcheck", help="central-difference check of the full model loss")
    _config_args(p)
    p.add_argument("--variant", choices=("main", "appendix", "both"), default="both")
    p.add_argument("--coords", type=int, default=3, help="coordinates probed per parameter tensor")
    p.add_argument("--tol", type=float, default=1e-4)
    return ap


def cmd_generate(a) -> int:
    from .data import generate

    cfg = resolve(a.preset, a.config, a.overrides)
    m = generate(cfg, a.out, force=a.force, log=_log)
    print(json.dumps(m["counts"], sort_keys=True))
    return 0


def cmd_train(a) -> int:
    from .train import train

    if a.resume and a.config is None and a.preset is None and (a.out / "config.json").exists():
        cfg = resolve(config_path=a.out / "config.json", overrides=a.overrides)
    else:
        cfg = resolve(a.preset, a.config, a.overrides)
    rows = train(cfg, a.data, a.out, resume=a.resume, log=_log)
    if rows:
        last = rows[-1]
        print(json.dumps({"epoch": last["epoch"], "train_loss": last["train_loss"], "val_loss": last["val_loss"]},
                         sort_keys=True))
    return 0


def cmd_eval(a) -> int:
    from .evaluate import run_eval

    r = run_eval(a.checkpoint, a.data, a.split, a.kalman, a.out)
    print(json.dumps(r["aggregate"], indent=1, sort_keys=True))
    return 0


def cmd_analyze(a) -> int:
    from .evaluate import ORACLE, run_analyze

    named = {}
    for item in a.checkpoint:
        name, _, path = item.rpartition("=")
        name = name or Path(path).parent.name or Path(path).name
        if name in named:
            raise ConfigError(f"duplicate checkpoint name {name!r}; label them NAME=DIR")
        named[name] = path
    if a.oracle:
        named[ORACLE] = ORACLE
    if not named:
        raise ConfigError("analyze needs --checkpoint or --oracle")
    r = run_analyze(named, a.data, a.split, a.out, a.kalman, plots=not a.no_plots, log=_log)
    print(r["table"])
    return 0


def cmd_gradcheck(a) -> int:
    from .checks import model_gradcheck

    cfg = resolve(a.preset or "tiny", a.config, a.overrides)
    variants = ("main", "appendix") if a.variant == "both" else (a.variant,)
    failed = False
    for variant in variants:
        r = model_gradcheck(cfg, variant, coords=a.coords)
        r["pass"] = r["max_rel_err"] < a.tol and r["zero_grad_ok"]
        failed |= not r["pass"]
        print(json.dumps(r, sort_keys=True))
    return 1 if failed else 0


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "analyze": cmd_analyze,
            "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except KeyboardInterrupt:
        print("error: interrupted", file=sys.stderr)
        return 130
    except (ValueError, OSError, RuntimeError, KeyError) as e:
        msg = " ".join(str(e).split()) or type(e).__name__
        print(f"error: {type(e).__name__}: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
