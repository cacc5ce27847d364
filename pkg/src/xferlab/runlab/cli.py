"""Command-line entry point: ``xferlab <subcommand> [options]``.

Exit status: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from ..dataforge import estimate_task_correlation, load_dataset
from ..errors import ConfigInvalid, DataError, NumericError
from . import experiments as ex
from .config import load_config_text, validate_config
from .emit import emit, format_cell, read_csv
from .plot import plot_svg

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

SWEEPS = {
    "glm-sweep": "glm_sweep",
    "task-sweep": "task_sweep",
    "layer-sweep": "layer_sweep",
    "oracle-init": "oracle_init",
    "attribute": "attribution",
    "corr-check": "corr_check",
}


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", metavar="PATH", default=argparse.SUPPRESS, help="YAML experiment config")
    p.add_argument("--seed", type=int, metavar="N", default=argparse.SUPPRESS, help="master seed")
    p.add_argument("--jobs", type=int, metavar="N", default=argparse.SUPPRESS,
                   help="worker processes for sweep cells (1 = canonical deterministic mode)")
    p.add_argument("--out", metavar="DIR", default=argparse.SUPPRESS, help="output directory")
    p.add_argument("--scale", choices=("desk", "paper"), default=argparse.SUPPRESS)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", default=argparse.SUPPRESS,
                   help="override a config field, e.g. --set alice.epochs=5 (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="xferlab", parents=[common],
                                     description="Transfer-learning laboratory: pre-train, freeze, fine-tune, attribute.")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, exp in SWEEPS.items():
        sp = sub.add_parser(name, parents=[common], help=f"run the {exp} experiment")
        sp.add_argument("--resume", action="store_true", help="reuse finished cells from a previous run")
        sp.add_argument("--seeds", type=_ints, help="comma-separated seed indices")
        if name in ("task-sweep", "layer-sweep", "oracle-init", "attribute"):
            sp.add_argument("--betas", type=_floats, help="comma-separated beta grid")
        if name == "layer-sweep":
            sp.add_argument("--ells", type=_ints, help="comma-separated freeze depths")
        if name in ("attribute", "oracle-init"):
            sp.add_argument("--samples", type=int, help="inputs to attribute")
        if name == "glm-sweep":
            sp.add_argument("--alphas", type=_floats, help="comma-separated alpha grid")
            sp.add_argument("--ks", type=_ints, help="comma-separated feature counts")
        if name == "corr-check":
            sp.add_argument("--betas", type=_floats, help="comma-separated beta grid")
            sp.add_argument("--n", type=int, help="pairs sampled per beta")
            sp.add_argument("--in", "--dataset", dest="dataset", metavar="PATH",
                            help="estimate on an existing XFL1 dataset instead")

    sp = sub.add_parser("make-dataset", parents=[common],
                        help="sample a paired dataset into an XFL1 file (--out names the file)")
    sp.add_argument("--beta", type=float, required=True)
    sp.add_argument("--n", type=int, default=10000)
    sp.add_argument("--split", choices=("train", "test"), default="train")
    sp.add_argument("--left", metavar="PATH|NAME", help="glyph preset name or IMAGES,LABELS idx file pair")
    sp.add_argument("--right", metavar="PATH|NAME", help="glyph preset name or IMAGES,LABELS idx file pair")

    sp = sub.add_parser("train", parents=[common], help="train Alice's network and save a checkpoint")
    sp.add_argument("--beta", type=float, default=0.0)
    sp.add_argument("--seed-index", type=int, default=0)
    sp.add_argument("--arch", choices=("fc", "conv"))
    sp.add_argument("--init", choices=("standard", "zero_right_half"))

    sp = sub.add_parser("finetune", parents=[common], help="fine-tune a saved network for Bob's task")
    sp.add_argument("--checkpoint", metavar="PATH", required=True)
    sp.add_argument("--ell", type=int, help="freeze layers 1..ell-1 (default: output layer only)")
    sp.add_argument("--beta", type=float, default=0.0)
    sp.add_argument("--seed-index", type=int, default=0)

    sp = sub.add_parser("plot", parents=[common], help="render a results CSV as an SVG line chart")
    sp.add_argument("--table", metavar="CSV", required=True)
    sp.add_argument("--x", required=True)
    sp.add_argument("--y", nargs="+", required=True)
    sp.add_argument("--group")
    sp.add_argument("--title")
    sp.add_argument("--output", metavar="PATH", help="SVG path (default: <out>/plot.svg)")
    return parser


def _parse_set(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigInvalid(item, "expected KEY=VALUE")
        key, value = item.split("=", 1)
        out[key.strip()] = yaml.safe_load(value)
    return out


def _domain_choice(text):
    if "," not in text:
        return text
    images, labels = (t.strip() for t in text.split(",", 1))
    return {"images": images, "labels": labels, "test_images": images, "test_labels": labels}


def _resolve_config(args, experiment=None):
    text, raw = (None, {})
    if getattr(args, "config", None):
        text, raw = load_config_text(args.config)
    if experiment is not None:
        declared = raw.get("experiment")
        if declared is not None and declared != experiment:
            raise ConfigInvalid("experiment", f"config declares {declared!r} but the command runs {experiment!r}")
    overrides = _parse_set(getattr(args, "set", None))
    if experiment is not None:
        overrides["experiment"] = experiment
    for flag, key in (("seed", "seed"), ("scale", "scale"), ("out", "output_dir")):
        if getattr(args, flag, None) is not None:
            overrides[key] = getattr(args, flag)
    for flag, key in (("seeds", "seeds"), ("betas", "data.betas"), ("ells", "layers.ells"),
                      ("samples", "attribution.samples"), ("alphas", "glm.alphas"), ("ks", "glm.ks"),
                      ("n", "corr.n"), ("arch", "model.arch"), ("init", "model.init")):
        if getattr(args, flag, None) is not None:
            overrides[key] = getattr(args, flag)
    for side in ("left", "right"):
        if getattr(args, side, None) is not None:
            overrides[f"data.{side}"] = _domain_choice(getattr(args, side))
    if experiment == "corr_check" and getattr(args, "betas", None) is not None:
        overrides.pop("data.betas")
        overrides["corr.betas"] = args.betas
    return validate_config(raw, overrides), text


def _print_table(table):
    cols = table.columns
    print(",".join(cols))
    for r in table.rows:
        print(",".join(format_cell(r.get(c)) for c in cols))


def _dispatch(args) -> int:
    if args.command in SWEEPS:
        exp = SWEEPS[args.command]
        if exp == "corr_check" and args.dataset:
            rep = estimate_task_correlation(load_dataset(args.dataset))
            print(json.dumps(rep.to_dict(), indent=2))
            return EXIT_OK
        cfg, text = _resolve_config(args, exp)
        table = ex.run(cfg, cfg.output_dir, jobs=getattr(args, "jobs", 1), resume=args.resume, config_text=text)
        _print_table(table)
        print(f"results written to {Path(cfg.output_dir) / 'results.csv'}", file=sys.stderr)
        return EXIT_OK

    if args.command == "plot":
        table = read_csv(args.table)
        out = args.output or Path(getattr(args, "out", ".")) / "plot.svg"
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        plot_svg(table, args.x, args.y, out, group=args.group, title=args.title)
        print(out)
        return EXIT_OK

    cfg, text = _resolve_config(args)
    if args.command == "make-dataset":
        path = Path(getattr(args, "out", None) or f"dataset_{args.split}.xfl")
        path.parent.mkdir(parents=True, exist_ok=True)
        info = ex.make_dataset(cfg, args.beta, args.n, args.split, path)
        print(json.dumps({**info, "path": str(path)}, indent=2))
        return EXIT_OK
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.command == "train":
        table = ex.train_single(cfg, args.beta, args.seed_index, out_dir)
    else:
        table = ex.finetune_single(cfg, args.checkpoint, args.ell, args.beta, args.seed_index, out_dir)
    emit(table, out_dir / "results.csv")
    (out_dir / "config.resolved.json").write_text(json.dumps(cfg.model_dump(mode="json"), indent=2) + "\n")
    if text is not None:
        (out_dir / "config.yaml").write_text(text)
    _print_table(table)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
