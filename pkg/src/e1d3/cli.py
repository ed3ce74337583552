"""Command-line entry point: ``e1d3 <command> ...``.

Exit status is 0 on success, 1 on a runtime failure and 2 on a usage error.
"""
import argparse
import json
import logging
import os
import sys

from .config import load_config, tomllib
from .errors import ConfigError, E1D3Error
from .phantom import PhantomSpec, make_phantoms

logger = logging.getLogger("e1d3")


def _cmd_train(args):
    from .pipeline import run_training

    cfg = load_config(args.config)
    result = run_training(cfg)
    last = result.reports[-1].total if result.reports else float("nan")
    print(f"trained {len(result.reports)} steps, final loss {last:.6f}")
    print(f"checkpoint: {result.checkpoints[-1]}")
    return 0


def _cmd_infer(args):
    from .pipeline import run_inference

    cfg = load_config(args.config)
    cfg.validate(need_dataset=False)
    subject = args.subject
    if not os.path.isdir(subject) and cfg.dataset:
        subject = os.path.join(cfg.dataset, subject)
    written = run_inference(
        cfg, args.checkpoint, subject, args.output, args.tta or None, args.fusion, args.save_probs
    )
    for path in written:
        print(path)
    return 0


def _cmd_fuse(args):
    from .fusion import FusionConfig, binarize
    from .nifti import read_nifti, write_nifti
    from .pipeline import fuse_regions

    vols = [read_nifti(p)[0] for p in (args.wt, args.tc, args.en)]
    cfg = FusionConfig(threshold=args.threshold)
    masks = binarize([v.data for v in vols], cfg.threshold)
    seg = fuse_regions(masks, args.mode, cfg, vols[0].spacing)
    write_nifti(seg, args.output, "uint8")
    print(args.output)
    return 0


def _cmd_evaluate(args):
    from .pipeline import run_evaluation

    rows = run_evaluation(args.pred_dir, args.ref_dir, args.csv)
    print(f"wrote {len(rows)} rows to {args.csv}")
    return 0


def _cmd_phantom(args):
    try:
        with open(args.spec, "rb") as fh:
            doc = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read phantom spec {args.spec}: {exc}") from exc
    section = doc.get("phantom", doc)
    output = args.output or section.get("output")
    if not output:
        raise ConfigError("phantom output directory missing (use --output or output = ...)")
    if not os.path.isabs(output):
        output = os.path.join(os.path.dirname(os.path.abspath(args.spec)), output)
    values = {k: v for k, v in section.items() if k != "output"}
    try:
        spec = PhantomSpec(**values)
    except TypeError as exc:
        raise ConfigError(f"bad phantom spec: {exc}") from exc
    for d in make_phantoms(spec, output):
        print(d)
    return 0


def _cmd_split(args):
    from .dataset import kfold_split

    if os.path.isdir(args.ids):
        ids = sorted(d for d in os.listdir(args.ids) if os.path.isdir(os.path.join(args.ids, d)))
    else:
        try:
            with open(args.ids, encoding="utf-8") as fh:
                ids = [line.strip() for line in fh if line.strip()]
        except OSError as exc:
            raise ConfigError(f"cannot read ids from {args.ids}: {exc}") from exc
    folds = kfold_split(ids, args.k, args.seed)
    text = json.dumps(folds, indent=2)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="e1d3", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    s = sub.add_parser("train", help="train a network from a run config")
    s.add_argument("config")
    s.set_defaults(func=_cmd_train)

    s = sub.add_parser("infer", help="segment one subject")
    s.add_argument("config")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--subject", required=True, help="subject directory or id under the dataset")
    s.add_argument("--tta", action="store_true", help="average the 8 flipped predictions")
    s.add_argument("--fusion", choices=("full", "naive"), default=None)
    s.add_argument("--save-probs", action="store_true", help="also write WT/TC/EN probability maps")
    s.add_argument("--output", help="output directory (default <output>/predictions)")
    s.set_defaults(func=_cmd_infer)

    s = sub.add_parser("fuse", help="fuse WT/TC/EN probability maps into a label map")
    s.add_argument("wt")
    s.add_argument("tc")
    s.add_argument("en")
    s.add_argument("--mode", choices=("full", "naive"), default="full")
    s.add_argument("--threshold", type=float, default=0.5)
    s.add_argument("--output", required=True)
    s.set_defaults(func=_cmd_fuse)

    s = sub.add_parser("evaluate", help="Dice/HD95 of predictions against references")
    s.add_argument("pred_dir")
    s.add_argument("ref_dir")
    s.add_argument("--csv", required=True)
    s.set_defaults(func=_cmd_evaluate)

    s = sub.add_parser("phantom", help="write synthetic subjects from a TOML spec")
    s.add_argument("spec")
    s.add_argument("--output")
    s.set_defaults(func=_cmd_phantom)

    s = sub.add_parser("split", help="deterministic k-fold split of subject ids")
    s.add_argument("ids", help="file with one id per line, or a dataset directory")
    s.add_argument("--k", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--output")
    s.set_defaults(func=_cmd_split)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (E1D3Error, OSError, ValueError) as exc:
        print(f"e1d3 {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
