"""Command line entry point: ``cbdnet <subcommand> ...``."""

import argparse
import sys
from pathlib import Path

from . import checkpoint as ckpt_io
from .compositor import read_png, write_png
from .config import load_config
from .data import SampleSource, generate_dataset, validate_dataset
from .inference import Restorer, evaluate, manifest_cases, preset_cases
from .presets import get_presets
from .training import train


def _config(args):
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.dataset.seed = args.seed
        cfg.optimizer.seed = args.seed
    return cfg


def cmd_generate(args):
    cfg = _config(args)
    path = generate_dataset(cfg, args.out or cfg.paths.data_dir)
    print(f"wrote {cfg.dataset.count} samples; manifest {path}")
    return 0


def cmd_validate(args):
    cfg = _config(args)
    problems = validate_dataset(cfg, args.out or cfg.paths.data_dir)
    for p in problems:
        print(p)
    print("manifest OK" if not problems else f"{len(problems)} problem(s)")
    return 0 if not problems else 1


def cmd_train(args):
    cfg = _config(args)
    if args.epochs is not None:
        cfg.optimizer.epochs = args.epochs
    source = SampleSource(cfg, args.data or cfg.paths.data_dir, on_the_fly=args.on_the_fly)
    run_dir = args.out or cfg.paths.run_dir

    def log(rec):
        print(f"epoch {rec['epoch']:4d}  loss {rec['total']:.5f}  texture {rec['texture']:.5f}  "
              f"perceptual {rec['perceptual']:.5f}  bce {rec['bce']:.5f}  lr {rec['lr']:.3g}",
              flush=True)

    result = train(cfg, source, run_dir, log=log, resume=args.resume)
    print(f"first-step loss {result.first_loss:.8f}")
    if result.checkpoints:
        print(f"checkpoint {result.checkpoints[-1]}")
    return 0


def _restorer(path):
    return Restorer(ckpt_io.load(path).build_model())


def cmd_eval(args):
    restorer = _restorer(args.checkpoint)
    components = restorer.components
    presets = get_presets(args.presets) if args.presets else []
    if args.data:
        cfg = _config(args)
        cases = manifest_cases(SampleSource(cfg, args.data))
    else:
        if not presets:
            raise SystemExit("eval needs --presets or --data")
        size = tuple(args.size)
        cases = preset_cases(presets, args.n_per_case, args.seed or 0, size, components)
    reports = evaluate(restorer, cases, presets, args.out)
    from .metrics import format_reports
    print(format_reports(reports))
    return 0


def cmd_restore(args):
    restorer = _restorer(args.checkpoint)
    result = restorer.restore(read_png(args.image), args.prompt, args.all_components)
    print(result.description)
    print("selection: " + " ".join(f"{c}={int(v)}" for c, v in zip(restorer.components,
                                                                   result.selection)))
    out = Path(args.out)
    write_png(out, result.output)
    for comp, img in result.components.items():
        write_png(out.with_name(f"{out.stem}_{comp}{out.suffix}"), img)
    print(f"wrote {out}")
    return 0


def cmd_classify(args):
    restorer = _restorer(args.checkpoint)
    _, text = restorer.classify(read_png(args.image))
    print(text)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="cbdnet", description="Controllable blind image "
                                     "decomposition: data, training and restoration.")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p, required=True):
        p.add_argument("--config", required=required,
                       help="YAML run config or bundled profile name (desk, tiny, paper_full)")
        p.add_argument("--seed", type=int, default=None, help="override dataset and optimizer seeds")

    p = sub.add_parser("generate", help="synthesize a dataset and its manifest")
    with_config(p)
    p.add_argument("--out", help="dataset directory (default: paths.data_dir)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("validate", help="re-derive every sample and diff against the files")
    with_config(p)
    p.add_argument("--out", help="dataset directory (default: paths.data_dir)")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("train", help="train a model")
    with_config(p)
    p.add_argument("--data", help="dataset directory (default: paths.data_dir)")
    p.add_argument("--on-the-fly", action="store_true",
                   help="regenerate samples in memory at full precision instead of reading PNGs")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--out", help="run directory (default: paths.run_dir)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on presets or a dataset")
    with_config(p, required=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--presets", nargs="*", default=[],
                   help="preset groups or names: weather mixed prompts styles case1 ...")
    p.add_argument("--data", help="evaluate the records of this dataset instead")
    p.add_argument("--n-per-case", type=int, default=8)
    p.add_argument("--size", type=int, nargs=2, default=[64, 64])
    p.add_argument("--out", help="directory for report.txt / report.jsonl")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("restore", help="restore one image under a prompt")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("image")
    p.add_argument("--prompt", default="", help="instruction; empty removes every degradation")
    p.add_argument("--all-components", action="store_true",
                   help="also write one PNG per component")
    p.add_argument("--out", required=True, help="output PNG path")
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("classify", help="report which components an image contains")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("image")
    p.set_defaults(func=cmd_classify)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, ckpt_io.CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
