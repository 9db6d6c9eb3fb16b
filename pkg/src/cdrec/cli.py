"""Command-line interface.

Subcommands mirror the experiment lifecycle:

    cdrec preprocess  --tuple-object Y.tsv --member-object X.tsv \\
                      --tuple-member Z.tsv --out runs/exp
    cdrec train       --out runs/exp --variant CDR --tau-pretrain 3.8 ...
    cdrec evaluate    --out runs/exp --k 10,20,30
    cdrec ablate      --out runs/abl --variants CDR,CDR-F,CDR-P
    cdrec export      --out runs/exp --stage pretrain

Options may come from an INI-style config file (sections: data, split,
pretrain, finetune, run); command-line flags override file values.
Exit codes: 0 success, 1 validation/config error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import sys
from dataclasses import replace

from .graph import GraphError, SplitSpec
from .model import TrainConfig, VARIANTS
from .pipeline import (RunConfig, cmd_ablate, cmd_evaluate, cmd_export,
                       cmd_preprocess, cmd_train)

log = logging.getLogger(__name__)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="INI config file")
    parser.add_argument("--out", help="run output directory")
    parser.add_argument("--tuple-object", help="tuple-object edge file (Y)")
    parser.add_argument("--member-object", help="member-object edge file (X)")
    parser.add_argument("--tuple-member", help="tuple-member edge file (Z)")
    parser.add_argument("--seed", type=int, help="seed for split and training")
    parser.add_argument("--variant", choices=VARIANTS)
    parser.add_argument("--dim", type=int)
    parser.add_argument("--tau-pretrain", type=float)
    parser.add_argument("--tau-finetune", type=float)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--patience", type=int)
    parser.add_argument("--max-epochs", type=int)
    parser.add_argument("--negatives", help="'full' or a sample count")
    parser.add_argument("--loss", choices=("CD", "Origin", "MSE", "CE"))
    parser.add_argument("--k", help="comma-separated cutoff list, e.g. 10,20,30")
    parser.add_argument("--train-fraction", type=float)
    parser.add_argument("--test-fraction", type=float)
    parser.add_argument("--valid-fraction", type=float)
    parser.add_argument("--measure", choices=("cosine", "dot"))
    parser.add_argument("--test-file", help="explicit test edge file "
                                            "(extreme cold-start evaluation)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cdrec", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    for name, desc in (
        ("preprocess", "split interactions and export both metric sets"),
        ("train", "run one pipeline variant and write a checkpoint"),
        ("evaluate", "rank the test split and write reports"),
        ("ablate", "compare variants or sweep the temperature"),
        ("export", "write metric coordinate files"),
    ):
        p = sub.add_parser(name, help=desc)
        _add_common(p)
        if name == "train":
            p.add_argument("--resume", action="store_true",
                           help="reuse an existing pretrain checkpoint")
        if name == "evaluate":
            p.add_argument("--checkpoint", help="checkpoint path "
                                                "(default: <out>/checkpoint.npz)")
            p.add_argument("--allow-hash-mismatch", action="store_true")
        if name == "ablate":
            p.add_argument("--variants", help="comma-separated variant list")
            p.add_argument("--tau-sweep", help="comma-separated tau values")
            p.add_argument("--sweep-stage", choices=("pretrain", "finetune"),
                           default="finetune")
        if name == "export":
            p.add_argument("--stage", choices=("pretrain", "finetune", "both"),
                           default="both")
    return parser


def _file_value(cp: configparser.ConfigParser, section: str, key: str):
    if cp.has_option(section, key):
        return cp.get(section, key)
    return None


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Merge defaults, config-file values, and CLI flags (flags win)."""
    cp = configparser.ConfigParser()
    if args.config:
        read = cp.read(args.config)
        if not read:
            raise GraphError(f"config file not found: {args.config}")

    def pick(flag_value, section, key, cast=str):
        if flag_value is not None:
            return flag_value
        raw = _file_value(cp, section, key)
        return cast(raw) if raw is not None else None

    tuple_object = pick(args.tuple_object, "data", "tuple_object")
    member_object = pick(args.member_object, "data", "member_object")
    tuple_member = pick(args.tuple_member, "data", "tuple_member")
    if not all((tuple_object, member_object, tuple_member)):
        raise GraphError("three edge files are required (flags --tuple-object/"
                         "--member-object/--tuple-member or the [data] section)")
    out_dir = pick(args.out, "run", "out")
    if not out_dir:
        raise GraphError("--out (or [run] out) is required")

    seed = pick(args.seed, "run", "seed", int)
    seed = 0 if seed is None else seed
    split = SplitSpec(
        train_fraction=_or_default(pick(args.train_fraction, "split",
                                        "train_fraction", float), 0.05),
        test_fraction=_or_default(pick(args.test_fraction, "split",
                                       "test_fraction", float), 0.20),
        valid_fraction=_or_default(pick(args.valid_fraction, "split",
                                        "valid_fraction", float), 0.05),
        seed=seed,
    )

    def stage_cfg(section: str, tau_flag, default_tau: float) -> TrainConfig:
        negatives = pick(args.negatives, section, "negatives")
        if negatives in (None, "full"):
            neg_val = None
        else:
            neg_val = int(negatives)
        return TrainConfig(
            dim=pick(args.dim, section, "dim", int) or 64,
            tau=pick(tau_flag, section, "tau", float) or default_tau,
            learning_rate=pick(args.lr, section, "learning_rate", float) or 0.001,
            batch_size=pick(args.batch_size, section, "batch_size", int) or 1024,
            patience=pick(args.patience, section, "patience", int) or 10,
            seed=seed,
            negatives=neg_val,
            loss=pick(args.loss, section, "loss") or "CD",
            max_epochs=pick(args.max_epochs, section, "max_epochs", int) or 500,
        )

    k_raw = pick(args.k, "run", "k") or "10,20,30"
    k_list = tuple(int(x) for x in str(k_raw).split(","))
    return RunConfig(
        tuple_object=tuple_object,
        member_object=member_object,
        tuple_member=tuple_member,
        split=split,
        pretrain=stage_cfg("pretrain", args.tau_pretrain, 3.8),
        finetune=stage_cfg("finetune", args.tau_finetune, 1.0),
        variant=pick(args.variant, "run", "variant") or "CDR",
        k_list=k_list,
        out_dir=out_dir,
        measure=pick(args.measure, "run", "measure") or "cosine",
        test_override=pick(getattr(args, "test_file", None), "run", "test_file"),
    )


def _or_default(value, default):
    return default if value is None else value


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "preprocess":
            info = cmd_preprocess(cfg)
            for key, val in sorted(info.items()):
                print(f"{key}: {val}")
        elif args.command == "train":
            provenance = cmd_train(cfg, resume=args.resume)
            for key, val in sorted(provenance.items()):
                print(f"{key}: {val}")
        elif args.command == "evaluate":
            report = cmd_evaluate(cfg, checkpoint=args.checkpoint,
                                  allow_hash_mismatch=args.allow_hash_mismatch)
            print(report.to_table(), end="")
        elif args.command == "ablate":
            variants = [v for v in (args.variants or "").split(",") if v]
            sweep = ([float(x) for x in args.tau_sweep.split(",")]
                     if args.tau_sweep else None)
            rows = cmd_ablate(cfg, variants, tau_sweep=sweep,
                              sweep_stage=args.sweep_stage)
            from .pipeline import _ablation_table
            print(_ablation_table(rows), end="")
        elif args.command == "export":
            for path in cmd_export(cfg, stage=args.stage):
                print(f"wrote {path}")
        return 0
    except (GraphError, ValueError, FileNotFoundError, KeyError) as exc:
        log.error("%s", exc)
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        log.exception("unexpected failure: %s", exc)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
