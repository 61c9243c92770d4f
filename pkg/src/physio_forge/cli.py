"""``physio-forge`` command line: gen-data, train, eval, verify, report.

Exit codes: 0 success, 1 usage or configuration error, 2 data or file-format
error, 3 numerical failure (non-finite loss, failed verification suite).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import config as cfgmod
from .errors import FormatError, ManifestError, MetricUndefinedError, NumericalError, ParameterError, ScheduleError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
RESOLVED_NAME = "config.resolved"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat 'key = value' config file (flags override it)")
    p.add_argument("--seed", type=int, help=f"master seed (falls back to ${cfgmod.SEED_ENV}, then 0)")


def _train_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=cfgmod.MODES)
    p.add_argument("--task", choices=("spoof", "forgery"), help="task for separate mode and extra-data filters")
    p.add_argument("--sampling", choices=("random", "simultaneous", "alternating", "task_by_task"))
    p.add_argument("--heads", choices=("1h2c", "2h2c", "1h3c"))
    p.add_argument("--n-shared", type=int, dest="n_shared")
    p.add_argument("--fusion", choices=("none", "concat", "weighted_norm"))
    p.add_argument("--modality", choices=("appearance", "rppg", "both"))
    p.add_argument("--theta", type=float)
    p.add_argument("--extra-data", choices=("both", "bonafide_only", "attack_only"), dest="extra_data")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="physio-forge", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write the synthetic benchmark")
    _config_args(p)
    p.add_argument("--out", dest="data_dir", help="output directory")
    p.add_argument("--samples-per-class", type=int, dest="samples_per_class")

    p = sub.add_parser("train", help="train a joint or single-task model")
    _config_args(p)
    _train_args(p)
    p.add_argument("--data", dest="data_dir", help="benchmark directory holding train.tsv")
    p.add_argument("--train-manifest", help="explicit training manifest (overrides --data)")
    p.add_argument("--out", dest="out_dir", help="run directory for checkpoint, log and resolved config")

    p = sub.add_parser("eval", help="score test manifests and write a protocol report")
    p.add_argument("--checkpoint", action="append", required=True,
                   help="joint checkpoint, or one separate-mode checkpoint per task (repeat the flag)")
    p.add_argument("--data", help="benchmark directory; uses test_intra.tsv and test_cross.tsv")
    p.add_argument("--intra", action="append", default=[], help="intra-domain test manifest (repeatable)")
    p.add_argument("--cross", action="append", default=[], help="cross-domain test manifest (repeatable)")
    p.add_argument("--out", required=True, help="directory for report.txt and results.tsv")

    p = sub.add_parser("verify", help="run the numerical oracle suites")
    p.add_argument("--suite", action="append", choices=("grad", "cwt", "metrics", "maps"))

    p = sub.add_parser("report", help="print one or more results tables side by side")
    p.add_argument("tables", nargs="+", help="results.tsv files written by eval")
    return parser


def _resolve(args, keys: Sequence[str]) -> cfgmod.RunConfig:
    overrides = {k: getattr(args, k, None) for k in keys}
    overrides["seed"] = args.seed
    return cfgmod.resolve(args.config, overrides)


def cmd_gen_data(args) -> int:
    from .synthbench import gen_dataset

    cfg = _resolve(args, ["data_dir", "samples_per_class"])
    out = Path(cfg.data_dir)
    paths = gen_dataset(cfg.benchmark(), out)
    cfgmod.write_resolved(cfg, out / RESOLVED_NAME)
    for split, path in paths.items():
        print(f"{split}: {path}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .data import DatasetHandle, load_dataset
    from .trainer import train

    keys = ["data_dir", "out_dir", "mode", "task", "sampling", "heads", "n_shared", "fusion", "modality",
            "theta", "extra_data", "epochs", "lr", "batch_size"]
    cfg = _resolve(args, keys)
    manifest = Path(args.train_manifest) if args.train_manifest else Path(cfg.data_dir) / "train.tsv"
    data = load_dataset(manifest)
    d_spoof, d_forgery = data.filter(task="spoof"), data.filter(task="forgery")
    if cfg.mode == "separate":
        # single-task model: the other task contributes nothing
        empty = DatasetHandle([], data.root)
        d_spoof, d_forgery = (d_spoof, empty) if cfg.task == "spoof" else (empty, d_forgery)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfgmod.write_resolved(cfg, out / RESOLVED_NAME)
    result = train(
        cfg.train_config(),
        d_spoof,
        d_forgery,
        checkpoint=out / "model.ckpt",
        log=out / "train.log",
        config_text=cfgmod.dump(cfg, include_paths=False),
    )
    print(f"trained {result.steps} steps; final epoch loss {result.losses[-1]:.6f}")
    print(f"checkpoint: {out / 'model.ckpt'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .metrics import run_protocol, write_result

    models = {}
    for path in args.checkpoint:
        model = cfgmod.model_from_checkpoint(path)
        for task in model.tasks:
            if task in models:
                raise ParameterError(f"two checkpoints serve task {task!r}")
            models[task] = model
    joint = len(args.checkpoint) == 1 and len(models) > 1
    intra, cross = list(args.intra), list(args.cross)
    if args.data:
        intra.append(str(Path(args.data) / "test_intra.tsv"))
        cross.append(str(Path(args.data) / "test_cross.tsv"))
    if not intra and not cross:
        raise UsageError("eval needs --data or at least one --intra/--cross manifest")
    if joint:
        result = run_protocol(next(iter(models.values())), intra, cross, mode="joint")
    else:
        result = run_protocol(models, intra, cross, mode="separate")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_result(result, out / "report.txt", out / "results.tsv")
    sys.stdout.write(result.report())
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_all

    results = run_all(args.suite)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    print("all suites passed" if not failed else f"failed suites: {', '.join(failed)}")
    return EXIT_OK if not failed else EXIT_NUMERICAL


def cmd_report(args) -> int:
    import csv

    rows = []
    for path in args.tables:
        try:
            with open(path, newline="", encoding="utf-8") as fh:
                for rec in csv.DictReader(fh, delimiter="\t"):
                    rows.append((Path(path).parent.name, rec))
        except OSError as exc:
            raise ManifestError(f"cannot read results table {path}: {exc.strerror}") from exc
    header = f"{'run':<16}{'scope':<7}{'task':<9}{'dataset':<18}{'AUC':>9}{'EER':>9}{'TPR@.10':>9}{'TPR@.01':>9}"
    print(header)
    print("-" * len(header))
    for run, r in rows:
        print(f"{run:<16}{r['scope']:<7}{r['task']:<9}{r['dataset']:<18}{r['auc']:>9}{r['eer'] or '-':>9}"
              f"{r['tpr@fpr=0.10'] or '-':>9}{r['tpr@fpr=0.01'] or '-':>9}")
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "verify": cmd_verify, "report": cmd_report}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (ParameterError, ScheduleError) as exc:
        print(f"physio-forge: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ManifestError, FormatError, MetricUndefinedError, OSError) as exc:
        print(f"physio-forge: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"physio-forge: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
