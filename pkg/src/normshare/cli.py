"""Command-line entry point: ``normshare <command> [options]``.

Exit codes: 0 success, 1 unexpected error, 2 spec validation failure (no
outputs written), 3 invariant violation.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import yaml

from . import experiments as ex
from .numcore import ContractError
from .training import InvariantViolation

EXIT_OK, EXIT_ERROR, EXIT_SPEC, EXIT_INVARIANT = 0, 1, 2, 3

log = logging.getLogger("normshare")


def _common(p: argparse.ArgumentParser, spec_required: bool = True) -> None:
    p.add_argument("--spec", type=Path, required=spec_required, help="experiment spec (YAML)")
    p.add_argument("--out", type=Path, help="output directory (default: spec 'out' or ./results)")
    p.add_argument("--seed", help="seed or comma-separated seeds, overriding the spec")
    p.add_argument("--workers", type=int, help="parallel cells (default: $NORMSHARE_WORKERS or 1)")
    p.add_argument("--precision", choices=("f32", "f64"), help="floating-point precision")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="normshare", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("train", help="train and evaluate one cell"))
    _common(sub.add_parser("sweep-sharing", help="all 64 sharing configurations"))
    _common(sub.add_parser("learning-curve", help="accuracy by training size"))
    _common(sub.add_parser("zero-shot", help="tagged multi-language training without target normalization data"))
    ev = sub.add_parser("evaluate", help="evaluate a checkpoint on a pair file")
    ev.add_argument("--checkpoint", type=Path, required=True)
    ev.add_argument("--data", type=Path, required=True)
    ev.add_argument("--task", default="normalization")
    ev.add_argument("--language", default="xx")
    ev.add_argument("--train-data", type=Path, help="training file, for known/unknown splits")
    ev.add_argument("--zero-shot", action="store_true", help="prepend language/task tags")
    ev.add_argument("--out", type=Path, default=Path("evaluation"))
    an = sub.add_parser("analyze", help="correlation and split analysis of a results directory")
    _common(an, spec_required=False)
    gen = sub.add_parser("gen-synthetic", help="write a synthetic corpus and a matching spec")
    _common(gen, spec_required=False)
    return parser


def _out_dir(args, spec) -> Path:
    if args.out is not None:
        return args.out
    if spec is not None and spec.out is not None:
        return spec.out
    return Path("results")


def _spec(args, required: bool = True):
    if args.spec is None:
        if required:
            raise ex.SpecError("--spec is required")
        return None
    seeds = ex.parse_seed_list(args.seed) if args.seed else None
    return ex.load_spec(args.spec, seeds=seeds, precision=args.precision)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "evaluate":
            report = ex.cmd_evaluate(args.checkpoint, args.data, args.out, args.task, args.language,
                                     args.train_data, args.zero_shot)
            print(f"accuracy {report.accuracy:.2f} identity {report.identity_accuracy:.2f} n {report.n}")
            return EXIT_OK
        if args.command == "gen-synthetic":
            doc, base = None, Path(".")
            if args.spec is not None:
                if not args.spec.is_file():
                    raise ex.SpecError(f"spec file {args.spec} does not exist")
                raw = yaml.safe_load(args.spec.read_text(encoding="utf-8")) or {}
                doc, base = raw.get("synthetic", raw), args.spec.parent
            seed = ex.parse_seed_list(args.seed)[0] if args.seed else 1
            path = ex.cmd_gen_synthetic(args.out or Path("synthetic"), seed, doc, base)
            print(f"wrote {path}")
            return EXIT_OK
        spec = _spec(args, required=args.command != "analyze")
        workers = ex.resolve_workers(args.workers)
        out = _out_dir(args, spec)
        if args.command == "train":
            row = ex.cmd_train(spec, out, workers)
            er = "" if row.error_reduction is None else f" error_reduction {row.error_reduction:.2f}"
            print(f"{row.dataset} {row.config} {row.aux} size {row.size} seed {row.seed}: "
                  f"accuracy {row.accuracy:.2f} identity {row.identity:.2f}{er}")
        elif args.command == "sweep-sharing":
            rows = ex.cmd_sweep_sharing(spec, out, workers)
            print(f"{len(rows)} rows; report in {out / 'sweep_report.txt'}")
        elif args.command == "learning-curve":
            rows = ex.cmd_learning_curve(spec, out, workers)
            print(f"{len(rows)} rows; curve in {out / 'curve.csv'}")
        elif args.command == "zero-shot":
            rows = ex.cmd_zero_shot(spec, out, workers)
            print((out / "zero_shot.md").read_text(encoding="utf-8"), end="")
        elif args.command == "analyze":
            for c in ex.cmd_analyze(out, spec, workers):
                if c.r is None:
                    print(f"{c.name}: n={c.n} ({c.note})")
                else:
                    print(f"{c.name}: n={c.n} r={c.r:.3f} [{c.lo:.3f}, {c.hi:.3f}]")
        return EXIT_OK
    except ex.SpecError as exc:
        log.error("invalid spec: %s", exc)
        return EXIT_SPEC
    except (InvariantViolation, ContractError) as exc:
        log.error("invariant violated: %s", exc)
        return EXIT_INVARIANT


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
