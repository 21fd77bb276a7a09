"""Command-line entry point: ``subtrack-bench`` / ``python3 -m subtrack.bench``.

Exit codes: 0 on success, 1 on invalid arguments, config or I/O problems,
2 when the experiment itself fails.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from ..engine import METHODS
from .csvio import StepLogWriter
from .experiments import run_experiment
from .spec import EXPERIMENTS, build_spec, read_config_file

logger = logging.getLogger("subtrack.bench")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; this CLI reserves 2 for
    # runtime failures, so usage problems are re-raised and mapped to 1.
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="subtrack-bench", description="Desk-scale SubTrack++ experiments with CSV output.")
    p.add_argument("--experiment", required=True, choices=EXPERIMENTS)
    p.add_argument("--optimizer", choices=tuple(METHODS), default=None, help="default: the experiment's full comparison")
    p.add_argument("--steps", type=int, default=None, help="steps (repetitions for complexity)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", type=Path, default=None, help="flat 'key = value' file; flags override it")
    p.add_argument("--out", type=Path, default=None, help="CSV path (default: <experiment>.csv)")
    p.add_argument("--step-log", type=Path, default=None, help="per-step engine records as CSV (ackley only)")
    p.add_argument("--alpha", type=float)
    p.add_argument("--rank", type=int)
    p.add_argument("--interval", type=int, dest="update_interval")
    p.add_argument("--eta", type=float)
    p.add_argument("--zeta", type=float)
    p.add_argument("--scale", type=float)
    p.add_argument("--variance-mode", choices=("abs", "clip"), dest="variance_mode")
    p.add_argument("--no-recovery", action="store_false", dest="recovery_enabled", default=None)
    p.add_argument("--no-pao", action="store_false", dest="pao_enabled", default=None)
    p.add_argument("--seeds", type=int, help="number of consecutive seeds")
    p.add_argument("--workers", type=int, help="processes for independent seeds (opt-in parallelism)")
    p.add_argument("--warmup", type=int, help="linear learning-rate warmup steps")
    return p


_OVERRIDE_KEYS = (
    "alpha",
    "rank",
    "update_interval",
    "eta",
    "zeta",
    "scale",
    "variance_mode",
    "recovery_enabled",
    "pao_enabled",
    "seeds",
    "workers",
    "warmup",
)


def _configure_logging() -> None:
    level_name = os.environ.get("SUBTRACK_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _summarize(spec, result) -> str:
    exp = spec.experiment
    if exp == "ackley":
        parts = [f"{r.optimizer}@sf={r.scale_factor:g} f={r.final_f:.4g} max_jump={r.max_jump:.4g}" for r in result]
        return "ackley: " + "; ".join(parts)
    if exp == "contraction":
        return (
            f"contraction: ratio={result.ratio:.3e} monotone={result.monotone_after_burn_in} "
            f"factor fit={result.fitted_factor():.6f} predicted={result.predicted_factor:.6f}"
        )
    if exp == "mlp":
        by_opt = {}
        for run in result:
            by_opt.setdefault(run.label, []).append(run.final_loss)
        parts = [f"{k} final={sorted(v)[len(v) // 2]:.4g}" for k, v in by_opt.items()]
        return "mlp: " + "; ".join(parts)
    if exp == "ablation":
        meds = "; ".join(f"{k}={result.median(k):.4g}" for k in result.runs)
        ok = all(result.orderings().values())
        return f"ablation: median final loss {meds}; ordering {'holds' if ok else 'violated'}"
    slopes = "; ".join(f"r={r} tracking={result.slope('tracking', r):.3f} svd={result.slope('svd', r):.3f}" for r in result.ranks)
    return f"complexity: log-log slopes {slopes}"


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        file_values = read_config_file(args.config) if args.config is not None else None
        overrides = {k: getattr(args, k) for k in _OVERRIDE_KEYS if getattr(args, k) is not None}
        out = args.out if args.out is not None else Path(f"{args.experiment}.csv")
        spec = build_spec(
            args.experiment,
            optimizer=args.optimizer,
            steps=args.steps,
            seed=args.seed,
            output_path=out,
            file_values=file_values,
            overrides=overrides,
        )
        for path in (out, args.step_log):
            if path is not None:
                # Fail fast on an unwritable destination, before any work.
                with open(path, "a", encoding="utf-8"):
                    pass
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (UsageError, ValueError, OSError) as exc:
        print(f"subtrack-bench: error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    step_log = StepLogWriter() if args.step_log is not None else None
    try:
        result = run_experiment(spec, step_log)
        if step_log is not None:
            step_log.save(args.step_log)
    except OSError as exc:
        print(f"subtrack-bench: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - any failure inside the run
        logger.debug("experiment failed", exc_info=True)
        print(f"subtrack-bench: run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"{_summarize(spec, result)} -> {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
