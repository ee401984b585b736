"""Command line front-end.

Subcommands call the library directly (not the HTTP service), so exit
codes and byte-level output stay deterministic: 0 on success, 2 for
usage errors, 3 for data or model-file problems, 4 for internal errors.
The fitting seed falls back to the OPTIFOREST_SEED environment variable
when --seed is not given.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import re
import sys
import time
from contextlib import contextmanager
from typing import IO, Iterator, Optional, Sequence

from .data import load_csv, minmax_scaled
from .errors import DataError, ModelFormatError
from .evaluation import ablate, rows_to_csv, run_experiment
from .forest import Forest, ForestConfig, fit, load_model, save_model, score_all
from .theory import BranchingDistribution, theory_report

_SEED_ENV = "OPTIFOREST_SEED"


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _epsilon_token(text: str):
    """Cut level: a positive integer, 'auto', or e2..e8 for round(e^k)."""
    if text == "auto":
        return "auto"
    if re.fullmatch(r"e[2-8]", text):
        return round(math.e ** int(text[1:]))
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"epsilon must be a positive integer, 'auto', or e2..e8, got {text!r}"
        )
    if value < 1:
        raise argparse.ArgumentTypeError(f"epsilon must be >= 1, got {value}")
    return value


def _distribution_token(text: str) -> BranchingDistribution:
    if text in ("finite23", "geometric", "factorial"):
        return BranchingDistribution(text)
    if text.startswith("fixed:"):
        raw = text.split(":", 1)[1]
        try:
            v0 = int(raw)
        except ValueError:
            raise argparse.ArgumentTypeError(f"fixed:<v> needs an integer, got {raw!r}")
        if v0 < 2:
            raise argparse.ArgumentTypeError(f"fixed branching needs v >= 2, got {v0}")
        return BranchingDistribution.fixed(v0)
    raise argparse.ArgumentTypeError(
        "distribution must be finite23, geometric, factorial, or fixed:<v>, "
        f"got {text!r}"
    )


def _grid_token(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"grid must be comma-separated integers, got {text!r}"
        )
    if not values:
        raise argparse.ArgumentTypeError("grid must name at least one value")
    return values


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="optiforest",
        description="Isolation forest anomaly detection with optimal multi-fork trees.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    data_parent = argparse.ArgumentParser(add_help=False)
    data_parent.add_argument("--input", required=True, help="CSV file with a header row")
    data_parent.add_argument(
        "--label-col", default=None, help="name of the 0/1 label column, if any"
    )
    data_parent.add_argument(
        "--scale", action="store_true", help="min-max scale each column to [0, 1]"
    )

    config_parent = argparse.ArgumentParser(add_help=False)
    config_parent.add_argument("--trees", type=_positive_int, default=100)
    config_parent.add_argument("--sample-size", type=_positive_int, default=512)
    config_parent.add_argument("--epsilon", type=_epsilon_token, default="auto")
    config_parent.add_argument(
        "--distribution",
        type=_distribution_token,
        default=BranchingDistribution.finite23(),
        help="finite23, geometric, factorial, or fixed:<v>",
    )
    config_parent.add_argument(
        "--mode", choices=("optiforest", "lsh-only"), default="optiforest"
    )
    config_parent.add_argument(
        "--seed", type=int, default=None, help=f"defaults to ${_SEED_ENV} or 0"
    )
    config_parent.add_argument("--jobs", type=_positive_int, default=1)

    p_fit = sub.add_parser(
        "fit", parents=[data_parent, config_parent], help="fit a forest and save it"
    )
    p_fit.add_argument("--out", required=True, help="model file to write")

    p_score = sub.add_parser("score", help="score rows with a saved model")
    p_score.add_argument("--model", required=True, help="model file from fit")
    p_score.add_argument("--input", required=True, help="CSV file with a header row")
    p_score.add_argument("--label-col", default=None, help="label column to drop")
    p_score.add_argument("--scale", action="store_true")
    p_score.add_argument("--out", default=None, help="output file (default stdout)")
    p_score.add_argument("--format", choices=("csv", "json"), default="csv")

    p_eval = sub.add_parser(
        "eval",
        parents=[data_parent, config_parent],
        help="repeated fit/score runs with AUC metrics",
    )
    p_eval.add_argument("--repeats", type=_positive_int, default=15)
    p_eval.add_argument("--out", default=None, help="JSON report file (default stdout)")

    p_ablate = sub.add_parser(
        "ablate",
        parents=[data_parent, config_parent],
        help="sweep one configuration axis",
    )
    p_ablate.add_argument(
        "--axis", required=True, choices=("branching", "epsilon", "sample_size")
    )
    p_ablate.add_argument("--grid", type=_grid_token, default=None)
    p_ablate.add_argument("--repeats", type=_positive_int, default=15)
    p_ablate.add_argument("--out", default=None, help="output file (default stdout)")
    p_ablate.add_argument("--format", choices=("csv", "json"), default="csv")

    p_theory = sub.add_parser(
        "theory", help="report on branching efficiency and the factor laws"
    )
    p_theory.add_argument("--out", default=None, help="JSON file (default stdout)")
    p_theory.add_argument(
        "--curve", action="store_true", help="include efficiency curve samples"
    )

    p_serve = sub.add_parser("serve", help="run the HTTP scoring service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=_positive_int, default=8000)

    return parser


def _resolve_seed(arg_seed: Optional[int]) -> int:
    if arg_seed is not None:
        return arg_seed
    raw = os.environ.get(_SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"{_SEED_ENV} must be an integer, got {raw!r}")


def _config_from_args(args: argparse.Namespace) -> ForestConfig:
    return ForestConfig(
        trees=args.trees,
        sample_size=args.sample_size,
        epsilon=args.epsilon,
        distribution=args.distribution,
        seed=_resolve_seed(args.seed),
        mode=args.mode,
    )


def _load_input(args: argparse.Namespace):
    data = load_csv(args.input, label_column=args.label_col)
    if args.scale:
        data = minmax_scaled(data)
    return data


@contextmanager
def _open_out(path: Optional[str]) -> Iterator[IO[str]]:
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            yield fh


def _cmd_fit(args: argparse.Namespace) -> int:
    data = _load_input(args)
    config = _config_from_args(args)
    started = time.perf_counter()
    forest = fit(data, config, jobs=args.jobs)
    elapsed = time.perf_counter() - started
    save_model(forest, args.out)
    print(
        f"fitted {len(forest.trees)} trees "
        f"(sample size {forest.psi_effective}, cut level {forest.epsilon_used}) "
        f"in {elapsed:.2f}s -> {args.out}"
    )
    return 0


def _write_scores(scores, fmt: str, fh: IO[str]) -> None:
    if fmt == "csv":
        fh.write("row_index,score\n")
        for i, value in enumerate(scores):
            fh.write(f"{i},{float(value)!r}\n")
    else:
        json.dump([float(v) for v in scores], fh)
        fh.write("\n")


def _cmd_score(args: argparse.Namespace) -> int:
    forest: Forest = load_model(args.model)
    data = load_csv(args.input, label_column=args.label_col)
    if args.scale:
        data = minmax_scaled(data)
    scores = score_all(forest, data)
    with _open_out(args.out) as fh:
        _write_scores(scores, args.format, fh)
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    data = _load_input(args)
    config = _config_from_args(args)
    report = run_experiment(data, config, repeats=args.repeats, jobs=args.jobs)
    with _open_out(args.out) as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


def _cmd_ablate(args: argparse.Namespace) -> int:
    data = _load_input(args)
    config = _config_from_args(args)
    rows = ablate(
        data,
        axis=args.axis,
        grid=args.grid,
        config=config,
        repeats=args.repeats,
        jobs=args.jobs,
    )
    with _open_out(args.out) as fh:
        if args.format == "csv":
            rows_to_csv(rows, fh)
        else:
            json.dump(rows, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


def _cmd_theory(args: argparse.Namespace) -> int:
    report = theory_report()
    if args.curve:
        from .theory import efficiency_curve

        curve = efficiency_curve(area=6.0)
        report["curve"] = {
            "area": 6.0,
            "points": [[float(v), float(eta)] for v, eta in curve],
        }
    with _open_out(args.out) as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return 0


_COMMANDS = {
    "fit": _cmd_fit,
    "score": _cmd_score,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "theory": _cmd_theory,
    "serve": _cmd_serve,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (DataError, ModelFormatError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except BrokenPipeError:
        return 0
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
