#!/usr/bin/env python3
"""
CLI экспериментов SGD-PIWA.

    python main.py run        configs/hinge_convex.cfg
    python main.py sweep      configs/hinge_convex.cfg --workers 4
    python main.py stability  configs/stability_logistic.cfg
    python main.py stagewise  configs/stagewise_ls.cfg
    python main.py gen-data   configs/stagewise_ls.cfg data/ls.svm
    python main.py fit-rate   points.csv

Коды выхода: 0 — успех, 2 — ошибка конфигурации, 3 — ошибка данных,
4 — численный сбой, 1 — непредвиденная ошибка.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

from pydantic import ValidationError

from config import LOG_LEVEL, load_experiment_config
from errors import PiwaError
from experiments import (
    cmd_gen_data,
    cmd_run,
    cmd_stability,
    cmd_stagewise,
    cmd_sweep,
    fit_rate,
    read_rate_points,
)
from logger import get_logger, set_level

log = get_logger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="piwa", description="Эксперименты SGD с полиномиальным взвешенным усреднением")
    parser.add_argument("--log-level", default=LOG_LEVEL, choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("run", "по трассе на (seed, схема, α) с первым η₁"),
        ("sweep", "параллельный свип по сетке η₁"),
        ("stability", "сопряжённые прогоны на соседних датасетах"),
        ("stagewise", "стадийный алгоритм для слабо выпуклых задач с PL"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("config", type=Path)
        cmd.add_argument("--out", type=Path, default=None, help="каталог результатов (иначе output.path)")
        if name in ("sweep", "stability"):
            cmd.add_argument("--workers", type=int, default=None)

    gen = sub.add_parser("gen-data", help="синтетический датасет в LIBSVM")
    gen.add_argument("config", type=Path)
    gen.add_argument("path", type=Path)

    fit = sub.add_parser("fit-rate", help="наклон log gap от log T по CSV с колонками T и gap")
    fit.add_argument("points", type=Path)
    fit.add_argument("--skip-nonpositive", action="store_true")
    return parser


def dispatch(args: argparse.Namespace) -> None:
    if args.command == "fit-rate":
        result = fit_rate(read_rate_points(args.points), skip_nonpositive=args.skip_nonpositive)
        print(f"slope={result.slope!r} intercept={result.intercept!r} r2={result.r2!r} skipped={result.skipped}")
        return

    config = load_experiment_config(args.config)
    if args.command == "run":
        cmd_run(config, args.out)
    elif args.command == "sweep":
        cmd_sweep(config, args.out, args.workers)
    elif args.command == "stability":
        cmd_stability(config, args.out, args.workers)
    elif args.command == "stagewise":
        cmd_stagewise(config, args.out)
    elif args.command == "gen-data":
        cmd_gen_data(config, args.path)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    set_level(args.log_level)
    try:
        dispatch(args)
    except PiwaError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code
    except ValidationError as exc:
        log.error("Некорректная конфигурация: %s", exc)
        return 2
    except Exception:
        log.exception("Непредвиденная ошибка")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
