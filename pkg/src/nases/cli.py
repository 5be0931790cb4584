"""Command-line entry point: ``nases <subcommand> [--config run.toml] [--<key> value ...]``.

Every SearchConfig field is also a flag and overrides the config file.
Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, SearchConfig

log = logging.getLogger("nases")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _add_config_flags(p: argparse.ArgumentParser, aliases=None) -> None:
    """One ``--key`` flag per config field, plus short per-command ``aliases``."""
    aliases = {"out_dir": ["--out"], **(aliases or {})}
    p.add_argument("--config", type=Path, help="TOML run configuration")
    g = p.add_argument_group("config overrides")
    for f in dataclasses.fields(SearchConfig):
        flags = ["--" + f.name.replace("_", "-")] + aliases.get(f.name, [])
        if f.type in ("bool", bool):
            g.add_argument(*flags, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        else:
            kind = {"int": int, "float": float, "str": str}[f.type if isinstance(f.type, str) else f.type.__name__]
            g.add_argument(*flags, dest=f.name, type=kind, default=None, metavar=f.name.upper())


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nases", description="Architecture search in a learned embedding space.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("pretrain", help="pretrain the architecture autoencoder")
    _add_config_flags(p, {"pretrain_epochs": ["--epochs"], "pretrain_seed": ["--seed"]})

    p = sub.add_parser("search", help="run the embedding-space search loop")
    _add_config_flags(p, {"search_seed": ["--seed"]})
    p.add_argument("--resume", action="store_true", help="continue from the run directory checkpoint")

    p = sub.add_parser("final-train", help="retrain an architecture with the final budget")
    _add_config_flags(p)
    p.add_argument("--arch", help="architecture JSON or path to it (default: <out_dir>/best_arch.json)")

    p = sub.add_parser("eval-arch", help="evaluate one architecture with the configured evaluator")
    _add_config_flags(p)
    p.add_argument("--arch", required=True, help="architecture JSON or path to it")

    p = sub.add_parser("enumerate", help="brute-force a small space to CSV")
    _add_config_flags(p)
    p.add_argument("--output", "-o", type=Path, help="CSV path (default: stdout)")

    p = sub.add_parser("report", help="summarize a run directory")
    p.add_argument("run_dir", type=Path)
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("--output", "-o", type=Path, help="write here instead of stdout")
    return parser


def resolve_config(args) -> SearchConfig:
    if args.config is not None:
        if not args.config.is_file():
            raise UsageError(f"config file not found: {args.config}")
        cfg = SearchConfig.load(args.config)
    else:
        cfg = SearchConfig()
    overrides = {
        f.name: getattr(args, f.name)
        for f in dataclasses.fields(SearchConfig)
        if getattr(args, f.name, None) is not None
    }
    return cfg.replace(**overrides) if overrides else cfg


def _read_arch(text: str):
    from .space import Architecture

    path = Path(text)
    if not text.lstrip().startswith("{") and path.is_file():
        text = path.read_text()
    try:
        return Architecture.from_json(text)
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"bad architecture: {exc}") from exc


def _emit(text: str, output: Path | None) -> None:
    if output is None:
        sys.stdout.write(text)
    else:
        from .nn.params import atomic_write

        atomic_write(output, text)


def cmd_pretrain(args, cfg) -> None:
    from .search import run_pretrain

    _, report = run_pretrain(cfg)
    print(json.dumps({k: v for k, v in report.to_dict().items() if "curve" not in k}, indent=2))


def cmd_search(args, cfg) -> None:
    from .search import run_search

    report = run_search(cfg, resume=args.resume)
    print(json.dumps({"best_reward": report.best_reward, "best_architecture": report.best_architecture.to_dict()}))


def cmd_final_train(args, cfg) -> None:
    from .search import run_final

    src = args.arch or str(cfg.out / "best_arch.json")
    if args.arch is None and not Path(src).is_file():
        raise UsageError(f"no --arch given and {src} does not exist")
    arch = _read_arch(src)
    arch.check(cfg.space)
    r = run_final(cfg, arch, out=cfg.out)
    print(json.dumps({"value": r.value, **{k: v for k, v in r.metadata.items() if "curve" not in k}}))


def cmd_eval_arch(args, cfg) -> None:
    from .search import make_evaluator

    arch = _read_arch(args.arch)
    arch.check(cfg.space)
    r = make_evaluator(cfg).evaluate(arch, cfg.budget)
    print(json.dumps({"value": r.value, **{k: v for k, v in r.metadata.items() if "curve" not in k}}))


def cmd_enumerate(args, cfg) -> None:
    from .search import make_evaluator
    from .space import enumerate_space

    archs = enumerate_space(cfg.space)
    ev = make_evaluator(cfg)
    rows = [["arch_json", "reward"]]
    for a in archs:
        rows.append([a.to_json(), repr(float(ev.evaluate(a, cfg.budget).value))])
    buf = _csv_text(rows)
    _emit(buf, args.output)


def _csv_text(rows) -> str:
    import io

    out = io.StringIO()
    csv.writer(out, lineterminator="\n").writerows(rows)
    return out.getvalue()


def cmd_report(args) -> None:
    run = args.run_dir
    records = run / "records.csv"
    if not records.is_file():
        raise UsageError(f"{run} has no records.csv")
    with open(records, newline="") as fh:
        rows = list(csv.DictReader(fh))
    rewards = [float(r["reward"]) for r in rows]
    best_i = max(range(len(rewards)), key=rewards.__getitem__) if rewards else None
    if args.format == "csv":
        out, best = [["iter", "reward", "best_so_far"]], float("-inf")
        for r, v in zip(rows, rewards):
            best = max(best, v)
            out.append([r["iter"], repr(v), repr(best)])
        _emit(_csv_text(out), args.output)
        return
    summary = {
        "run_dir": str(run),
        "iterations": len(rows),
        "best_reward": rewards[best_i] if rewards else None,
        "best_iteration": int(rows[best_i]["iter"]) if rewards else None,
        "best_architecture": json.loads(rows[best_i]["arch_json"]) if rewards else None,
        "mean_reward": sum(rewards) / len(rewards) if rewards else None,
        "distinct_architectures": len({r["arch_json"] for r in rows}),
    }
    for name in ("report.json", "final.json"):
        if (run / name).is_file():
            summary[name.removesuffix(".json")] = json.loads((run / name).read_text())
    _emit(json.dumps(summary, indent=2) + "\n", args.output)


COMMANDS = {
    "pretrain": cmd_pretrain,
    "search": cmd_search,
    "final-train": cmd_final_train,
    "eval-arch": cmd_eval_arch,
    "enumerate": cmd_enumerate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
        if args.command == "report":
            cmd_report(args)
        else:
            cfg = resolve_config(args)
            COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"nases: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except Exception as exc:
        log.debug("failure", exc_info=True)
        print(f"nases: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
