"""Command-line entry point.

    patchloc locate CVE-2020-5236 --repo path/or/url [--dataset records.ndjson]
    patchloc eval predictions.ndjson --k 1 3 5
    patchloc stats records.ndjson --repos-dir clones/
    patchloc cache inspect|clear

Exit status: 0 on success, 2 when ``locate`` finishes without finding a
patch, 1 on any error.
"""

from __future__ import annotations

import argparse
import logging
import shutil
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .config import PROVIDERS, build_config
from .errors import PatchLocError
from .eval_harness import candidate_stats, emit_report, load_predictions, score
from .pipeline import candidate_counts, locate, make_gateway, write_outputs, summary_text
from .vuln_intel import SOURCES, load_dataset

log = logging.getLogger("patchloc")

EXIT_OK, EXIT_ERROR, EXIT_EMPTY = 0, 1, 2
_FORMATS = {"json": "json", "md": "markdown", "csv": "csv"}


def _global_options() -> argparse.ArgumentParser:
    # suppressed defaults: only flags actually given override the config file,
    # and a flag placed before the subcommand is not reset by the subcommand parser
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    g = p.add_argument_group("run options")
    g.add_argument("--config", help="flat key = value config file")
    g.add_argument("--cache-dir")
    g.add_argument("--out-dir")
    g.add_argument("--seed", type=int)
    g.add_argument("--shuffle", action="store_true",
                   help="shuffle candidates each round, keyed by --seed and the round index")
    g.add_argument("--mock-script", help="NDJSON script of canned model answers (implies --provider mock)")
    g.add_argument("--provider", choices=PROVIDERS)
    g.add_argument("--model", dest="model_id")
    g.add_argument("--temperature", type=float)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--rounds", type=int)
    g.add_argument("--literal-algorithm1", action="store_true",
                   help="keep every final-stage survivor instead of asking once more")
    g.add_argument("--jobs", type=int)
    g.add_argument("--no-cache", dest="use_cache", action="store_false")
    g.add_argument("--refresh", action="store_true", help="re-fetch cloned repositories")
    g.add_argument("--templates", help="directory with alternative prompt templates")
    g.add_argument("--token-budget", type=int)
    g.add_argument("--max-candidates", type=int)
    g.add_argument("--dataset", help="NDJSON vulnerability records to look CVEs up in")
    g.add_argument("--source", choices=SOURCES)
    g.add_argument("-v", "--verbose", action="count")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_options()
    parser = argparse.ArgumentParser(prog="patchloc", description=__doc__.split("\n\n")[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("locate", parents=[common], help="find the patch commits for CVEs")
    p.add_argument("cve_ids", nargs="+", metavar="CVE")
    p.add_argument("--repo", required=True, help="local clone or clone URL")

    p = sub.add_parser("eval", parents=[common], help="score predictions against ground truth")
    p.add_argument("predictions")
    p.add_argument("--k", type=int, nargs="*", default=[], help="Top-K cutoffs to report")

    p = sub.add_parser("stats", parents=[common], help="candidate-count statistics over a dataset")
    p.add_argument("dataset_path", metavar="DATASET")
    p.add_argument("--repos-dir", required=True)

    p = sub.add_parser("cache", parents=[common], help="inspect or clear the cache")
    p.add_argument("action", choices=("inspect", "clear"))
    p.add_argument("--what", choices=("llm", "vuln", "repos", "all"), default="all")
    return parser


_CONFIG_KEYS = (
    "cache_dir", "out_dir", "seed", "shuffle", "mock_script", "provider", "model_id", "temperature",
    "batch_size", "rounds", "literal_algorithm1", "jobs", "use_cache", "refresh", "templates",
    "token_budget", "max_candidates", "dataset", "source",
)


def config_from_args(args):
    overrides = {k: getattr(args, k, None) for k in _CONFIG_KEYS}
    if overrides.get("mock_script") and not overrides.get("provider"):
        overrides["provider"] = "mock"
    return build_config(getattr(args, "config", None), overrides)


def _fail(exc: Exception) -> int:
    text = exc.describe() if isinstance(exc, PatchLocError) else f"error: {exc}"
    print(text, file=sys.stderr)
    return EXIT_ERROR


def cmd_locate(args, config) -> int:
    gateway = make_gateway(config)

    def one(cve_id):
        try:
            outcome = locate(cve_id, args.repo, config, gateway)
        except (PatchLocError, OSError) as exc:
            return cve_id, exc, None
        write_outputs(outcome, config)
        return cve_id, None, outcome

    jobs = max(1, min(config.jobs, len(args.cve_ids)))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, args.cve_ids))
    else:
        results = [one(c) for c in args.cve_ids]

    status = EXIT_OK
    for cve_id, exc, outcome in results:
        if exc is not None:
            print(f"{cve_id}: ", end="", file=sys.stderr)
            _fail(exc)
            status = EXIT_ERROR
            continue
        sys.stdout.write(summary_text(outcome))
        if not outcome.result.final_set and status == EXIT_OK:
            status = EXIT_EMPTY
    return status


def _write_reports(report, out_dir: Path, stem: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for ext, fmt in _FORMATS.items():
        (out_dir / f"{stem}.{ext}").write_text(emit_report(report, fmt), encoding="utf-8")


def cmd_eval(args, config) -> int:
    try:
        records = load_predictions(args.predictions)
        if not records:
            raise ValueError(f"{args.predictions}: no predictions")
        reports = [score(records)] + [score(records, k) for k in args.k]
    except (PatchLocError, OSError, ValueError) as exc:
        return _fail(exc)
    out = Path(config.out_dir)
    for report in reports:
        stem = "report" if report.k is None else f"report_top{report.k}"
        _write_reports(report, out, stem)
        sys.stdout.write(emit_report(report, "markdown").split("\n\n")[0] + "\n")
    return EXIT_OK


def cmd_stats(args, config) -> int:
    try:
        records, errors = load_dataset(args.dataset_path)
        if not records:
            raise ValueError(f"{args.dataset_path}: dataset is empty")
        counts, skipped = candidate_counts(records, args.repos_dir)
        if not counts:
            raise ValueError(f"no CVE could be resolved ({len(skipped)} skipped)")
    except (PatchLocError, OSError, ValueError) as exc:
        return _fail(exc)
    for cve_id, reason in skipped:
        print(f"skipped {cve_id}: {reason}", file=sys.stderr)
    stats = candidate_stats(counts)
    stats.skipped = len(skipped)
    _write_reports(stats, Path(config.out_dir), "stats")
    sys.stdout.write(emit_report(stats, "markdown"))
    return EXIT_OK


def _dir_usage(path: Path) -> tuple[int, int]:
    files = [p for p in path.rglob("*") if p.is_file()]
    return len(files), sum(p.stat().st_size for p in files)


def cmd_cache(args, config) -> int:
    root = Path(config.cache_dir)
    parts = ("llm", "vuln", "repos") if args.what == "all" else (args.what,)
    for name in parts:
        path = root / name
        if args.action == "inspect":
            n, size = _dir_usage(path) if path.exists() else (0, 0)
            print(f"{name:<6} {n:>7} files {size:>12} bytes  {path}")
        elif path.exists():
            shutil.rmtree(path)
            print(f"removed {path}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(getattr(args, "verbose", 0), 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        config = config_from_args(args)
    except (PatchLocError, OSError, ValueError) as exc:
        return _fail(exc)
    handler = {"locate": cmd_locate, "eval": cmd_eval, "stats": cmd_stats, "cache": cmd_cache}[args.command]
    return handler(args, config)


if __name__ == "__main__":
    raise SystemExit(main())
