"""End-to-end localisation for one CVE and the files a run leaves behind."""

from __future__ import annotations

import hashlib
import json
import logging
import re
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

from filelock import FileLock

from . import __version__
from .config import RunConfig
from .errors import NotFoundError, RepoError
from .gitrepo import GitRepo
from .llm_gateway import LiveGateway, ReplayGateway, ScriptedGateway
from .prompt_forge import TemplateSet
from .repo_miner import CandidateSet, build_candidates, list_tags, range_commit_count
from .result_expander import PatchResult, build_search_db, expand
from .vote_engine import BatchSelector, VoteTally, run_votes
from .vuln_intel import VulnClient, VulnRecord, extract_version_hints, llm_extract_version_hints, load_dataset

log = logging.getLogger(__name__)


def make_gateway(config: RunConfig):
    common = {"model_id": config.model_id, "cache_dir": config.cache_dir,
              "use_cache": config.use_cache, "max_in_flight": 4}
    if config.provider == "mock":
        return ScriptedGateway.from_file(config.mock_script, **common)
    if config.provider == "replay":
        common["use_cache"] = True
        return ReplayGateway(**common)
    return LiveGateway(base_url=config.llm_base_url, temperature=config.temperature, **common)


# ---------------------------------------------------------------------------
# Repositories
# ---------------------------------------------------------------------------

_URL_RE = re.compile(r"^(?:[a-z][a-z0-9+.-]*://|git@)", re.I)


def is_remote(spec: str) -> bool:
    return bool(_URL_RE.match(spec))


def clone_dir_name(url: str) -> str:
    path = re.sub(r"^(?:[a-z][a-z0-9+.-]*://[^/]+/|git@[^:]+:)", "", url.strip(), flags=re.I)
    parts = [p for p in path.rstrip("/").split("/") if p]
    if not parts:
        raise RepoError(f"cannot derive a repository name from {url!r}")
    name = parts[-1].removesuffix(".git")
    owner = parts[-2] if len(parts) > 1 else "_"
    return f"{owner}__{name}"


def acquire_repo(spec: str, cache_dir, refresh: bool = False) -> GitRepo:
    """Open a local clone, or clone/refresh ``spec`` under the cache when it is a URL."""
    if not is_remote(spec):
        return GitRepo(spec)
    target = Path(cache_dir) / "repos" / clone_dir_name(spec)
    target.parent.mkdir(parents=True, exist_ok=True)
    with FileLock(str(target) + ".lock"):
        if not target.exists():
            cmd = ["git", "clone", "--quiet", spec, str(target)]
        elif refresh:
            cmd = ["git", "-C", str(target), "fetch", "--quiet", "--tags", "--prune", "origin"]
        else:
            cmd = None
        if cmd:
            proc = subprocess.run(cmd, capture_output=True, text=True)
            if proc.returncode != 0:
                raise RepoError(f"{' '.join(cmd[:3])} failed: {proc.stderr.strip()}")
    return GitRepo(target)


def repo_label(repo: GitRepo, spec: str | None = None) -> str:
    if spec and is_remote(spec):
        return clone_dir_name(spec).replace("__", "/")
    return repo.path.resolve().name


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------


def load_record(cve_id: str, config: RunConfig, client: VulnClient | None = None) -> VulnRecord:
    if config.dataset:
        records, _ = load_dataset(config.dataset)
        for record in records:
            if record.cve_id == cve_id.strip().upper():
                return record
    client = client or VulnClient(config.cache_dir, config.nvd_base_url, config.osv_base_url)
    try:
        return client.fetch(cve_id, config.source)
    except NotFoundError as exc:
        if config.dataset:
            raise NotFoundError(f"{exc}; also absent from {config.dataset}") from exc
        raise


def resolve_hints(record: VulnRecord, gateway, templates: TemplateSet | None = None):
    hints = extract_version_hints(record)
    if hints:
        return hints
    template = templates.version_extraction if templates else None
    return llm_extract_version_hints(record, gateway, template)


# ---------------------------------------------------------------------------
# locate
# ---------------------------------------------------------------------------


@dataclass
class LocateOutcome:
    record: VulnRecord
    hints: list
    candidates: CandidateSet
    tally: VoteTally
    result: PatchResult
    titles: dict[str, str] = field(default_factory=dict)
    notices: list[str] = field(default_factory=list)
    query_log: list[dict] = field(default_factory=list)
    repo_label: str = ""


def locate(cve_id: str, repo_spec, config: RunConfig, gateway, record: VulnRecord | None = None,
           client: VulnClient | None = None) -> LocateOutcome:
    templates = TemplateSet.load(config.templates)
    record = record or load_record(cve_id, config, client)
    repo = repo_spec if isinstance(repo_spec, GitRepo) else acquire_repo(str(repo_spec), config.cache_dir, config.refresh)
    label = repo_label(repo, None if isinstance(repo_spec, GitRepo) else str(repo_spec))

    hints = resolve_hints(record, gateway, templates)
    candidates = build_candidates(record, hints, repo, config.max_candidates, repo_name=label)
    selector = BatchSelector(gateway, record, templates, repo, config.token_budget, config.max_contexts)
    tally = run_votes(
        candidates, config.rounds, config.batch_size, selector,
        literal=config.literal_algorithm1,
        shuffle_seed=config.seed if config.shuffle else None,
        workers=min(4, config.jobs),
    )

    by_hash = {c.hash: c for c in candidates.commits}
    core = [by_hash[h] for h in tally.winners]
    titles = {c.hash: c.title for c in candidates.commits}
    if core:
        tags = list_tags(repo)
        db: dict[str, object] = {}
        for _, fixed in candidates.version_pairs:
            for commit in build_search_db(repo, fixed, tags):
                db.setdefault(commit.hash, commit)
        ordered = sorted(db.values(), key=lambda c: c.commit_date)
        titles.update({c.hash: c.title for c in ordered})
        result = expand(core, ordered, record)
    else:
        result = PatchResult(record.cve_id, [])
    return LocateOutcome(record, hints, candidates, tally, result, titles,
                         selector.notices, selector.log, label)


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def manifest(outcome: LocateOutcome, config: RunConfig) -> dict:
    templates = TemplateSet.load(config.templates)
    inputs = {
        "record_sha256": _sha256(json.dumps(outcome.record.to_dict(), sort_keys=True).encode()),
        "candidates_sha256": _sha256(outcome.candidates.to_json().encode()),
        "templates_sha256": _sha256(json.dumps(templates.__dict__, sort_keys=True).encode()),
        "repo": outcome.repo_label,
    }
    if config.mock_script:
        inputs["mock_script_sha256"] = _sha256(Path(config.mock_script).read_bytes())
    return {
        "tool": "patchloc",
        "version": __version__,
        "cve_id": outcome.record.cve_id,
        "config": config.snapshot(),
        "inputs": inputs,
        "queries": outcome.query_log,
    }


def summary_text(outcome: LocateOutcome) -> str:
    cs, tally, result = outcome.candidates, outcome.tally, outcome.result
    lines = [f"{outcome.record.cve_id} in {outcome.repo_label}"]
    pairs = ", ".join(
        f"{fixed.name} (after {prior.name if prior else 'start of history'})" for prior, fixed in cs.version_pairs
    )
    lines.append(f"fixed in: {pairs}")
    trace = cs.filter_trace
    lines.append(
        f"candidates: {len(cs.commits)} of {len(trace.frequencies)} commits in range"
        + (f", seen on {trace.max_frequency} release lines" if trace.cross_filtered else "")
    )
    votes = ", ".join(f"{h[:7]} x{n}" for h, n in tally.votes.items()) or "none"
    lines.append(f"votes over {tally.rounds_completed} rounds: {votes}"
                 + (f"; {tally.abstentions} abstained" if tally.abstentions else ""))
    if not result.final_set:
        lines.append("no patch commit identified")
    else:
        lines.append("patch commits:")
        relation = dict(result.expanded)
        for h in result.final_set:
            why = "voted" if h in result.core else relation[h]
            lines.append(f"  {h[:7]}  {why:<20} {outcome.titles.get(h, '')}")
    return "\n".join(lines) + "\n"


def write_outputs(outcome: LocateOutcome, config: RunConfig, out_dir=None) -> Path:
    target = Path(out_dir or config.out_dir) / outcome.record.cve_id
    target.mkdir(parents=True, exist_ok=True)
    (target / "patch_result.json").write_text(outcome.result.to_json(), encoding="utf-8")
    (target / "vote_tally.json").write_text(outcome.tally.to_json(), encoding="utf-8")
    (target / "candidates.json").write_text(outcome.candidates.to_json(), encoding="utf-8")
    (target / "summary.txt").write_text(summary_text(outcome), encoding="utf-8")
    (target / "manifest.json").write_text(
        json.dumps(manifest(outcome, config), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return target


# ---------------------------------------------------------------------------
# stats
# ---------------------------------------------------------------------------


def find_local_repo(repos_dir, slug: str) -> Path | None:
    slug = slug.strip().rstrip("/")
    if is_remote(slug):
        slug = clone_dir_name(slug).replace("__", "/")
    parts = [p for p in slug.split("/") if p]
    if not parts:
        return None
    base = Path(repos_dir)
    options = []
    if len(parts) >= 2:
        options.append(base / f"{parts[-2]}__{parts[-1]}")
        options.append(base / parts[-2] / parts[-1])
    options.append(base / parts[-1])
    for path in options:
        if path.is_dir():
            return path
    return None


def candidate_counts(records, repos_dir) -> tuple[list[int], list[tuple[str, str]]]:
    """Pre-filter range sizes per CVE, plus (cve_id, reason) for each skipped one."""
    counts, skipped = [], []
    for record in records:
        hints = extract_version_hints(record)
        if not hints:
            skipped.append((record.cve_id, "no structured fixed-version information"))
            continue
        path = next((p for h in hints if (p := find_local_repo(repos_dir, h.repo)) is not None), None)
        if path is None:
            skipped.append((record.cve_id, f"no clone of {hints[0].repo} under {repos_dir}"))
            continue
        try:
            counts.append(range_commit_count(record, hints, GitRepo(path)))
        except Exception as exc:  # per-CVE failures are reported, not fatal
            skipped.append((record.cve_id, getattr(exc, "describe", lambda: str(exc))()))
    return counts, skipped
