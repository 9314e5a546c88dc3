"""From a fixed version to a short list of candidate commits.

Steps, per vulnerability:

1. match each fixed-version hint to a repository tag,
2. take the commits between that tag and the release before it,
3. count in how many of those ranges each (normalized) commit message
   appears,
4. keep the commits whose message reaches the highest count.

Backported fixes land on every maintained release line with the same message
(plus a cherry-pick trailer), so step 4 throws away most of the unrelated
work that happens to share a release range with the fix.
"""

from __future__ import annotations

import json
import logging
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

from rapidfuzz.distance import Levenshtein

from .errors import (
    AmbiguousTagError,
    EmptyCandidateError,
    NoTagError,
    PreconditionError,
    RepoError,
)
from .gitrepo import HEX40, CommitRecord, GitRepo

log = logging.getLogger(__name__)

DEFAULT_MAX_CANDIDATES = 2000

_CORE_RE = re.compile(r"^(\d+(?:[._]\d+)*)(.*)$", re.S)
_SUFFIX_TOKEN = re.compile(r"\d+|[a-z]+")


# ---------------------------------------------------------------------------
# Tags
# ---------------------------------------------------------------------------


def normalize_version(name: str) -> str:
    """Canonical form of a tag or version string.

    Lower-cases, drops ``refs/tags/`` and any prefix before the first digit
    ("v", "release-", "rel/", "project-"), joins numeric components with
    dots and attaches a pre-release suffix with a single dash.  Strings
    without digits are only lower-cased.  The function is idempotent.
    """
    text = name.strip().lower()
    if text.startswith("refs/tags/"):
        text = text[len("refs/tags/"):]
    first = next((i for i, ch in enumerate(text) if ch.isdigit()), None)
    if first is None:
        return text
    m = _CORE_RE.match(text[first:])
    core = m.group(1).replace("_", ".")
    suffix = m.group(2).lstrip("-._+~ ")
    return f"{core}-{suffix}" if suffix else core


def version_key(normalized: str) -> tuple:
    m = _CORE_RE.match(normalized)
    if m is None:
        return (0, (), 0, ((1, normalized),))
    numbers = tuple(int(p) for p in m.group(1).split("."))
    suffix = m.group(2).lstrip("-")
    tokens = tuple((0, int(t)) if t.isdigit() else (1, t) for t in _SUFFIX_TOKEN.findall(suffix))
    # a bare release sorts after any of its pre-releases
    return (1, numbers, 0 if suffix else 1, tokens)


@dataclass(frozen=True)
class VersionTag:
    name: str
    normalized: str
    commit_hash: str
    tag_date: int

    def __post_init__(self):
        if not HEX40.match(self.commit_hash):
            raise ValueError(f"tag {self.name}: {self.commit_hash!r} is not a full commit id")

    @classmethod
    def make(cls, name: str, commit_hash: str, tag_date: int = 0) -> VersionTag:
        return cls(name, normalize_version(name), commit_hash, int(tag_date))

    @property
    def sort_key(self) -> tuple:
        return (version_key(self.normalized), self.tag_date, self.name)

    @property
    def release_line(self) -> tuple | None:
        key = version_key(self.normalized)
        if not key[0]:
            return None
        numbers = key[1] + (0, 0)
        return numbers[:2]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "normalized": self.normalized,
            "commit_hash": self.commit_hash,
            "tag_date": self.tag_date,
        }

    @classmethod
    def from_dict(cls, d: dict) -> VersionTag:
        return cls(d["name"], d["normalized"], d["commit_hash"], int(d["tag_date"]))


def sort_tags(tags) -> list[VersionTag]:
    return sorted(tags, key=lambda t: t.sort_key)


def as_repo(repo) -> GitRepo:
    return repo if isinstance(repo, GitRepo) else GitRepo(repo)


def list_tags(repo) -> list[VersionTag]:
    repo = as_repo(repo)
    return sort_tags(VersionTag.make(n, h, d) for n, h, d in repo.tag_refs())


def _hint_version(hint) -> str:
    return hint if isinstance(hint, str) else hint.fixed_version


def nearest_tags(version: str, tags, limit: int = 3) -> list[str]:
    target = normalize_version(version)
    scored = sorted(
        tags, key=lambda t: (Levenshtein.normalized_distance(target, t.normalized), t.sort_key)
    )
    return [t.name for t in scored[:limit]]


def match_fixed_tag(hint, tags) -> VersionTag:
    """Resolve a fixed-version hint (or bare version string) to one tag.

    Tried in order: exact tag name, equal normalized form, then a substring
    of a normalized tag that starts a component and ends one (so "2.3"
    never matches "2.2.3" or "12.3", but does match "2.3.1").
    """
    tags = sort_tags(tags)
    if not tags:
        raise PreconditionError("cannot match a fixed version against an empty tag list")
    version = _hint_version(hint).strip()

    for tag in tags:
        if tag.name == version:
            return tag

    target = normalize_version(version)
    same = [t for t in tags if t.normalized == target]
    if same:
        # prefer the tag spelled closest to the hint, e.g. "v1.2" over "release-1.2"
        return min(same, key=lambda t: (abs(len(t.name) - len(version)), t.sort_key))

    pattern = re.compile(r"(?<![0-9.])" + re.escape(target) + r"(?![0-9])")
    hits = [t for t in tags if pattern.search(t.normalized)]
    if len(hits) == 1:
        return hits[0]
    if len(hits) > 1:
        names = [t.name for t in hits]
        raise AmbiguousTagError(f"version {version!r} matches several tags: {', '.join(names)}", names)
    nearest = nearest_tags(version, tags)
    raise NoTagError(f"no tag matches version {version!r}; nearest: {', '.join(nearest)}", nearest)


def previous_tag(fixed: VersionTag, tags) -> VersionTag | None:
    """The release before ``fixed``, preferring its own major.minor line.

    Tags pointing at the same commit as ``fixed`` are skipped, since they
    would make the range empty.
    """
    ordered = sort_tags(tags)
    earlier = [t for t in ordered if t.sort_key < fixed.sort_key and t.commit_hash != fixed.commit_hash]
    if not earlier:
        return None
    line = fixed.release_line
    same_line = [t for t in earlier if line is not None and t.release_line == line]
    return (same_line or earlier)[-1]


def next_tag(fixed: VersionTag, tags) -> VersionTag | None:
    ordered = sort_tags(tags)
    later = [t for t in ordered if t.sort_key > fixed.sort_key and t.commit_hash != fixed.commit_hash]
    if not later:
        return None
    line = fixed.release_line
    same_line = [t for t in later if line is not None and t.release_line == line]
    return (same_line or later)[0]


def order_commits(repo: GitRepo, hashes: list[str]) -> list[CommitRecord]:
    """Commit records sorted by commit date; topological order breaks ties."""
    records = repo.commits(hashes)
    position = {h: i for i, h in enumerate(hashes)}
    return sorted(records, key=lambda c: (c.commit_date, position[c.hash]))


def commits_between(repo, newer: VersionTag, older: VersionTag | None) -> list[CommitRecord]:
    repo = as_repo(repo)
    hashes = repo.rev_list(newer.commit_hash, older.commit_hash if older else None)
    return order_commits(repo, hashes)


def commit_range(repo, fixed: VersionTag, tags) -> tuple[VersionTag | None, list[CommitRecord]]:
    if fixed not in tags:
        raise PreconditionError(f"tag {fixed.name} is not among the given tags")
    prior = previous_tag(fixed, tags)
    return prior, commits_between(repo, fixed, prior)


# ---------------------------------------------------------------------------
# Cross-filtering
# ---------------------------------------------------------------------------

_CHERRY_RE = re.compile(r"^\s*\(cherry picked from commit [0-9a-f]+\)\s*$", re.I | re.M)
_TRAILER_RE = re.compile(r"^\s*(signed-off-by|reviewed-by):.*$", re.I | re.M)


def normalize_message(message: str) -> str:
    text = _CHERRY_RE.sub("", message)
    text = _TRAILER_RE.sub("", text)
    return " ".join(text.split()).casefold()


@dataclass
class FilterTrace:
    frequencies: dict[str, int] = field(default_factory=dict)
    max_frequency: int = 0
    cross_filtered: bool = False
    cap: int | None = None
    dropped: int = 0

    def to_dict(self) -> dict:
        return {
            "frequencies": dict(self.frequencies),
            "max_frequency": self.max_frequency,
            "cross_filtered": self.cross_filtered,
            "cap": self.cap,
            "dropped": self.dropped,
        }

    @classmethod
    def from_dict(cls, d: dict) -> FilterTrace:
        return cls(dict(d["frequencies"]), d["max_frequency"], d["cross_filtered"], d.get("cap"), d.get("dropped", 0))


@dataclass
class CandidateSet:
    cve_id: str
    repo: str
    version_pairs: list[tuple[VersionTag | None, VersionTag]]
    commits: list[CommitRecord]
    filter_trace: FilterTrace

    @property
    def hashes(self) -> list[str]:
        return [c.hash for c in self.commits]

    def to_dict(self) -> dict:
        return {
            "cve_id": self.cve_id,
            "repo": self.repo,
            "version_pairs": [
                [p.to_dict() if p else None, f.to_dict()] for p, f in self.version_pairs
            ],
            "commits": [c.to_dict() for c in self.commits],
            "filter_trace": self.filter_trace.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> CandidateSet:
        return cls(
            cve_id=d["cve_id"],
            repo=d["repo"],
            version_pairs=[
                (VersionTag.from_dict(p) if p else None, VersionTag.from_dict(f))
                for p, f in d["version_pairs"]
            ],
            commits=[CommitRecord.from_dict(c) for c in d["commits"]],
            filter_trace=FilterTrace.from_dict(d["filter_trace"]),
        )


def cross_filter(ranges, cve_id: str = "", repo: str = "", version_pairs=None) -> CandidateSet:
    """Keep the commits whose normalized message occurs in the most ranges.

    ``ranges`` is a list of (hint, commits) pairs.  A message counts once
    per range however often it repeats inside that range.
    """
    ranges = list(ranges)
    if not ranges:
        raise PreconditionError("cross_filter needs at least one range")
    if not any(commits for _, commits in ranges):
        raise EmptyCandidateError(f"{cve_id or 'vulnerability'}: every version range is empty")

    seen_in: dict[str, set[int]] = defaultdict(set)
    first_seen: dict[str, tuple[int, CommitRecord]] = {}
    for idx, (_, commits) in enumerate(ranges):
        for commit in commits:
            seen_in[normalize_message(commit.message)].add(idx)
            if commit.hash not in first_seen:
                first_seen[commit.hash] = (len(first_seen), commit)

    frequencies = {h: len(seen_in[normalize_message(c.message)]) for h, (_, c) in first_seen.items()}
    top = max(frequencies.values())
    kept = [c for h, (_, c) in first_seen.items() if frequencies[h] == top]
    kept.sort(key=lambda c: (c.commit_date, first_seen[c.hash][0]))

    trace = FilterTrace(frequencies, top, cross_filtered=len(ranges) > 1)
    return CandidateSet(cve_id, repo, list(version_pairs or []), kept, trace)


def resolve_hints(hints, tags) -> tuple[list[tuple], list[Exception]]:
    """Match every hint; returns ([(hint, tag)], [errors]) with duplicate tags collapsed."""
    matched, failures, seen = [], [], set()
    for hint in hints:
        try:
            tag = match_fixed_tag(hint, tags)
        except (NoTagError, AmbiguousTagError) as exc:
            log.info("hint %s did not resolve: %s", _hint_version(hint), exc)
            failures.append(exc)
            continue
        if tag.name not in seen:
            seen.add(tag.name)
            matched.append((hint, tag))
    return matched, failures


def _no_match(cve_id: str, failures) -> NoTagError:
    nearest = []
    for exc in failures:
        for name in getattr(exc, "nearest", []) or getattr(exc, "candidates", []):
            if name not in nearest:
                nearest.append(name)
    detail = "; ".join(str(e) for e in failures)
    return NoTagError(f"{cve_id}: no fixed-version hint matched a tag ({detail})", nearest)


def build_candidates(record, hints, repo, max_candidates: int = DEFAULT_MAX_CANDIDATES,
                     repo_name: str | None = None) -> CandidateSet:
    hints = list(hints)
    if not hints:
        raise PreconditionError(f"{record.cve_id}: no fixed-version hints to resolve")
    repo = as_repo(repo)
    tags = list_tags(repo)
    if not tags:
        raise NoTagError(f"{record.cve_id}: repository {repo.path} has no tags")

    matched, failures = resolve_hints(hints, tags)
    if not matched:
        raise _no_match(record.cve_id, failures)

    ranges, pairs = [], []
    for hint, fixed in matched:
        prior, commits = commit_range(repo, fixed, tags)
        ranges.append((hint, commits))
        pairs.append((prior, fixed))

    name = repo_name or Path(repo.path).name
    cs = cross_filter(ranges, cve_id=record.cve_id, repo=name, version_pairs=pairs)
    cs.filter_trace.cap = max_candidates
    if len(cs.commits) > max_candidates:
        cs.filter_trace.dropped = len(cs.commits) - max_candidates
        log.warning("%s: keeping the %d most recent of %d candidates",
                    record.cve_id, max_candidates, len(cs.commits))
        cs.commits = cs.commits[-max_candidates:]
    return cs


def range_commit_count(record, hints, repo) -> int:
    """Number of distinct commits in all matched version ranges, before filtering."""
    repo = as_repo(repo)
    tags = list_tags(repo)
    if not tags:
        raise NoTagError(f"{record.cve_id}: repository {repo.path} has no tags")
    matched, failures = resolve_hints(list(hints), tags)
    if not matched:
        raise _no_match(record.cve_id, failures)
    seen = set()
    for _, fixed in matched:
        prior = previous_tag(fixed, tags)
        seen.update(repo.rev_list(fixed.commit_hash, prior.commit_hash if prior else None))
    return len(seen)


__all__ = [
    "CandidateSet", "FilterTrace", "VersionTag", "build_candidates", "commit_range",
    "commits_between", "cross_filter", "list_tags", "match_fixed_tag", "nearest_tags",
    "next_tag", "normalize_message", "normalize_version", "previous_tag", "range_commit_count",
    "sort_tags", "RepoError",
]
