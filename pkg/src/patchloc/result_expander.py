"""Grow the voted patch set with commits that are clearly related to it.

A fix often exists as several commits: the original, its backports, and
follow-ups that mention the same CVE or issue.  After voting, commits from
the releases around the fixed version are compared against the winners and
added when one of three relations holds, checked in this order:

``same_diff``
    the same changed lines in at least one shared file;
``message_containment``
    one commit's title or message contains the other's;
``cve_or_issue_ref``
    the message cites the CVE id or an issue id taken from the
    vulnerability's reference URLs.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from .errors import PreconditionError
from .repo_miner import as_repo, commits_between, next_tag, normalize_message, previous_tag

SAME_DIFF = "same_diff"
MESSAGE_CONTAINMENT = "message_containment"
CVE_OR_ISSUE_REF = "cve_or_issue_ref"
RELATIONS = (SAME_DIFF, MESSAGE_CONTAINMENT, CVE_OR_ISSUE_REF)

# shorter texts ("fix", "update docs") are contained in too many messages
MIN_CONTAINMENT_CHARS = 10


@dataclass
class PatchResult:
    cve_id: str
    core: list[str]
    expanded: list[tuple[str, str]] = field(default_factory=list)

    @property
    def final_set(self) -> list[str]:
        return list(dict.fromkeys(self.core + [h for h, _ in self.expanded]))

    def to_dict(self) -> dict:
        return {
            "cve_id": self.cve_id,
            "core": list(self.core),
            "expanded": [{"hash": h, "relation": r} for h, r in self.expanded],
            "final_set": self.final_set,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> PatchResult:
        return cls(d["cve_id"], list(d["core"]), [(e["hash"], e["relation"]) for e in d["expanded"]])


def build_search_db(repo, fixed, tags) -> list:
    """Commits from two releases before ``fixed`` up to the release after it."""
    repo = as_repo(repo)
    prior = previous_tag(fixed, tags)
    floor = previous_tag(prior, tags) if prior is not None else None
    older = commits_between(repo, fixed, floor if prior is not None else None)
    after = next_tag(fixed, tags)
    newer = commits_between(repo, after, fixed) if after is not None else []
    merged = {c.hash: c for c in older + newer}
    return sorted(merged.values(), key=lambda c: c.commit_date)


def diff_signature(commit) -> dict[str, str]:
    """Per-file text of the changed lines with whitespace runs collapsed."""
    per_file: dict[str, list[str]] = {}
    for hunk in commit.hunks:
        lines = per_file.setdefault(hunk.file, [])
        lines.extend("-" + " ".join(t.split()) for _, t in hunk.removed_lines)
        lines.extend("+" + " ".join(t.split()) for _, t in hunk.added_lines)
    return {f: "\n".join(lines) for f, lines in per_file.items() if lines}


def _contains(a: str, b: str) -> bool:
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    return len(short) >= MIN_CONTAINMENT_CHARS and short in long_


_GITHUB_ISSUE = re.compile(r"/(?:-/)?(?:issues|pull|pulls|merge_requests)/(\d+)", re.I)
_JIRA_KEY = re.compile(r"/browse/([A-Z][A-Z0-9]+-\d+)", re.I)
_BUGZILLA = re.compile(r"[?&]id=(\d+)", re.I)


def harvest_issue_ids(references) -> list[str]:
    """Issue numbers and tracker keys found in reference URLs."""
    ids = []
    for url in references:
        for pattern in (_GITHUB_ISSUE, _JIRA_KEY):
            for value in pattern.findall(url):
                if value.upper() not in ids:
                    ids.append(value.upper())
        if "bug" in url.lower():
            for value in _BUGZILLA.findall(url):
                if value not in ids:
                    ids.append(value)
    return ids


def _issue_patterns(issue_ids) -> list[re.Pattern]:
    patterns = []
    for issue in issue_ids:
        if issue.isdigit():
            patterns.append(re.compile(rf"(?:#|\bgh-|issues/|pull/|bug\s*){issue}(?!\d)", re.I))
        else:
            patterns.append(re.compile(rf"\b{re.escape(issue)}(?!\d)", re.I))
    return patterns


def relation_to(candidate, core_commits, cve_id: str, issue_patterns) -> str | None:
    signature = diff_signature(candidate)
    if signature:
        for core in core_commits:
            theirs = diff_signature(core)
            if any(f in theirs and theirs[f] == text for f, text in signature.items()):
                return SAME_DIFF

    title = normalize_message(candidate.title)
    body = normalize_message(candidate.message)
    for core in core_commits:
        if _contains(title, normalize_message(core.title)) or _contains(body, normalize_message(core.message)):
            return MESSAGE_CONTAINMENT

    if cve_id and cve_id.lower() in candidate.message.lower():
        return CVE_OR_ISSUE_REF
    if any(p.search(candidate.message) for p in issue_patterns):
        return CVE_OR_ISSUE_REF
    return None


def expand(core_commits, db, record) -> PatchResult:
    """Add the commits of ``db`` related to any of ``core_commits``."""
    core_commits = list(core_commits)
    if not core_commits:
        raise PreconditionError(f"{record.cve_id}: nothing to expand, the core set is empty")
    core_hashes = [c.hash for c in core_commits]
    patterns = _issue_patterns(harvest_issue_ids(record.references))

    expanded = []
    seen = set(core_hashes)
    for commit in db:
        if commit.hash in seen:
            continue
        relation = relation_to(commit, core_commits, record.cve_id, patterns)
        if relation is not None:
            expanded.append((commit.hash, relation))
            seen.add(commit.hash)
    return PatchResult(record.cve_id, core_hashes, expanded)
