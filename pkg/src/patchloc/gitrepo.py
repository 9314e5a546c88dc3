"""Thin read-only wrapper around the git command line.

Everything goes through ``git`` subprocesses so behaviour matches what a
user sees in a terminal.  Commit metadata and zero-context diffs are read in
one ``git log --stdin`` call per batch of hashes and parsed here.
"""

from __future__ import annotations

import re
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

from .errors import RepoError

HEX40 = re.compile(r"^[0-9a-f]{40}$")
_HUNK_RE = re.compile(rb"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@")
_RECORD_SEP = b"\x1e"
_LOG_FORMAT = "%x1e%H%x00%at%x00%ct%x00%B%x00"


@dataclass
class DiffHunk:
    file: str
    old_start: int
    old_len: int
    new_start: int
    new_len: int
    added_lines: list[tuple[int, str]] = field(default_factory=list)
    removed_lines: list[tuple[int, str]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "file": self.file,
            "old_start": self.old_start,
            "old_len": self.old_len,
            "new_start": self.new_start,
            "new_len": self.new_len,
            "added_lines": [list(x) for x in self.added_lines],
            "removed_lines": [list(x) for x in self.removed_lines],
        }

    @classmethod
    def from_dict(cls, d: dict) -> DiffHunk:
        return cls(
            d["file"], d["old_start"], d["old_len"], d["new_start"], d["new_len"],
            [(int(n), t) for n, t in d.get("added_lines", [])],
            [(int(n), t) for n, t in d.get("removed_lines", [])],
        )


@dataclass
class CommitRecord:
    hash: str
    message: str
    author_date: int
    commit_date: int
    files: list[str] = field(default_factory=list)
    hunks: list[DiffHunk] = field(default_factory=list)
    deleted_files: list[str] = field(default_factory=list)

    @property
    def abbrev(self) -> str:
        return self.hash[:7]

    @property
    def title(self) -> str:
        return self.message.strip().split("\n", 1)[0].strip()

    def to_dict(self) -> dict:
        return {
            "hash": self.hash,
            "abbrev": self.abbrev,
            "message": self.message,
            "author_date": self.author_date,
            "commit_date": self.commit_date,
            "files": list(self.files),
            "deleted_files": list(self.deleted_files),
            "hunks": [h.to_dict() for h in self.hunks],
        }

    @classmethod
    def from_dict(cls, d: dict) -> CommitRecord:
        return cls(
            hash=d["hash"],
            message=d["message"],
            author_date=int(d["author_date"]),
            commit_date=int(d["commit_date"]),
            files=list(d.get("files", [])),
            hunks=[DiffHunk.from_dict(h) for h in d.get("hunks", [])],
            deleted_files=list(d.get("deleted_files", [])),
        )


def _decode(raw: bytes) -> str:
    return raw.decode("utf-8", errors="replace")


def _strip_prefix(path: bytes) -> str | None:
    path = path.rstrip(b"\t")
    if path == b"/dev/null":
        return None
    if path.startswith((b"a/", b"b/")):
        path = path[2:]
    return _decode(path)


def parse_patch(patch: bytes) -> tuple[list[str], list[DiffHunk], list[str]]:
    """Parse ``git diff -U0`` output into (files, hunks, deleted files)."""
    files: list[str] = []
    deleted: list[str] = []
    hunks: list[DiffHunk] = []
    current: DiffHunk | None = None
    path = None
    old_path = None
    is_deleted = False
    old_no = new_no = 0

    def add_file(name):
        if name is not None and name not in files:
            files.append(name)

    for line in patch.split(b"\n"):
        if line.startswith(b"diff --git "):
            current = None
            is_deleted = False
            # header fallback for binary files, which have no ---/+++ lines
            rest = line[len(b"diff --git "):]
            half = len(rest) // 2
            path = old_path = _strip_prefix(rest[half + 1:]) if rest[half:half + 1] == b" " else None
            add_file(path)
            continue
        if current is None:
            if line.startswith(b"deleted file mode"):
                is_deleted = True
                if path is not None and path not in deleted:
                    deleted.append(path)
            elif line.startswith(b"--- "):
                old_path = _strip_prefix(line[4:])
            elif line.startswith(b"+++ "):
                new = _strip_prefix(line[4:])
                resolved = new if new is not None else old_path
                if resolved != path:
                    if path in files and path != resolved:
                        files.remove(path)
                    path = resolved
                    add_file(path)
                    if is_deleted and path not in deleted:
                        deleted.append(path)
        m = _HUNK_RE.match(line)
        if m and path is not None:
            old_start, old_len = int(m.group(1)), int(m.group(2) if m.group(2) is not None else 1)
            new_start, new_len = int(m.group(3)), int(m.group(4) if m.group(4) is not None else 1)
            current = DiffHunk(path, old_start, old_len, new_start, new_len)
            hunks.append(current)
            old_no, new_no = old_start, new_start
            continue
        if current is None:
            continue
        if line.startswith(b"+"):
            current.added_lines.append((new_no, _decode(line[1:])))
            new_no += 1
        elif line.startswith(b"-"):
            current.removed_lines.append((old_no, _decode(line[1:])))
            old_no += 1
        elif line.startswith(b" "):
            old_no += 1
            new_no += 1
    return files, hunks, deleted


class GitRepo:
    def __init__(self, path):
        self.path = Path(path)
        self._commits: dict[str, CommitRecord] = {}
        if not self.path.is_dir():
            raise RepoError(f"{self.path} is not a directory")
        try:
            self.run("rev-parse", "--git-dir")
        except RepoError:
            raise RepoError(f"{self.path} is not a git repository") from None

    def run_bytes(self, *args, input: bytes | None = None, check: bool = True) -> bytes:
        cmd = ["git", "-c", "core.quotepath=off", "-C", str(self.path), *args]
        proc = subprocess.run(cmd, input=input, capture_output=True)
        if check and proc.returncode != 0:
            err = proc.stderr.decode("utf-8", errors="replace").strip()
            raise RepoError(f"git {' '.join(args[:3])} failed: {err}")
        return proc.stdout

    def run(self, *args, input: bytes | None = None) -> str:
        return _decode(self.run_bytes(*args, input=input))

    def resolve(self, rev: str) -> str:
        return self.run("rev-parse", "--verify", "--quiet", f"{rev}^{{commit}}").strip()

    def tag_refs(self) -> list[tuple[str, str, int]]:
        """(tag name, peeled commit hash, creator date) for every tag."""
        fmt = "%(refname:strip=2)%00%(objectname)%00%(*objectname)%00%(creatordate:unix)"
        out = self.run("for-each-ref", f"--format={fmt}", "refs/tags")
        refs = []
        for line in out.splitlines():
            if not line:
                continue
            name, obj, peeled, date = line.split("\x00")
            commit = peeled or obj
            refs.append((name, commit, int(date or 0)))
        return refs

    def rev_list(self, include: str, exclude: str | None = None) -> list[str]:
        args = ["rev-list", "--topo-order", "--reverse", include]
        if exclude:
            args.append(f"^{exclude}")
        return self.run(*args).split()

    def commits(self, hashes) -> list[CommitRecord]:
        hashes = list(hashes)
        missing = [h for h in dict.fromkeys(hashes) if h not in self._commits]
        for start in range(0, len(missing), 500):
            chunk = missing[start:start + 500]
            out = self.run_bytes(
                "log", "--no-walk=unsorted", "--stdin", f"--format={_LOG_FORMAT}",
                "-p", "-U0", "--no-color", "--no-ext-diff", "--no-renames",
                input=("\n".join(chunk) + "\n").encode(),
            )
            for rec in self._parse_log(out):
                self._commits[rec.hash] = rec
        return [self._commits[h] for h in hashes]

    def commit(self, rev: str) -> CommitRecord:
        return self.commits([self.resolve(rev)])[0]

    @staticmethod
    def _parse_log(out: bytes) -> list[CommitRecord]:
        records = []
        for chunk in out.split(_RECORD_SEP)[1:]:
            parts = chunk.split(b"\x00", 4)
            if len(parts) < 5:
                continue
            commit_hash, adate, cdate, message, patch = parts
            files, hunks, deleted = parse_patch(patch)
            records.append(CommitRecord(
                hash=commit_hash.decode(),
                message=_decode(message).rstrip("\n"),
                author_date=int(adate),
                commit_date=int(cdate),
                files=files,
                hunks=hunks,
                deleted_files=deleted,
            ))
        return records

    def show_file(self, rev: str, path: str) -> bytes | None:
        out = subprocess.run(
            ["git", "-C", str(self.path), "show", f"{rev}:{path}"],
            capture_output=True,
        )
        if out.returncode != 0:
            return None
        return out.stdout

    def file_size(self, rev: str, path: str) -> int | None:
        out = subprocess.run(
            ["git", "-C", str(self.path), "cat-file", "-s", f"{rev}:{path}"],
            capture_output=True,
        )
        if out.returncode != 0:
            return None
        return int(out.stdout.strip())
