"""Helpers for building small git repositories with reproducible hashes.

Used by the test-suite and the demo scripts.  Every commit gets a fixed
identity and a clock that advances by one hour per commit, so two builds of
the same script produce the same hashes.
"""

from __future__ import annotations

import os
import subprocess
from pathlib import Path

BASE_TIME = 1_600_000_000


class RepoBuilder:
    def __init__(self, path, start_time: int = BASE_TIME, step: int = 3600):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.clock = start_time
        self.step = step
        self._git("init", "-q", "-b", "main")
        self._git("config", "commit.gpgsign", "false")
        self._git("config", "tag.gpgsign", "false")

    def _env(self, when: int | None = None):
        stamp = f"{when if when is not None else self.clock} +0000"
        env = dict(os.environ)
        env.update({
            "GIT_AUTHOR_NAME": "Fixture Author",
            "GIT_AUTHOR_EMAIL": "author@example.org",
            "GIT_COMMITTER_NAME": "Fixture Author",
            "GIT_COMMITTER_EMAIL": "author@example.org",
            "GIT_AUTHOR_DATE": stamp,
            "GIT_COMMITTER_DATE": stamp,
            "GIT_CONFIG_NOSYSTEM": "1",
            "HOME": str(self.path),
        })
        return env

    def _git(self, *args, when: int | None = None) -> str:
        proc = subprocess.run(
            ["git", "-C", str(self.path), *args],
            env=self._env(when), capture_output=True, text=True,
        )
        if proc.returncode != 0:
            raise RuntimeError(f"git {' '.join(args)}: {proc.stderr.strip()}")
        return proc.stdout.strip()

    def _tick(self) -> int:
        self.clock += self.step
        return self.clock

    def write(self, files: dict) -> None:
        for rel, content in files.items():
            target = self.path / rel
            if content is None:
                self._git("rm", "-q", "--", rel)
                continue
            target.parent.mkdir(parents=True, exist_ok=True)
            if isinstance(content, bytes):
                target.write_bytes(content)
            else:
                target.write_text(content, encoding="utf-8")
            self._git("add", "--", rel)

    def commit(self, message: str, files: dict | None = None) -> str:
        """Write ``files`` (path -> text, or None to delete) and commit."""
        if files:
            self.write(files)
        when = self._tick()
        self._git("commit", "-q", "--allow-empty", "-m", message, when=when)
        return self.head()

    def head(self) -> str:
        return self._git("rev-parse", "HEAD")

    def tag(self, name: str, rev: str = "HEAD", when: int | None = None, annotated: bool = False) -> None:
        if annotated or when is not None:
            self._git("tag", "-a", name, rev, "-m", name, when=when if when is not None else self.clock)
        else:
            self._git("tag", name, rev)

    def branch(self, name: str, start: str = "HEAD") -> None:
        self._git("checkout", "-q", "-b", name, start)

    def checkout(self, name: str) -> None:
        self._git("checkout", "-q", name)

    def cherry_pick(self, rev: str) -> str:
        when = self._tick()
        self._git("cherry-pick", "-x", rev, when=when)
        return self.head()

    def read(self, rel: str) -> str:
        return (self.path / rel).read_text(encoding="utf-8")


UPLOAD_V1 = '''"""Upload handling."""

import os

UPLOAD_ROOT = "/srv/uploads"


def sanitize(name):
    return name.strip()


def resolve_upload(name):
    clean = sanitize(name)
    return os.path.join(UPLOAD_ROOT, clean)


def store(name, data):
    path = resolve_upload(name)
    with open(path, "wb") as fh:
        fh.write(data)
    return path
'''

UPLOAD_FIXED = UPLOAD_V1.replace(
    '''    clean = sanitize(name)
    return os.path.join(UPLOAD_ROOT, clean)''',
    '''    clean = sanitize(name)
    if ".." in clean.split("/") or clean.startswith("/"):
        raise ValueError("upload name escapes the upload root")
    return os.path.join(UPLOAD_ROOT, clean)''',
)

FIXTURE_CVE = "CVE-2020-5236"
FIXTURE_DESCRIPTION = (
    "widget before 1.0.1 and 1.1.x before 1.1.1 lets a remote user write files outside the "
    "upload directory, because resolve_upload does not reject '..' path segments."
)


def build_release_fixture(path) -> dict:
    """Two maintained release lines with one fix cherry-picked between them.

    Returns a mapping from commit labels ``c1``..``c12`` to hashes.  ``c5``
    is the fix on ``release-1.0`` and ``c8`` its cherry-pick on
    ``release-1.1``.  Tags: v1.0.0 (c1), v1.1.0 (c3), v1.2.0 (c12),
    v1.0.1 (c6), v1.1.1 (c9).
    """
    b = RepoBuilder(path)
    c = {}
    c["c1"] = b.commit("Initial import of widget", {
        "widget/upload.py": UPLOAD_V1,
        "widget/version.py": 'VERSION = "1.0.0"\n',
        "README.md": "# widget\n",
    })
    b.tag("v1.0.0")
    c["c2"] = b.commit("Add thumbnail helper", {"widget/thumbs.py": "def thumbnail(img):\n    return img\n"})
    c["c3"] = b.commit("Bump version to 1.1.0", {"widget/version.py": 'VERSION = "1.1.0"\n'})
    b.tag("v1.1.0")

    b.branch("release-1.0", c["c1"])
    c["c4"] = b.commit("Document supported Python versions", {"README.md": "# widget\n\nPython 3.8+\n"})
    c["c5"] = b.commit(
        "Reject path traversal in upload names\n\n"
        "resolve_upload now refuses names with '..' segments or a leading slash.",
        {"widget/upload.py": UPLOAD_FIXED},
    )
    c["c6"] = b.commit("Release 1.0.1", {"widget/version.py": 'VERSION = "1.0.1"\n'})
    b.tag("v1.0.1")

    b.branch("release-1.1", c["c3"])
    c["c7"] = b.commit("Quieter logging in thumbnail helper",
                       {"widget/thumbs.py": "def thumbnail(img):\n    # no logging\n    return img\n"})
    c["c8"] = b.cherry_pick(c["c5"])
    c["c9"] = b.commit("Release 1.1.1", {"widget/version.py": 'VERSION = "1.1.1"\n'})
    b.tag("v1.1.1")

    b.checkout("main")
    c["c10"] = b.commit("Add upload size limit setting", {"widget/settings.py": "MAX_UPLOAD = 10 * 1024 * 1024\n"})
    c["c11"] = b.commit("Refactor thumbnail helper", {"widget/thumbs.py": "def thumbnail(image):\n    return image\n"})
    c["c12"] = b.commit("Bump version to 1.2.0", {"widget/version.py": 'VERSION = "1.2.0"\n'})
    b.tag("v1.2.0")
    return c


def fixture_record_dict() -> dict:
    return {
        "cve_id": FIXTURE_CVE,
        "description": FIXTURE_DESCRIPTION,
        "cvss": 7.5,
        "cpes": [
            {"criteria": "cpe:2.3:a:acme:widget:*:*:*:*:*:*:*:*", "versionEndExcluding": "1.0.1"},
            {"criteria": "cpe:2.3:a:acme:widget:*:*:*:*:*:*:*:*", "versionEndExcluding": "1.1.1"},
        ],
        "references": ["https://github.com/acme/widget/issues/41"],
    }


def fixture_script(fix_hash: str) -> list[dict]:
    """Mock answers that always point at the commit touching resolve_upload."""
    return [{"match": "resolve_upload", "response": f"Commit {fix_hash[:7]} adds the missing check.\n"
             f"<answer>{fix_hash[:7]}</answer>", "repeat": True}]
