import pytest

from patchloc.errors import RepoError
from patchloc.gitrepo import CommitRecord, DiffHunk, GitRepo, parse_patch

PATCH = b"""diff --git a/src/app.py b/src/app.py
index 1111111..2222222 100644
--- a/src/app.py
+++ b/src/app.py
@@ -3,0 +4,2 @@ def f():
+    check()
+    log()
@@ -10 +12 @@ def g():
-    return 1
+    return 2
diff --git a/old.c b/old.c
deleted file mode 100644
index 3333333..0000000
--- a/old.c
+++ /dev/null
@@ -1,2 +0,0 @@
-int x;
-int y;
diff --git a/logo.png b/logo.png
index 4444444..5555555 100644
Binary files a/logo.png and b/logo.png differ
"""


def test_parse_patch_coordinates():
    files, hunks, deleted = parse_patch(PATCH)
    assert files == ["src/app.py", "old.c", "logo.png"]
    assert deleted == ["old.c"]
    first, second, third = hunks
    assert (first.old_start, first.old_len, first.new_start, first.new_len) == (3, 0, 4, 2)
    assert first.added_lines == [(4, "    check()"), (5, "    log()")]
    assert second.removed_lines == [(10, "    return 1")]
    assert second.added_lines == [(12, "    return 2")]
    assert third.file == "old.c"
    assert third.removed_lines == [(1, "int x;"), (2, "int y;")]


def test_hunk_lines_within_declared_ranges():
    _, hunks, _ = parse_patch(PATCH)
    for h in hunks:
        for n, _ in h.added_lines:
            assert h.new_start <= n < h.new_start + h.new_len
        for n, _ in h.removed_lines:
            assert h.old_start <= n < h.old_start + h.old_len


def test_hunk_round_trip():
    h = DiffHunk("a.py", 1, 1, 1, 2, [(1, "x"), (2, "y")], [(1, "z")])
    assert DiffHunk.from_dict(h.to_dict()) == h


def test_not_a_repository(tmp_path):
    with pytest.raises(RepoError):
        GitRepo(tmp_path)
    with pytest.raises(RepoError):
        GitRepo(tmp_path / "missing")


def test_commit_records(builder):
    first = builder.commit("Add files\n\nLonger body.", {"a.py": "x = 1\n", "dir/ü.txt": "hi\n"})
    second = builder.commit("Change and delete", {"a.py": "x = 2\n", "dir/ü.txt": None})
    repo = GitRepo(builder.path)
    rec = repo.commit(second)
    assert isinstance(rec, CommitRecord)
    assert rec.abbrev == second[:7] and rec.hash.startswith(rec.abbrev)
    assert rec.title == "Change and delete"
    assert rec.files == ["a.py", "dir/ü.txt"]
    assert rec.deleted_files == ["dir/ü.txt"]
    assert {h.file for h in rec.hunks} <= set(rec.files)
    assert rec.commit_date == builder.clock
    root = repo.commit(first)
    assert root.message == "Add files\n\nLonger body."
    assert sorted(root.files) == ["a.py", "dir/ü.txt"]
    assert CommitRecord.from_dict(rec.to_dict()) == rec


def test_commits_preserve_request_order(builder):
    a = builder.commit("a", {"f": "1"})
    b = builder.commit("b", {"f": "2"})
    repo = GitRepo(builder.path)
    assert [c.hash for c in repo.commits([b, a, b])] == [b, a, b]


def test_file_access(builder):
    c = builder.commit("a", {"f.txt": "hello\n"})
    repo = GitRepo(builder.path)
    assert repo.show_file(c, "f.txt") == b"hello\n"
    assert repo.show_file(c, "nope") is None
    assert repo.file_size(c, "f.txt") == 6
    assert repo.file_size(c, "nope") is None


def test_rev_list_range(builder):
    a = builder.commit("a", {"f": "1"})
    b = builder.commit("b", {"f": "2"})
    c = builder.commit("c", {"f": "3"})
    repo = GitRepo(builder.path)
    assert repo.rev_list(c, a) == [b, c]
    assert repo.rev_list(c) == [a, b, c]
