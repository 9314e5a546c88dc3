import json

import pytest

from patchloc.errors import PreconditionError
from patchloc.gitrepo import CommitRecord, DiffHunk, GitRepo
from patchloc.repo_miner import list_tags
from patchloc.result_expander import (
    CVE_OR_ISSUE_REF,
    MESSAGE_CONTAINMENT,
    SAME_DIFF,
    PatchResult,
    build_search_db,
    expand,
    harvest_issue_ids,
)
from patchloc.vuln_intel import VulnRecord

RECORD = VulnRecord("CVE-2020-5236", "ReDoS in header parsing.",
                    references=["https://github.com/acme/widget/issues/41",
                                "https://issues.example.org/browse/WID-77"])


def rec(i, message, hunks=()):
    files = sorted({h.file for h in hunks})
    return CommitRecord(f"{i:040x}", message, i, i, files, list(hunks), [])


def hunk(path, added, removed=()):
    return DiffHunk(path, 1, len(removed), 1, len(added),
                    [(n + 1, t) for n, t in enumerate(added)], [(n + 1, t) for n, t in enumerate(removed)])


def linear_repo(builder, tag_every):
    hashes = []
    for i in range(7):
        hashes.append(builder.commit(f"c{i}", {"f.txt": str(i)}))
        if i in tag_every:
            builder.tag(tag_every[i])
    return hashes


def test_search_db_spans_one_range_each_side(builder):
    h = linear_repo(builder, {0: "v1", 2: "v2", 4: "v3", 6: "v4"})
    tags = list_tags(builder.path)
    fixed = next(t for t in tags if t.name == "v3")
    db = build_search_db(builder.path, fixed, tags)
    # oracle: reachable from v4 and not from v1
    assert [c.hash for c in db] == h[1:7]


def test_search_db_first_tag(builder):
    h = linear_repo(builder, {2: "v1", 4: "v2", 6: "v3"})
    tags = list_tags(builder.path)
    db = build_search_db(builder.path, tags[0], tags)
    assert [c.hash for c in db] == h[:5]


def test_search_db_single_tag(builder):
    h = linear_repo(builder, {3: "v1"})
    tags = list_tags(builder.path)
    assert [c.hash for c in build_search_db(builder.path, tags[0], tags)] == h[:4]


def test_cherry_pick_is_same_diff(release_fixture):
    repo = GitRepo(release_fixture["repo"])
    h = release_fixture["hashes"]
    core = [repo.commit(h["c5"])]
    db = [repo.commit(h[k]) for k in ("c7", "c8", "c9")]
    result = expand(core, db, RECORD)
    assert result.expanded == [(h["c8"], SAME_DIFF)]
    assert result.final_set == [h["c5"], h["c8"]]


def test_cve_mention():
    core = [rec(1, "Tighten header regex", [hunk("a.py", ["x = 1"])])]
    db = [rec(2, "Add regression test for cve-2020-5236"), rec(3, "Unrelated cleanup")]
    assert expand(core, db, RECORD).expanded == [(f"{2:040x}", CVE_OR_ISSUE_REF)]


def test_issue_reference():
    core = [rec(1, "Tighten header regex")]
    db = [rec(2, "Follow-up for #41"), rec(3, "Fixes #410"), rec(4, "See WID-77"), rec(5, "GH-41 docs")]
    assert expand(core, db, RECORD).expanded == [
        (f"{2:040x}", CVE_OR_ISSUE_REF), (f"{4:040x}", CVE_OR_ISSUE_REF), (f"{5:040x}", CVE_OR_ISSUE_REF),
    ]


def test_message_containment():
    core = [rec(1, "Reject oversized multipart boundaries")]
    db = [rec(2, "[1.x] Reject oversized multipart boundaries (backport)"), rec(3, "Fix")]
    assert expand(core, db, RECORD).expanded == [(f"{2:040x}", MESSAGE_CONTAINMENT)]


def test_relation_precedence():
    shared = hunk("a.py", ["check(x)"], ["pass"])
    core = [rec(1, "Fix CVE-2020-5236 in parser", [shared])]
    db = [rec(2, "Fix CVE-2020-5236 in parser", [hunk("a.py", ["check(x)  "], ["pass"])])]
    assert expand(core, db, RECORD).expanded == [(f"{2:040x}", SAME_DIFF)]


def test_empty_db():
    core = [rec(1, "x")]
    result = expand(core, [], RECORD)
    assert result.final_set == [f"{1:040x}"] and result.expanded == []


def test_core_not_duplicated():
    core = [rec(1, "Fix CVE-2020-5236")]
    result = expand(core, core + [rec(2, "other")], RECORD)
    assert result.final_set == [f"{1:040x}"]


def test_empty_core():
    with pytest.raises(PreconditionError):
        expand([], [rec(1, "x")], RECORD)


def test_harvest_issue_ids():
    refs = ["https://github.com/o/r/pull/12", "https://gitlab.com/o/r/-/merge_requests/7",
            "https://bugzilla.example.com/show_bug.cgi?id=991", "https://example.com/advisory?id=5"]
    assert harvest_issue_ids(refs) == ["12", "7", "991"]


def test_result_round_trip():
    r = PatchResult("CVE-2020-5236", ["a" * 40], [("b" * 40, SAME_DIFF)])
    again = PatchResult.from_dict(json.loads(r.to_json()))
    assert again == r and again.final_set == ["a" * 40, "b" * 40]
