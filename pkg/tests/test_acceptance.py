"""One check per acceptance criterion.

Run directly (``python tests/test_acceptance.py``) or through pytest; either
way the terminal summary ends with a PASS/FAIL line per criterion.
"""

import hashlib
import json
import math
import random
import re
import socket
import time
from collections import Counter
from fractions import Fraction

import mpmath
import pytest

from patchloc.cli import main
from patchloc.code_context import PARSED, WINDOW_FALLBACK, detect_language, enclosing_functions
from patchloc.eval_harness import EvalRecord, candidate_stats, emit_report, score
from patchloc.gitrepo import CommitRecord, GitRepo
from patchloc.llm_gateway import LiveGateway, ResponderGateway
from patchloc.repo_miner import build_candidates, commit_range, list_tags
from patchloc.testing import RepoBuilder
from patchloc.vote_engine import BatchSelector, run_votes, tally, tournament_queries
from patchloc.vuln_intel import CPE, VersionHint, VulnRecord

from conftest import FIXTURES


# ---------------------------------------------------------------------------
# 1. metrics
# ---------------------------------------------------------------------------


def _oracle(cases):
    per = []
    for predicted, truth in cases:
        inter = len(set(predicted) & truth)
        p = inter / len(predicted) if predicted else 0.0
        r = inter / len(truth)
        f = 0.0 if p + r == 0 else 2 * p * r / (p + r)
        per.append((p, r, f, inter > 0))
    n = len(per)
    macro = tuple(math.fsum(x[i] for x in per) / n for i in range(3))
    exact = tuple(
        sum((Fraction(x[i]) for x in per), Fraction(0)) / n for i in range(3)
    )
    return per, macro, exact, sum(x[3] for x in per)


@pytest.mark.acceptance("1", "metric oracle equivalence and four-decimal rendering")
def test_metric_oracle_equivalence():
    started = time.perf_counter()
    rng = random.Random(2024)
    pool = [f"{i:040x}" for i in range(8)]
    for _ in range(1000):
        cases = []
        for _ in range(rng.randint(1, 10)):
            predicted = rng.sample(pool, rng.randint(0, 8))
            truth = set(rng.sample(pool, rng.randint(1, 8)))
            cases.append((predicted, truth))
        report = score([EvalRecord(f"CVE-2020-{i:04d}", set(p), t) for i, (p, t) in enumerate(cases)])
        per, macro, exact, hits = _oracle(cases)
        assert [(s.precision, s.recall, s.f1, s.hit) for s in report.per_cve] == per
        assert (report.macro_precision, report.macro_recall, report.macro_f1) == macro
        for got, want in zip(macro, exact):
            assert abs(Fraction(got) - want) < Fraction(1, 10**15)
        assert report.accuracy_count == hits

    # 2000 CVEs: 1046 fully right, 498 with half the patches, 456 missed
    records = []
    for i in range(2000):
        truth = {f"t{i}a", f"t{i}b"}
        if i < 1046:
            predicted = set(truth)
        elif i < 1544:
            predicted = {f"t{i}a"}
        else:
            predicted = {f"wrong{i}"}
        records.append(EvalRecord(f"CVE-2021-{i:05d}", predicted, truth))
    report = score(records)
    row = emit_report(report, "markdown").splitlines()[2]
    assert row.startswith("| all | 0.7720 | 0.6475 |")
    assert time.perf_counter() - started < 10


# ---------------------------------------------------------------------------
# 2. tournament rounds and voting
# ---------------------------------------------------------------------------


def _commits(n):
    out = []
    for i in range(n):
        h = hashlib.sha1(f"candidate-{i}".encode()).hexdigest()
        out.append(CommitRecord(h, f"change {i}", i, i, [f"f{i}.c"], [], []))
    return out


def _pick(abbrevs, round_index):
    """Deterministic stand-in for the model: depends on the batch and the round."""
    return abbrevs[(int(abbrevs[0], 16) + round_index * 7) % len(abbrevs)]


def _scripted_responder(text, round_index):
    abbrevs = re.findall(r"^Commit ([0-9a-f]{7})$", text, re.M)
    return f"Step by step...\n<answer>{_pick(abbrevs, round_index)}</answer>"


def _simulate(hashes, batch_size, rounds):
    """Straight transcription of the reduction loop plus the final selection query."""
    selected, queries = [], []
    for r in range(rounds):
        commits = list(hashes)
        asked = 0
        while len(commits) > batch_size:
            nxt = []
            for i in range(0, len(commits), batch_size):
                batch = commits[i:i + batch_size]
                abbrev = _pick([h[:7] for h in batch], r)
                nxt.append(next(h for h in batch if h.startswith(abbrev)))
                asked += 1
            commits = nxt
        if len(commits) > 1:
            abbrev = _pick([h[:7] for h in commits], r)
            commits = [next(h for h in commits if h.startswith(abbrev))]
            asked += 1
        selected.extend(commits)
        queries.append(asked)
    counter = Counter(selected)
    top = max(counter.values())
    return dict(counter), [h for h, c in counter.items() if c == top], queries


@pytest.mark.acceptance("2", "tournament voting equals a straight-line simulation")
def test_algorithm_equivalence():
    started = time.perf_counter()
    record = VulnRecord("CVE-2022-0001", "Heap overflow in the frame decoder.")
    for n in range(1, 61):
        cs = _commits(n)
        hashes = [c.hash for c in cs]
        for b in (2, 5, 10):
            for rounds in (1, 3, 10):
                selector = BatchSelector(ResponderGateway(_scripted_responder), record, contexts=lambda c: [])
                result = run_votes(cs, rounds, b, selector)
                votes, winners, queries = _simulate(hashes, b, rounds)
                assert result.votes == votes
                assert result.winners == winners
                assert result.queries == queries == [tournament_queries(n, b)] * rounds
                assert result.abstentions == 0
    assert time.perf_counter() - started < 60


# ---------------------------------------------------------------------------
# 3. majority vote
# ---------------------------------------------------------------------------


@pytest.mark.acceptance("3", "majority vote keeps the full argmax set")
def test_majority_vote_semantics():
    tie = tally(["A", "B", "A", "B", None])
    assert set(tie.winners) == {"A", "B"}
    rng = random.Random(7)
    for _ in range(10_000):
        items = [rng.choice(["A", "B", "C", "D", None]) for _ in range(rng.randint(0, 12))]
        result = tally(items)
        counts = {}
        for x in items:
            if x is not None:
                counts[x] = counts.get(x, 0) + 1
        top = max(counts.values(), default=0)
        assert result.votes == counts
        assert set(result.winners) == {k for k, v in counts.items() if v == top}
        assert len(result.winners) == len(set(result.winners))
        assert result.abstentions == items.count(None)


# ---------------------------------------------------------------------------
# 4. cross-filtering on three branches
# ---------------------------------------------------------------------------


@pytest.mark.acceptance("4", "three-branch cross-filter keeps exactly the fix commits")
def test_three_branch_cross_filter(tmp_path):
    b = RepoBuilder(tmp_path / "repo")
    b.commit("Initial import", {"src/session.c": "int session_open(void)\n{\n    return 0;\n}\n"})
    b.tag("v1.0.0")
    for k in range(4):
        b.commit(f"main: tidy module {k}", {f"src/m{k}.c": f"int m{k};\n"})
    b.tag("v1.1.0")
    for k in range(4):
        b.commit(f"main: add helper {k}", {f"src/h{k}.c": f"int h{k};\n"})
    b.tag("v1.2.0")

    noise = 0
    fix_hashes = []
    for line, base in (("1.0", "v1.0.0"), ("1.1", "v1.1.0"), ("1.2", "v1.2.0")):
        b.branch(f"release-{line}", base)
        for k in range(6):
            b.commit(f"[{line}] maintenance change {k}", {f"maint/{line}-{k}.txt": str(k)})
            noise += 1
        if not fix_hashes:
            fix_hashes.append(b.commit(
                "Validate session length before copying\n\nSigned-off-by: Dev One <one@example.org>",
                {"src/session.c": "int session_open(void)\n{\n    return check_len();\n}\n"},
            ))
        else:
            fix_hashes.append(b.cherry_pick(fix_hashes[0]))
        for k in range(5):
            b.commit(f"[{line}] packaging tweak {k}", {f"pkg/{line}-{k}.txt": str(k)})
            noise += 1
        b.tag(f"v{line}.1")
    assert noise >= 30

    started = time.perf_counter()
    record = VulnRecord("CVE-2022-0002", "Buffer overflow in session handling.")
    hints = [VersionHint("acme/session", f"{line}.1", CPE) for line in ("1.0", "1.1", "1.2")]
    cs = build_candidates(record, hints, b.path)
    elapsed = time.perf_counter() - started
    assert sorted(cs.hashes) == sorted(fix_hashes)
    assert len(set(fix_hashes)) == 3
    assert cs.filter_trace.max_frequency == 3
    assert elapsed < 5


# ---------------------------------------------------------------------------
# 5. version ranges
# ---------------------------------------------------------------------------


def _range(repo_path, tag_name):
    tags = list_tags(repo_path)
    fixed = next(t for t in tags if t.name == tag_name)
    prior, commits = commit_range(repo_path, fixed, tags)
    return (prior.name if prior else None), [c.hash for c in commits]


@pytest.mark.acceptance("5", "version ranges follow the documented predecessor rules")
def test_version_range_correctness(tmp_path):
    # same release line: 1.2.10 follows 1.2.9 even though 1.3.0 sorts between them by date
    b = RepoBuilder(tmp_path / "line")
    a = b.commit("A", {"f": "a"})
    b.tag("1.2.9")
    b.commit("B", {"f": "b"})
    b.tag("1.3.0")
    b.branch("maint", a)
    c = b.commit("C", {"f": "c"})
    d = b.commit("D", {"f": "d"})
    b.tag("1.2.10")
    assert _range(b.path, "1.2.10") == ("1.2.9", [c, d])

    # first tag: the whole history up to it
    b = RepoBuilder(tmp_path / "first")
    x = b.commit("X", {"f": "x"})
    y = b.commit("Y", {"f": "y"})
    b.tag("v0.1.0")
    b.commit("Z", {"f": "z"})
    b.tag("v0.2.0")
    assert _range(b.path, "v0.1.0") == (None, [x, y])

    # tag objects created in the opposite order of their versions
    b = RepoBuilder(tmp_path / "dates")
    p = b.commit("P", {"f": "p"})
    q = b.commit("Q", {"f": "q"})
    r = b.commit("R", {"f": "r"})
    s = b.commit("S", {"f": "s"})
    b.tag("v2.0.0", s, when=1_500_000_000)
    b.tag("v1.1.0", q, when=1_700_000_000)
    b.tag("v1.0.0", p, when=1_800_000_000)
    assert [t.name for t in list_tags(b.path)] == ["v1.0.0", "v1.1.0", "v2.0.0"]
    assert _range(b.path, "v2.0.0") == ("v1.1.0", [r, s])
    assert _range(b.path, "v1.1.0") == ("v1.0.0", [q])

    # oracle: the range is exactly reachable(fixed) minus reachable(prior)
    repo = GitRepo(b.path)
    for name in ("v1.1.0", "v2.0.0"):
        prior, hashes = _range(b.path, name)
        reach_fixed = set(repo.run("rev-list", name).split())
        reach_prior = set(repo.run("rev-list", prior).split())
        assert set(hashes) == reach_fixed - reach_prior


# ---------------------------------------------------------------------------
# 6. function extraction goldens
# ---------------------------------------------------------------------------


@pytest.mark.acceptance("6", "function extraction matches the golden suite in six languages")
def test_function_extraction_goldens():
    code = FIXTURES / "code"
    golden = json.loads((code / "golden.json").read_text())
    assert {detect_language(name) for name in golden} == {"c", "cpp", "java", "go", "python", "javascript"}
    nested_seen = fallback_seen = 0
    for name, case in golden.items():
        got = enclosing_functions((code / name).read_text(), detect_language(name), case["lines"], name)
        rendered = json.dumps([c.to_dict() for c in got], indent=2, ensure_ascii=False)
        assert rendered == json.dumps(case["contexts"], indent=2, ensure_ascii=False)
        fallback_seen += any(c.origin == WINDOW_FALLBACK for c in got)
        parsed = [c for c in got if c.origin == PARSED]
        nested_seen += any(
            o is not c and o.span[0] <= c.span[0] and c.span[1] <= o.span[1]
            for c in parsed for o in _all_functions(code / name)
        )
    assert fallback_seen == 6
    assert nested_seen >= 3


def _all_functions(path):
    source = path.read_text()
    n = len(source.splitlines())
    return enclosing_functions(source, detect_language(path.name), range(1, n + 1))


# ---------------------------------------------------------------------------
# 7. end to end
# ---------------------------------------------------------------------------


@pytest.fixture
def no_network(monkeypatch):
    def refuse(*args, **kwargs):
        raise OSError("network access is disabled in this test")
    monkeypatch.setattr(socket, "create_connection", refuse)
    monkeypatch.setattr(socket.socket, "connect", refuse)


def _locate(release_fixture, cache, out, *extra):
    return main([
        "--cache-dir", str(cache), "--out-dir", str(out), *extra,
        "locate", "CVE-2020-5236", "--repo", str(release_fixture["repo"]),
        "--dataset", str(release_fixture["dataset"]), "--mock-script", str(release_fixture["script"]),
    ])


@pytest.mark.acceptance("7", "end-to-end locate on the two-branch fixture")
def test_end_to_end_fixture(tmp_path, release_fixture, no_network, capsys):
    h = release_fixture["hashes"]
    started = time.perf_counter()
    code = _locate(release_fixture, tmp_path / "cache", tmp_path / "out")
    elapsed = time.perf_counter() - started
    capsys.readouterr()
    assert code == 0
    assert len(GitRepo(release_fixture["repo"]).rev_list("--all")) == 12
    result = json.loads((tmp_path / "out" / "CVE-2020-5236" / "patch_result.json").read_text())
    assert result["core"] == [h["c5"]]
    assert result["final_set"] == [h["c5"], h["c8"]]
    assert result["expanded"] == [{"hash": h["c8"], "relation": "same_diff"}]
    report = score([EvalRecord("CVE-2020-5236", set(result["final_set"]), {h["c5"], h["c8"]})])
    assert (report.macro_precision, report.macro_recall, report.macro_f1) == (1.0, 1.0, 1.0)
    assert elapsed < 60


# ---------------------------------------------------------------------------
# 8. statistics
# ---------------------------------------------------------------------------


def _reference(values):
    mpmath.mp.dps = 60
    xs = sorted(mpmath.mpf(v) for v in values)
    n = len(xs)
    mean = mpmath.fsum(xs) / n
    m2 = mpmath.fsum((x - mean) ** 2 for x in xs) / n
    m3 = mpmath.fsum((x - mean) ** 3 for x in xs) / n

    def q(frac):
        pos = mpmath.mpf(frac) * (n - 1)
        lo = int(mpmath.floor(pos))
        hi = min(lo + 1, n - 1)
        return xs[lo] + (xs[hi] - xs[lo]) * (pos - lo)

    return {
        "mean": mean, "std": mpmath.sqrt(m2),
        "skewness": m3 / m2 ** mpmath.mpf(1.5) if m2 > 0 else mpmath.mpf(0),
        "q1": q(mpmath.mpf(1) / 4), "median": q(mpmath.mpf(1) / 2), "q3": q(mpmath.mpf(3) / 4),
        "min": xs[0], "max": xs[-1],
    }


@pytest.mark.acceptance("8", "candidate statistics match a high-precision reference")
def test_statistics_oracle():
    rng = random.Random(11)
    for _ in range(1000):
        size = rng.randint(1, 80)
        values = [int(rng.paretovariate(1.2) * 10) for _ in range(size)]
        got = candidate_stats(values)
        for name, want in _reference(values).items():
            want = float(want)
            assert abs(getattr(got, name) - want) <= 1e-9 * max(1.0, abs(want)), name
    heavy = [20] * 60 + [70] * 30 + [300] * 8 + [5_000, 55_000]
    assert candidate_stats(heavy).skewness > 1


# ---------------------------------------------------------------------------
# 9. determinism
# ---------------------------------------------------------------------------


@pytest.mark.acceptance("9", "two mock runs with the same seed give identical outputs")
def test_determinism(tmp_path, release_fixture, capsys):
    outputs = []
    for run in ("a", "b"):
        out = tmp_path / run / "out"
        assert _locate(release_fixture, tmp_path / run / "cache", out, "--seed", "5", "--shuffle") == 0
        target = out / "CVE-2020-5236"
        outputs.append(((target / "patch_result.json").read_bytes(), (target / "vote_tally.json").read_bytes()))
    capsys.readouterr()
    assert outputs[0] == outputs[1]


# ---------------------------------------------------------------------------
# 10. cache
# ---------------------------------------------------------------------------


@pytest.mark.acceptance("10", "identical (prompt, round) calls are served from the disk cache")
def test_cache_behaviour(tmp_path, stub_server):
    stub_server.replies["/chat/completions"] = (
        200, {"choices": [{"message": {"content": "<answer>abc1234</answer>"}}]})
    gateway = LiveGateway(base_url=stub_server.url, cache_dir=tmp_path)
    first = gateway.complete("Which commit fixes CVE-2020-5236?", round_index=0)
    second = gateway.complete("Which commit fixes CVE-2020-5236?", round_index=0)
    assert len(stub_server.requests) == 1
    assert second.response_text == first.response_text and second.cached
    # a fresh gateway over the same directory still hits the cache
    LiveGateway(base_url=stub_server.url, cache_dir=tmp_path).complete("Which commit fixes CVE-2020-5236?", 0)
    assert len(stub_server.requests) == 1
    gateway.complete("Which commit fixes CVE-2020-5236?", round_index=1)
    assert len(stub_server.requests) == 2


if __name__ == "__main__":
    import sys

    raise SystemExit(pytest.main([__file__, "-q", *sys.argv[1:]]))
