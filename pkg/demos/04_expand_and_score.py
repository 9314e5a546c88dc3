"""
Growing the answer and scoring it
=================================

The voted commit is rarely the whole story: backports carry the same
change under a different hash.  After expansion we score the result and
look at how lopsided candidate-set sizes tend to be.
"""

import tempfile
from pathlib import Path

import numpy as np

from patchloc.eval_harness import EvalRecord, candidate_stats, emit_report, score
from patchloc.gitrepo import GitRepo
from patchloc.repo_miner import list_tags
from patchloc.result_expander import build_search_db, expand
from patchloc.testing import build_release_fixture, fixture_record_dict
from patchloc.vuln_intel import VulnRecord

workdir = Path(tempfile.mkdtemp(prefix="patchloc-demo-"))
hashes = build_release_fixture(workdir / "widget")
label = {h: name for name, h in hashes.items()}
repo = GitRepo(workdir / "widget")
record = VulnRecord.from_dict(fixture_record_dict())
tags = list_tags(repo)

fixed = next(t for t in tags if t.name == "v1.1.1")
db = build_search_db(repo, fixed, tags)
print("search db:", [label[c.hash] for c in db])

result = expand([repo.commit(hashes["c5"])], db, record)
print("expanded:", [(label[h], why) for h, why in result.expanded])

report = score([EvalRecord(record.cve_id, set(result.final_set), {hashes["c5"], hashes["c8"]})])
print(emit_report(report, "markdown"))

# Candidate counts are heavy-tailed: a few huge ranges pull the mean far above the median
rng = np.random.default_rng(3)
counts = np.round(rng.lognormal(mean=4.2, sigma=1.6, size=500)).astype(int)
stats = candidate_stats(counts)
print(emit_report(stats, "markdown"))
