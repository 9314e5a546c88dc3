"""
Batched questions and a vote
============================

Candidates are asked about in batches.  Each batch answer moves on to the
next stage until one commit is left, and that whole tournament is repeated
for several rounds.  A scripted gateway stands in for the model here: it
answers with whichever commit mentions ``resolve_upload``.
"""

import tempfile
from pathlib import Path

from patchloc.gitrepo import GitRepo
from patchloc.llm_gateway import ScriptedGateway
from patchloc.prompt_forge import build_prompt
from patchloc.repo_miner import build_candidates
from patchloc.testing import build_release_fixture, fixture_record_dict, fixture_script
from patchloc.vote_engine import BatchSelector, run_votes, tournament_queries
from patchloc.vuln_intel import CPE, VersionHint, VulnRecord

workdir = Path(tempfile.mkdtemp(prefix="patchloc-demo-"))
hashes = build_release_fixture(workdir / "widget")
repo = GitRepo(workdir / "widget")
record = VulnRecord.from_dict(fixture_record_dict())

# One release line only, so there are three candidates to choose from
candidates = build_candidates(record, [VersionHint("acme/widget", "1.0.1", CPE)], repo)
print("candidates:", [c.abbrev for c in candidates.commits])

selector = BatchSelector(ScriptedGateway(fixture_script(hashes["c5"])), record, contexts=repo)
bundle = build_prompt(record, candidates.commits,
                      {c.hash: selector.contexts_for(c) for c in candidates.commits})
print(f"prompt is about {bundle.token_estimate} tokens ({bundle.reduction})")
print(bundle.text[:600], "...")

tally = run_votes(candidates, rounds=5, batch_size=2, select=selector)
print("votes:", {h[:7]: n for h, n in tally.votes.items()})
print("queries per round:", tally.queries)

# Batch size 2 with 3 candidates: one stage of 2 batches, then a final pick.
# The batch without the fix abstains, so one survivor is left and the final pick is skipped.
print("worst case per round:", tournament_queries(3, 2))
