"""
From a CVE record to a handful of candidate commits
===================================================

Builds a small repository with two maintained release lines, where one
fix was made on release-1.0 and cherry-picked to release-1.1.  The CVE
record lists both fixed versions, so there are two version ranges, and
only the commits whose message shows up in both survive.
"""

import tempfile
from pathlib import Path

from patchloc.repo_miner import build_candidates, list_tags
from patchloc.testing import build_release_fixture, fixture_record_dict
from patchloc.vuln_intel import VulnRecord, extract_version_hints

workdir = Path(tempfile.mkdtemp(prefix="patchloc-demo-"))
hashes = build_release_fixture(workdir / "widget")
label = {h: name for name, h in hashes.items()}

# The tags, in version order rather than creation order
for tag in list_tags(workdir / "widget"):
    print(f"{tag.name:8} -> {label[tag.commit_hash]}")

record = VulnRecord.from_dict(fixture_record_dict())

# Fixed versions come from the CPE entries' upper bounds
hints = extract_version_hints(record)
for hint in hints:
    print(hint)

candidates = build_candidates(record, hints, workdir / "widget")
for prior, fixed in candidates.version_pairs:
    print(f"range {prior.name}..{fixed.name}")

# Every commit in either range, with the number of ranges its message appears in
for h, freq in candidates.filter_trace.frequencies.items():
    print(f"  {label[h]:4} seen in {freq} range(s)")

print("kept:", [label[h] for h in candidates.hashes])
