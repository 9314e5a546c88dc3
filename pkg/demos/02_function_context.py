"""
What the model sees of each commit
==================================

A diff on its own says little.  For every changed line we look up the
innermost function around it in the post-change file, so the prompt can
show the whole function instead of a few lines.
"""

import tempfile
from pathlib import Path

from patchloc.code_context import commit_contexts, enclosing_functions
from patchloc.gitrepo import GitRepo
from patchloc.testing import build_release_fixture

workdir = Path(tempfile.mkdtemp(prefix="patchloc-demo-"))
hashes = build_release_fixture(workdir / "widget")
repo = GitRepo(workdir / "widget")

fix = repo.commit(hashes["c5"])
for hunk in fix.hunks:
    print(hunk.file, "added lines", [n for n, _ in hunk.added_lines])

for ctx in commit_contexts(fix, repo):
    print(f"\n{ctx.file} lines {ctx.span[0]}-{ctx.span[1]} ({ctx.origin})")
    print(ctx.body)

# Lines outside any function fall back to a window of nearby lines
source = repo.show_file(fix.hash, "widget/upload.py").decode()
for ctx in enclosing_functions(source, "python", {4, 12}, "widget/upload.py"):
    print(ctx.origin, ctx.span, repr(ctx.declaration))

# The same lookup works for the other languages
snippet = """#include <string.h>

int copy(char *dst, const char *src, size_t cap)
{
    size_t n = strlen(src);
    if (n >= cap) n = cap - 1;
    memcpy(dst, src, n);
    return (int) n;
}
"""
(ctx,) = enclosing_functions(snippet, "c", {6})
print(ctx.declaration, ctx.span)
