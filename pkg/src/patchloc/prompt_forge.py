"""Prompt assembly for one batch of candidate commits.

A prompt has four parts: the question, the vulnerability (id and
description), one section per candidate commit, and a worked example that
fixes the answer format.  All wording lives in plain-text templates with
``${NAME}`` placeholders so it can be changed without touching code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from string import Template

from .errors import BudgetError, PreconditionError

DEFAULT_TEMPLATE_DIR = Path(__file__).with_name("templates")
DEFAULT_TOKEN_BUDGET = 8000

TEMPLATE_FILES = {
    "question": "question.txt",
    "vulnerability": "vulnerability.txt",
    "commit": "commit.txt",
    "guidance": "guidance.txt",
    "layout": "prompt.txt",
    "version_extraction": "version_extraction.txt",
}


def estimate_tokens(text: str) -> int:
    """Rough token count: one token per four UTF-8 bytes, rounded up."""
    return math.ceil(len(text.encode("utf-8")) / 4)


@dataclass(frozen=True)
class TemplateSet:
    question: str
    vulnerability: str
    commit: str
    guidance: str
    layout: str
    version_extraction: str

    @classmethod
    def load(cls, directory=None) -> TemplateSet:
        """Read templates from ``directory``; files it lacks come from the defaults."""
        texts = {}
        for key, name in TEMPLATE_FILES.items():
            path = Path(directory) / name if directory else None
            if path is None or not path.exists():
                path = DEFAULT_TEMPLATE_DIR / name
            texts[key] = path.read_text(encoding="utf-8")
        return cls(**texts)


@dataclass
class CommitSection:
    abbrev: str
    message: str
    digest: str
    text: str


@dataclass
class PromptBundle:
    cve_id: str
    question: str
    vuln_section: str
    commit_sections: list[CommitSection]
    guidance: str
    text: str
    token_estimate: int
    reduction: str = "full"
    valid: dict[str, str] = field(default_factory=dict)

    @property
    def abbrevs(self) -> list[str]:
        return [s.abbrev for s in self.commit_sections]


def _format_date(ts: int) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime("%Y-%m-%d %H:%M:%S UTC")


def render_contexts(contexts, declarations_only: bool = False) -> str:
    blocks = []
    for ctx in contexts:
        text = ctx.declaration if declarations_only else ctx.body
        if not text:
            continue
        start, end = ctx.span
        blocks.append(f'<code file="{ctx.file}" lines="{start}-{end}">\n{text}\n</code>')
    return "\n".join(blocks)


def render_commit(template: str, commit, contexts, declarations_only: bool = False) -> CommitSection:
    digest = render_contexts(contexts, declarations_only)
    text = Template(template).safe_substitute(
        ABBREV=commit.abbrev,
        DATE=_format_date(commit.commit_date),
        FILES=", ".join(commit.files) or "(none)",
        MESSAGE=commit.message.strip(),
        CONTEXTS=digest,
    ).rstrip("\n")
    return CommitSection(commit.abbrev, commit.message.strip(), digest, text)


def _render(record, batch, kept, templates, declarations_only, message_only):
    question = templates.question.strip()
    vuln = Template(templates.vulnerability).safe_substitute(
        CVE_ID=record.cve_id, CVE_DESCRIPTION=record.description.strip()
    ).strip()
    guidance = templates.guidance.strip()
    sections = [
        render_commit(templates.commit, c, [] if message_only else ctxs, declarations_only)
        for c, ctxs in zip(batch, kept)
    ]
    text = Template(templates.layout).safe_substitute(
        QUESTION=question,
        VULNERABILITY=vuln,
        CVE_ID=record.cve_id,
        CVE_DESCRIPTION=record.description.strip(),
        COMMITS="\n\n".join(s.text for s in sections),
        EXAMPLE=guidance,
    )
    return question, vuln, sections, guidance, text


def build_prompt(record, batch, contexts=None, templates: TemplateSet | None = None,
                 budget: int = DEFAULT_TOKEN_BUDGET) -> PromptBundle:
    """Render the prompt for ``batch``, shrinking code context to fit ``budget``.

    ``contexts`` maps commit hash to its ranked FunctionContext list.  When the
    prompt is too long, contexts are dropped one at a time from whichever
    commit has the most (never below one each), then every body is cut
    down to its declaration, then code is left out entirely.  Commits
    themselves are never removed.
    """
    batch = list(batch)
    if not batch:
        raise PreconditionError("cannot build a prompt for an empty batch")
    templates = templates or TemplateSet.load()
    contexts = contexts or {}
    kept = [list(contexts.get(c.hash, [])) for c in batch]

    def finish(parts, reduction):
        question, vuln, sections, guidance, text = parts
        return PromptBundle(
            record.cve_id, question, vuln, sections, guidance, text,
            estimate_tokens(text), reduction, {c.abbrev: c.hash for c in batch},
        )

    reduction = "full"
    while True:
        parts = _render(record, batch, kept, templates, False, False)
        if estimate_tokens(parts[4]) <= budget:
            return finish(parts, reduction)
        widest = max(range(len(kept)), key=lambda i: (len(kept[i]), -i))
        if len(kept[widest]) <= 1:
            break
        kept[widest].pop()
        reduction = "fewer_contexts"

    parts = _render(record, batch, kept, templates, True, False)
    if estimate_tokens(parts[4]) <= budget:
        return finish(parts, "declarations")

    parts = _render(record, batch, kept, templates, False, True)
    needed = estimate_tokens(parts[4])
    if needed <= budget:
        return finish(parts, "messages_only")
    raise BudgetError(
        f"{record.cve_id}: a batch of {len(batch)} commits needs at least {needed} tokens "
        f"even without code, budget is {budget}",
        minimal_budget=needed,
    )
