"""Tournament rounds and majority voting over candidate commits.

One round splits the candidates into consecutive batches, asks the model
to pick one commit per batch, and repeats on the picks until a single
commit is left.  Several rounds are run from the full candidate list and
the commits picked most often win.  Ties are kept.

By default every round ends with one more query over the last few
survivors so that it yields exactly one commit.  ``literal=True`` instead
keeps all of them, which is how the reduction loop reads when transcribed
directly.
"""

from __future__ import annotations

import json
import logging
import math
import random
import threading
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .code_context import commit_contexts
from .errors import EmptyCandidateError, PreconditionError
from .llm_gateway import Abstain, extract_commit_choice
from .prompt_forge import DEFAULT_TOKEN_BUDGET, build_prompt

log = logging.getLogger(__name__)

DEFAULT_BATCH_SIZE = 10
DEFAULT_ROUNDS = 10


def tournament_queries(n: int, batch_size: int) -> int:
    """Queries one round needs for ``n`` candidates when no batch abstains."""
    if n <= 1:
        return 0
    if n <= batch_size:
        return 1
    stage = math.ceil(n / batch_size)
    return stage + tournament_queries(stage, batch_size)


class BatchSelector:
    """Picks one commit out of a batch by prompting a model.

    ``contexts`` is either a callable ``commit -> [FunctionContext]`` or a
    repository handle, in which case contexts are extracted from it.  They
    are computed once per commit and reused across rounds.
    """

    def __init__(self, gateway, record, templates=None, contexts=None,
                 budget: int = DEFAULT_TOKEN_BUDGET, max_contexts: int = 20):
        self.gateway = gateway
        self.record = record
        self.templates = templates
        self.budget = budget
        if contexts is None:
            self._provider = lambda commit: []
        elif callable(contexts):
            self._provider = contexts
        else:
            repo = contexts
            self._provider = lambda commit: commit_contexts(commit, repo, max_contexts, self.notices)
        self._cache: dict[str, list] = {}
        self._lock = threading.Lock()
        self.notices: list[str] = []
        self.log: list[dict] = []

    def contexts_for(self, commit) -> list:
        with self._lock:
            if commit.hash not in self._cache:
                self._cache[commit.hash] = self._provider(commit)
            return self._cache[commit.hash]

    def __call__(self, batch, round_index: int):
        ctx = {c.hash: self.contexts_for(c) for c in batch}
        bundle = build_prompt(self.record, batch, ctx, self.templates, self.budget)
        transcript = self.gateway.ask(bundle, round_index)
        choice = extract_commit_choice(transcript.response_text, [c.hash for c in batch])
        with self._lock:
            self.log.append({
                "round": round_index,
                "batch": [c.abbrev for c in batch],
                "prompt_hash": transcript.prompt_hash,
                "choice": choice if isinstance(choice, str) else None,
                "abstain": choice.reason if isinstance(choice, Abstain) else None,
            })
        return choice


@dataclass
class RoundOutcome:
    survivors: list[str]
    queries: int
    abstained: bool = False
    reason: str = ""

    @property
    def winner(self) -> str | Abstain:
        if self.abstained or not self.survivors:
            return Abstain(self.reason or "no_survivor")
        return self.survivors[0]


def _partition(items, size):
    return [items[i:i + size] for i in range(0, len(items), size)]


def _query_stage(batches, select, round_index, workers):
    if workers > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda b: select(b, round_index), batches))
    return [select(b, round_index) for b in batches]


def _survivor(batch, choice):
    if isinstance(choice, Abstain) or choice is None:
        return None
    for commit in batch:
        if commit.hash == choice:
            return commit
    log.warning("selector returned %s, which is not in its batch; treating as abstention", choice)
    return None


def run_round(candidates, batch_size: int, select, round_index: int = 0, literal: bool = False,
              shuffle_seed: int | None = None, workers: int = 1) -> RoundOutcome:
    """Reduce ``candidates`` to one survivor (or, literally, to at most ``batch_size``).

    ``select(batch, round_index)`` returns a commit hash from ``batch`` or an
    :class:`Abstain`.  An abstaining batch contributes nobody to the next
    stage; if a whole stage abstains the round abstains.
    """
    commits = list(candidates)
    if not commits:
        raise PreconditionError("run_round needs at least one candidate")
    if batch_size < 2:
        raise PreconditionError(f"batch_size must be at least 2, got {batch_size}")
    if shuffle_seed is not None:
        random.Random(shuffle_seed * 1_000_003 + round_index).shuffle(commits)

    queries = 0
    while len(commits) > batch_size:
        batches = _partition(commits, batch_size)
        choices = _query_stage(batches, select, round_index, workers)
        queries += len(batches)
        commits = [s for b, c in zip(batches, choices) if (s := _survivor(b, c)) is not None]
        if not commits:
            return RoundOutcome([], queries, True, "every batch abstained")

    if literal or len(commits) == 1:
        return RoundOutcome([c.hash for c in commits], queries)
    choice = select(commits, round_index)
    queries += 1
    final = _survivor(commits, choice)
    if final is None:
        reason = choice.reason if isinstance(choice, Abstain) else "invalid_candidate"
        return RoundOutcome([], queries, True, reason)
    return RoundOutcome([final.hash], queries)


@dataclass
class VoteTally:
    cve_id: str
    rounds_completed: int
    votes: dict[str, int] = field(default_factory=dict)
    abstentions: int = 0
    winners: list[str] = field(default_factory=list)
    round_survivors: list[list[str]] = field(default_factory=list)
    queries: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "cve_id": self.cve_id,
            "rounds_completed": self.rounds_completed,
            "votes": dict(self.votes),
            "abstentions": self.abstentions,
            "winners": list(self.winners),
            "round_survivors": [list(r) for r in self.round_survivors],
            "queries": list(self.queries),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> VoteTally:
        return cls(d["cve_id"], d["rounds_completed"], dict(d["votes"]), d["abstentions"],
                   list(d["winners"]), [list(r) for r in d.get("round_survivors", [])],
                   list(d.get("queries", [])))


def tally(survivors, cve_id: str = "") -> VoteTally:
    """Count round results.

    Each item is a commit hash, an :class:`Abstain` (or ``None``) for a round
    without a survivor, or a list of hashes for a round that kept several.
    Winners are every commit with the top count, in first-vote order.
    """
    counter: Counter = Counter()
    abstentions = 0
    per_round = []
    for item in survivors:
        if item is None or isinstance(item, Abstain):
            abstentions += 1
            per_round.append([])
        elif isinstance(item, str):
            counter[item] += 1
            per_round.append([item])
        else:
            items = list(item)
            if not items:
                abstentions += 1
            counter.update(items)
            per_round.append(items)
    top = max(counter.values(), default=0)
    winners = [h for h, n in counter.items() if n == top] if counter else []
    return VoteTally(cve_id, len(per_round), dict(counter), abstentions, winners, per_round)


def run_votes(candidates, rounds: int = DEFAULT_ROUNDS, batch_size: int = DEFAULT_BATCH_SIZE,
              select=None, literal: bool = False, shuffle_seed: int | None = None,
              workers: int = 1, cve_id: str | None = None) -> VoteTally:
    """Run ``rounds`` independent tournament rounds and tally the survivors.

    ``candidates`` is a CandidateSet or a plain list of commits.
    """
    if rounds < 1:
        raise PreconditionError(f"rounds must be at least 1, got {rounds}")
    commits = list(getattr(candidates, "commits", candidates))
    cve_id = cve_id if cve_id is not None else getattr(candidates, "cve_id", "")
    if not commits:
        raise EmptyCandidateError(f"{cve_id or 'vulnerability'}: no candidate commits to vote on")
    if select is None:
        raise PreconditionError("run_votes needs a selector")

    outcomes = []
    for r in range(rounds):
        outcome = run_round(list(commits), batch_size, select, r, literal, shuffle_seed, workers)
        if outcome.abstained:
            log.info("%s round %d abstained: %s", cve_id, r, outcome.reason)
        outcomes.append(outcome)

    results = [o.survivors if literal else o.winner for o in outcomes]
    result = tally(results, cve_id)
    result.queries = [o.queries for o in outcomes]
    return result
