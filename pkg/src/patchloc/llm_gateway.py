"""Chat-completion access with a transcript cache, plus offline stand-ins.

:class:`LiveGateway` talks to any OpenAI-style ``/chat/completions``
endpoint.  :class:`ScriptedGateway` replays canned answers from an NDJSON
script, :class:`ResponderGateway` wraps a Python callable, and
:class:`ReplayGateway` serves only what is already cached.  All of them
share the cache, keyed by prompt text, model id and round index so that
each voting round stays an independent sample.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
import urllib.error
import urllib.request
from dataclasses import asdict, dataclass
from pathlib import Path

from .errors import GatewayError, ScriptError
from .fsutil import atomic_write

log = logging.getLogger(__name__)

DEFAULT_MODEL = "gpt-4o-mini"
DEFAULT_BASE_URL = "https://api.openai.com/v1"
DEFAULT_TEMPERATURE = 0.7
API_KEY_ENV = "PATCHLOC_API_KEY"
BASE_URL_ENV = "PATCHLOC_LLM_BASE_URL"


def prompt_hash(text: str, model_id: str, round_index: int) -> str:
    blob = json.dumps([text, model_id, int(round_index)], ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class DialogueTranscript:
    prompt_hash: str
    request_text: str
    response_text: str
    model_id: str
    latency_ms: float
    round_index: int
    cached: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("cached")
        return d


class Gateway:
    """Base class; subclasses implement :meth:`_call`."""

    def __init__(self, model_id: str = DEFAULT_MODEL, cache_dir=None, use_cache: bool = True,
                 max_in_flight: int = 4):
        self.model_id = model_id
        self.cache_dir = Path(cache_dir) / "llm" if cache_dir else None
        self.use_cache = use_cache and self.cache_dir is not None
        self.upstream_calls = 0
        self.cache_hits = 0
        self._slots = threading.BoundedSemaphore(max(1, max_in_flight))
        self._count_lock = threading.Lock()

    def _call(self, text: str, round_index: int) -> str:
        raise NotImplementedError

    def _cache_path(self, digest: str) -> Path:
        return self.cache_dir / f"{digest}.json"

    def lookup(self, text: str, round_index: int) -> DialogueTranscript | None:
        if not self.use_cache:
            return None
        path = self._cache_path(prompt_hash(text, self.model_id, round_index))
        if not path.exists():
            return None
        data = json.loads(path.read_text(encoding="utf-8"))
        return DialogueTranscript(**data, cached=True)

    def complete(self, text: str, round_index: int = 0) -> DialogueTranscript:
        hit = self.lookup(text, round_index)
        if hit is not None:
            with self._count_lock:
                self.cache_hits += 1
            return hit
        digest = prompt_hash(text, self.model_id, round_index)
        with self._slots:
            started = time.perf_counter()
            response = self._call(text, round_index)
            latency = (time.perf_counter() - started) * 1000.0
        with self._count_lock:
            self.upstream_calls += 1
        transcript = DialogueTranscript(digest, text, response, self.model_id, round(latency, 3), round_index)
        if self.use_cache:
            payload = json.dumps(transcript.to_dict(), ensure_ascii=False, sort_keys=True)
            atomic_write(self._cache_path(digest), payload.encode("utf-8"))
        return transcript

    def ask(self, bundle, round_index: int = 0) -> DialogueTranscript:
        return self.complete(bundle.text, round_index)


class LiveGateway(Gateway):
    def __init__(self, model_id: str = DEFAULT_MODEL, base_url: str | None = None,
                 temperature: float = DEFAULT_TEMPERATURE, api_key: str | None = None,
                 attempts: int = 3, backoff: float = 1.0, timeout: float = 120.0, **kw):
        super().__init__(model_id, **kw)
        self.base_url = (base_url or os.environ.get(BASE_URL_ENV) or DEFAULT_BASE_URL).rstrip("/")
        self.temperature = temperature
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self.attempts = attempts
        self.backoff = backoff
        self.timeout = timeout
        self.sleep = time.sleep

    def _call(self, text: str, round_index: int) -> str:
        body = json.dumps({
            "model": self.model_id,
            "messages": [{"role": "user", "content": text}],
            "temperature": self.temperature,
        }).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        url = f"{self.base_url}/chat/completions"

        status = None
        for attempt in range(self.attempts):
            if attempt:
                self.sleep(self.backoff * 2 ** (attempt - 1))
            request = urllib.request.Request(url, data=body, headers=headers, method="POST")
            try:
                with urllib.request.urlopen(request, timeout=self.timeout) as resp:
                    payload = json.loads(resp.read())
                return payload["choices"][0]["message"]["content"] or ""
            except urllib.error.HTTPError as exc:
                status = exc.code
                if exc.code < 500 and exc.code != 429:
                    raise GatewayError(f"provider rejected the request with HTTP {exc.code}", status=exc.code) from exc
                log.warning("provider returned %s (attempt %d/%d)", exc.code, attempt + 1, self.attempts)
            except (KeyError, IndexError, TypeError, json.JSONDecodeError) as exc:
                raise GatewayError(f"unexpected provider response: {exc}") from exc
            except (urllib.error.URLError, TimeoutError, ConnectionError) as exc:
                log.warning("provider unreachable: %s (attempt %d/%d)", exc, attempt + 1, self.attempts)
        raise GatewayError(f"provider call failed after {self.attempts} attempts", status=status)


class ScriptedGateway(Gateway):
    """Answers from a list of ``{"match", "response", "repeat"?}`` entries.

    For each prompt the first entry whose ``match`` is ``"*"`` or a
    substring of the prompt, and which has not been used up, supplies the
    response.  Entries are used once unless ``repeat`` is true.
    """

    def __init__(self, entries, model_id: str = DEFAULT_MODEL, **kw):
        super().__init__(model_id, **kw)
        self.entries = [dict(e) for e in entries]
        for i, entry in enumerate(self.entries):
            if "match" not in entry or "response" not in entry:
                raise ScriptError(f"script entry {i + 1} needs 'match' and 'response'")
        self._used = [False] * len(self.entries)
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path, **kw) -> ScriptedGateway:
        entries = []
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                entries.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ScriptError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
        return cls(entries, **kw)

    def _call(self, text: str, round_index: int) -> str:
        with self._lock:
            for i, entry in enumerate(self.entries):
                if self._used[i]:
                    continue
                if entry["match"] == "*" or entry["match"] in text:
                    if not entry.get("repeat"):
                        self._used[i] = True
                    return entry["response"]
        raise ScriptError("no unused script entry matches the prompt")


class ResponderGateway(Gateway):
    def __init__(self, responder, model_id: str = DEFAULT_MODEL, **kw):
        super().__init__(model_id, **kw)
        self.responder = responder

    def _call(self, text: str, round_index: int) -> str:
        return self.responder(text, round_index)


class ReplayGateway(Gateway):
    def _call(self, text: str, round_index: int) -> str:
        digest = prompt_hash(text, self.model_id, round_index)
        raise GatewayError(f"replay mode: no cached transcript {digest[:12]} for round {round_index}",
                           hint="run once with --provider live or mock to fill the cache")


# ---------------------------------------------------------------------------
# Reading the model's choice
# ---------------------------------------------------------------------------

NONE_FOUND = "none_found"
AMBIGUOUS_PREFIX = "ambiguous_prefix"
INVALID_CANDIDATE = "invalid_candidate"

_ANSWER_RE = re.compile(r"<answer>(.*?)</answer>", re.S | re.I)
_HEX_RE = re.compile(r"(?<![0-9a-f])[0-9a-f]{7,40}(?![0-9a-f])")


@dataclass(frozen=True)
class Abstain:
    reason: str
    detail: str = ""


def _tokens(response: str) -> list[str]:
    lowered = response.lower()
    inside = [t for block in _ANSWER_RE.findall(lowered) for t in _HEX_RE.findall(block)]
    return inside + _HEX_RE.findall(lowered)


def extract_commit_choice(response: str, valid) -> str | Abstain:
    """Return the member of ``valid`` the response names, or an :class:`Abstain`.

    Ids inside ``<answer>`` tags are tried first, then any hex run of 7 to
    40 characters.  A token matches a member when either is a prefix of the
    other.
    """
    valid = [v.lower() for v in valid]
    if not valid:
        raise ValueError("valid must not be empty")
    tokens = _tokens(response)
    if not tokens:
        return Abstain(NONE_FOUND)
    ambiguous = None
    for i, token in enumerate(tokens):
        hits = sorted({v for v in valid if v.startswith(token) or token.startswith(v)})
        if len(hits) == 1:
            rest = {t for t in tokens[i + 1:] if not (hits[0].startswith(t) or t.startswith(hits[0]))}
            if rest:
                log.debug("response also names %s; keeping %s", sorted(rest), hits[0][:7])
            return hits[0]
        if len(hits) > 1 and ambiguous is None:
            ambiguous = token
    if ambiguous is not None:
        return Abstain(AMBIGUOUS_PREFIX, ambiguous)
    return Abstain(INVALID_CANDIDATE, tokens[0])
