"""Exception hierarchy.

Every error knows which pipeline stage raised it and carries a short
remediation hint so the CLI can print something actionable.
"""

from __future__ import annotations


class PatchLocError(Exception):
    module = "patchloc"
    hint = ""

    def __init__(self, message: str = "", *, hint: str | None = None):
        super().__init__(message)
        if hint is not None:
            self.hint = hint

    def describe(self) -> str:
        text = f"[{self.module}] {self}"
        if self.hint:
            text += f" (hint: {self.hint})"
        return text


class PreconditionError(PatchLocError, ValueError):
    hint = "check the inputs passed to this operation"


# vuln_intel -------------------------------------------------------------

class VulnIntelError(PatchLocError):
    module = "vuln_intel"


class ValidationError(VulnIntelError, ValueError):
    hint = "CVE ids look like CVE-2020-5236 and descriptions must be non-empty"


class DatasetError(VulnIntelError):
    hint = "the dataset must be NDJSON with one vulnerability object per line"

    def __init__(self, message: str, errors: list | None = None, **kw):
        super().__init__(message, **kw)
        self.errors = errors or []


class NotFoundError(VulnIntelError, LookupError):
    hint = "pass --dataset with a record for this CVE or allow a network source"


class FetchError(VulnIntelError):
    hint = "check network access and the configured base URL"

    def __init__(self, message: str, status: int | None = None, **kw):
        super().__init__(message, **kw)
        self.status = status


class RecordParseError(VulnIntelError):
    hint = "the upstream response did not have the expected shape"


class CpeParseError(VulnIntelError, ValueError):
    hint = "only CPE 2.3 formatted strings (cpe:2.3:...) are understood"


class VersionExtractionError(VulnIntelError):
    hint = "the model answer must contain an <answer> block with (repository, version) pairs"

    def __init__(self, message: str, reason: str, **kw):
        super().__init__(message, **kw)
        self.reason = reason


# repo_miner -------------------------------------------------------------

class RepoMinerError(PatchLocError):
    module = "repo_miner"


class RepoError(RepoMinerError):
    hint = "make sure the path is a git clone with tags fetched (git fetch --tags)"


class NoTagError(RepoMinerError, LookupError):
    hint = "the fixed version does not correspond to any tag; check the nearest tags listed"

    def __init__(self, message: str, nearest: list[str] | None = None, **kw):
        super().__init__(message, **kw)
        self.nearest = nearest or []


class AmbiguousTagError(RepoMinerError, LookupError):
    hint = "give a more specific fixed version"

    def __init__(self, message: str, candidates: list[str] | None = None, **kw):
        super().__init__(message, **kw)
        self.candidates = candidates or []


class EmptyCandidateError(RepoMinerError):
    hint = "the version range holds no commits; check the fixed version and its predecessor"


# code_context -----------------------------------------------------------

class ParseFailure(PatchLocError):
    module = "code_context"
    hint = "falling back to line windows"


# prompt_forge -----------------------------------------------------------

class BudgetError(PatchLocError):
    module = "prompt_forge"

    def __init__(self, message: str, minimal_budget: int, **kw):
        super().__init__(message, **kw)
        self.minimal_budget = minimal_budget
        if not self.hint:
            self.hint = f"raise --token-budget to at least {minimal_budget} or lower --batch-size"


# llm_gateway ------------------------------------------------------------

class GatewayError(PatchLocError):
    module = "llm_gateway"
    hint = "check the provider base URL, model id and PATCHLOC_API_KEY"

    def __init__(self, message: str, status: int | None = None, **kw):
        super().__init__(message, **kw)
        self.status = status


class ScriptError(GatewayError):
    hint = "the mock script ran out of matching responses; add entries or mark one with \"repeat\": true"


# eval_harness -----------------------------------------------------------

class ContractError(PatchLocError, ValueError):
    module = "eval_harness"
    hint = "Top-K scoring needs ranked (list) predictions"
