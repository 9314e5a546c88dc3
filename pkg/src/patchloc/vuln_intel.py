"""Vulnerability records: loading, fetching, caching and fixed-version hints.

A :class:`VulnRecord` gathers the fields different databases contribute
(description from CVE, CVSS/CPE/references from NVD, patch and fixed version
from curated sets, package name from ecosystem advisories).  The rest of the
pipeline only needs one thing out of it: which repository, and which version
fixed the bug.  :func:`extract_version_hints` answers that from structured
fields, and :func:`llm_extract_version_hints` asks a model when they are
missing.
"""

from __future__ import annotations

import json
import logging
import os
import re
import time
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from string import Template

from .fsutil import atomic_write
from .errors import (
    CpeParseError,
    DatasetError,
    FetchError,
    NotFoundError,
    RecordParseError,
    ValidationError,
    VersionExtractionError,
)

log = logging.getLogger(__name__)

CVE_RE = re.compile(r"^CVE-[0-9]{4}-[0-9]{4,}$")

STRUCTURED_FIELD = "structured_field"
CPE = "cpe"
LLM_EXTRACTION = "llm_extraction"
HINT_SOURCES = (STRUCTURED_FIELD, CPE, LLM_EXTRACTION)

SOURCES = ("nvd", "osv", "local_cache")
DEFAULT_NVD_BASE_URL = "https://services.nvd.nist.gov/rest/json/cves/2.0"
DEFAULT_OSV_BASE_URL = "https://api.osv.dev/v1"

TEMPLATE_DIR = Path(__file__).with_name("templates")


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------


def normalize_cve_id(value: str) -> str:
    if not isinstance(value, str):
        raise ValidationError(f"cve_id must be a string, got {type(value).__name__}")
    cve_id = value.strip().upper()
    if not CVE_RE.match(cve_id):
        raise ValidationError(f"malformed cve_id {value!r}")
    return cve_id


@dataclass(frozen=True)
class CpeMatch:
    """A CPE 2.3 string plus the exclusive upper bound NVD attaches to it."""

    uri: str
    version_end_excluding: str | None = None

    def to_json(self):
        if self.version_end_excluding is None:
            return self.uri
        return {"criteria": self.uri, "versionEndExcluding": self.version_end_excluding}

    @classmethod
    def from_json(cls, value) -> CpeMatch:
        if isinstance(value, str):
            return cls(value)
        if isinstance(value, dict):
            uri = value.get("criteria") or value.get("uri")
            if not isinstance(uri, str):
                raise ValidationError(f"CPE entry without criteria: {value!r}")
            end = value.get("versionEndExcluding") or value.get("version_end_excluding")
            return cls(uri, str(end) if end is not None else None)
        raise ValidationError(f"unsupported CPE entry {value!r}")


@dataclass
class VulnRecord:
    cve_id: str
    description: str
    cvss: float | None = None
    cpes: list[CpeMatch] = field(default_factory=list)
    references: list[str] = field(default_factory=list)
    patch_urls: list[str] = field(default_factory=list)
    package_name: str | None = None
    update_to_version: str | None = None

    def __post_init__(self):
        self.cve_id = normalize_cve_id(self.cve_id)
        if not isinstance(self.description, str) or not self.description.strip():
            raise ValidationError(f"{self.cve_id}: description is empty")
        if self.cvss is not None:
            try:
                self.cvss = float(self.cvss)
            except (TypeError, ValueError):
                raise ValidationError(f"{self.cve_id}: cvss {self.cvss!r} is not a number") from None
            if not 0.0 <= self.cvss <= 10.0:
                raise ValidationError(f"{self.cve_id}: cvss {self.cvss} outside [0, 10]")
        self.cpes = [c if isinstance(c, CpeMatch) else CpeMatch.from_json(c) for c in self.cpes]
        self.references = [str(r) for r in self.references or []]
        self.patch_urls = [str(u) for u in self.patch_urls or []]

    def to_dict(self) -> dict:
        return {
            "cve_id": self.cve_id,
            "description": self.description,
            "cvss": self.cvss,
            "cpes": [c.to_json() for c in self.cpes],
            "references": list(self.references),
            "patch_urls": list(self.patch_urls),
            "package_name": self.package_name,
            "update_to_version": self.update_to_version,
        }

    @classmethod
    def from_dict(cls, data: dict) -> VulnRecord:
        if not isinstance(data, dict):
            raise ValidationError("record must be a JSON object")
        if "cve_id" not in data:
            raise ValidationError("missing cve_id")
        return cls(
            cve_id=data["cve_id"],
            description=data.get("description") or "",
            cvss=data.get("cvss"),
            cpes=list(data.get("cpes") or []),
            references=list(data.get("references") or []),
            patch_urls=list(data.get("patch_urls") or []),
            package_name=data.get("package_name") or None,
            update_to_version=_opt_str(data.get("update_to_version")),
        )


def _opt_str(value):
    if value is None or value == "":
        return None
    return str(value)


@dataclass(frozen=True)
class VersionHint:
    repo: str
    fixed_version: str
    source: str

    def __post_init__(self):
        if not self.fixed_version or not any(ch.isdigit() for ch in self.fixed_version):
            raise ValidationError(f"fixed version {self.fixed_version!r} has no digit")
        if self.source not in HINT_SOURCES:
            raise ValidationError(f"unknown hint source {self.source!r}")

    def to_dict(self) -> dict:
        return {"repo": self.repo, "fixed_version": self.fixed_version, "source": self.source}


@dataclass
class LineError:
    line: int
    message: str


def load_dataset(path) -> tuple[list[VulnRecord], list[LineError]]:
    """Read an NDJSON dataset.

    Returns the valid records in file order together with one
    :class:`LineError` per rejected line.  Blank lines are skipped.  Raises
    :class:`DatasetError` only when every non-blank line is invalid;
    an unreadable file raises the underlying ``OSError``.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")

    records: list[VulnRecord] = []
    errors: list[LineError] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(VulnRecord.from_dict(json.loads(line)))
        except json.JSONDecodeError as exc:
            errors.append(LineError(lineno, f"invalid JSON: {exc.msg}"))
        except ValidationError as exc:
            errors.append(LineError(lineno, str(exc)))
    for err in errors:
        log.warning("%s:%d: %s", path, err.line, err.message)
    if errors and not records:
        raise DatasetError(f"{path}: no valid records ({len(errors)} invalid lines)", errors)
    return records, errors


# ---------------------------------------------------------------------------
# Upstream parsing
# ---------------------------------------------------------------------------


def parse_nvd(payload: dict) -> VulnRecord:
    try:
        items = payload["vulnerabilities"]
    except (KeyError, TypeError):
        raise RecordParseError("NVD response has no 'vulnerabilities' list") from None
    if not items:
        raise NotFoundError("NVD returned no vulnerabilities")
    try:
        cve = items[0]["cve"]
        cve_id = cve["id"]
    except (KeyError, TypeError, IndexError):
        raise RecordParseError("NVD item lacks cve.id") from None

    description = ""
    for desc in cve.get("descriptions", []):
        if desc.get("lang") == "en":
            description = desc.get("value", "")
            break

    cvss = None
    metrics = cve.get("metrics", {})
    for key in ("cvssMetricV31", "cvssMetricV30", "cvssMetricV2"):
        entries = metrics.get(key) or []
        if entries:
            cvss = entries[0].get("cvssData", {}).get("baseScore")
            break

    cpes = []
    for config in cve.get("configurations", []):
        for node in config.get("nodes", []):
            for match in node.get("cpeMatch", []):
                if match.get("vulnerable", True) and match.get("criteria"):
                    cpes.append(CpeMatch(match["criteria"], match.get("versionEndExcluding")))

    references = [r["url"] for r in cve.get("references", []) if r.get("url")]
    try:
        return VulnRecord(cve_id, description, cvss=cvss, cpes=cpes, references=references)
    except ValidationError as exc:
        raise RecordParseError(f"NVD record invalid: {exc}") from exc


def parse_osv(payload: dict, cve_id: str) -> VulnRecord:
    if not isinstance(payload, dict) or "id" not in payload:
        raise RecordParseError("OSV response has no 'id'")
    description = payload.get("details") or payload.get("summary") or ""
    references = [r["url"] for r in payload.get("references", []) if r.get("url")]

    package_name = None
    fixed = None
    for affected in payload.get("affected", []):
        package_name = package_name or affected.get("package", {}).get("name")
        for rng in affected.get("ranges", []):
            # GIT ranges carry commit ids, not versions
            if rng.get("type") == "GIT":
                continue
            for event in rng.get("events", []):
                if "fixed" in event and fixed is None:
                    fixed = event["fixed"]
    try:
        return VulnRecord(
            cve_id,
            description,
            references=references,
            package_name=package_name,
            update_to_version=fixed,
        )
    except ValidationError as exc:
        raise RecordParseError(f"OSV record invalid: {exc}") from exc


# ---------------------------------------------------------------------------
# Fetching with a disk cache
# ---------------------------------------------------------------------------


class VulnClient:
    """Fetches vulnerability records and caches raw responses on disk.

    Cache layout is ``<cache_dir>/vuln/<source>/<CVE-ID>.json`` holding the
    response body verbatim, plus a ``.meta`` sidecar with the fetch time.
    Records placed under ``vuln/local/`` use the dataset schema and are only
    read by the ``local_cache`` source.
    """

    def __init__(
        self,
        cache_dir,
        nvd_base_url: str | None = None,
        osv_base_url: str | None = None,
        attempts: int = 3,
        backoff: float = 1.0,
        timeout: float = 30.0,
    ):
        self.cache_dir = Path(cache_dir)
        self.base_urls = {
            "nvd": nvd_base_url or os.environ.get("NVD_BASE_URL") or DEFAULT_NVD_BASE_URL,
            "osv": osv_base_url or os.environ.get("OSV_BASE_URL") or DEFAULT_OSV_BASE_URL,
        }
        self.attempts = attempts
        self.backoff = backoff
        self.timeout = timeout
        self.sleep = time.sleep

    def cache_path(self, source: str, cve_id: str) -> Path:
        return self.cache_dir / "vuln" / source / f"{cve_id}.json"

    def fetch(self, cve_id: str, source: str = "local_cache") -> VulnRecord:
        cve_id = normalize_cve_id(cve_id)
        if source not in SOURCES:
            raise ValueError(f"unknown source {source!r}; expected one of {SOURCES}")
        if source == "local_cache":
            return self._from_local(cve_id)

        path = self.cache_path(source, cve_id)
        if path.exists():
            raw = path.read_bytes()
        else:
            raw = self._download(source, cve_id)
            atomic_write(path, raw)
            meta = {"fetched_at": datetime.now(timezone.utc).isoformat(), "source": source}
            atomic_write(path.with_suffix(".meta"), json.dumps(meta).encode())
        return self._parse(source, cve_id, raw)

    def store_local(self, record: VulnRecord) -> Path:
        path = self.cache_path("local", record.cve_id)
        atomic_write(path, json.dumps(record.to_dict(), sort_keys=True).encode())
        return path

    def _from_local(self, cve_id: str) -> VulnRecord:
        local = self.cache_path("local", cve_id)
        if local.exists():
            try:
                return VulnRecord.from_dict(json.loads(local.read_text(encoding="utf-8")))
            except (json.JSONDecodeError, ValidationError) as exc:
                raise RecordParseError(f"{local}: {exc}") from exc
        for source in ("nvd", "osv"):
            path = self.cache_path(source, cve_id)
            if path.exists():
                return self._parse(source, cve_id, path.read_bytes())
        raise NotFoundError(f"{cve_id} is not in the local cache under {self.cache_dir / 'vuln'}")

    def _parse(self, source: str, cve_id: str, raw: bytes) -> VulnRecord:
        try:
            payload = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise RecordParseError(f"{source} response for {cve_id} is not JSON") from exc
        if source == "nvd":
            return parse_nvd(payload)
        return parse_osv(payload, cve_id)

    def _url(self, source: str, cve_id: str) -> str:
        base = self.base_urls[source].rstrip("/")
        if source == "nvd":
            return f"{base}?{urllib.parse.urlencode({'cveId': cve_id})}"
        return f"{base}/vulns/{urllib.parse.quote(cve_id)}"

    def _download(self, source: str, cve_id: str) -> bytes:
        url = self._url(source, cve_id)
        status = None
        for attempt in range(self.attempts):
            if attempt:
                self.sleep(self.backoff * 2 ** (attempt - 1))
            request = urllib.request.Request(url, headers={"User-Agent": "patchloc/0.1"})
            try:
                with urllib.request.urlopen(request, timeout=self.timeout) as resp:
                    return resp.read()
            except urllib.error.HTTPError as exc:
                status = exc.code
                if exc.code == 404:
                    raise NotFoundError(f"{source} has no record for {cve_id}") from exc
                if exc.code < 500 and exc.code != 429:
                    break
            except (urllib.error.URLError, TimeoutError, ConnectionError) as exc:
                log.debug("fetch %s failed: %s", url, exc)
                status = None
        raise FetchError(f"fetching {cve_id} from {source} failed (status {status})", status=status)


def fetch_record(cve_id: str, source: str, client: VulnClient) -> VulnRecord:
    return client.fetch(cve_id, source)


# ---------------------------------------------------------------------------
# Fixed-version hints
# ---------------------------------------------------------------------------


def _split_cpe(uri: str) -> list[str]:
    parts, buf, escaped = [], [], False
    for ch in uri:
        if escaped:
            buf.append(ch)
            escaped = False
        elif ch == "\\":
            escaped = True
        elif ch == ":":
            parts.append("".join(buf))
            buf = []
        else:
            buf.append(ch)
    parts.append("".join(buf))
    return parts


def parse_cpe(uri: str) -> dict:
    """Split a CPE 2.3 formatted string into its named components."""
    if not uri.startswith("cpe:2.3:"):
        raise CpeParseError(f"not a CPE 2.3 formatted string: {uri!r}")
    parts = _split_cpe(uri)
    if len(parts) != 13:
        raise CpeParseError(f"CPE 2.3 string needs 13 components, got {len(parts)}: {uri!r}")
    names = ("cpe", "spec", "part", "vendor", "product", "version", "update",
             "edition", "language", "sw_edition", "target_sw", "target_hw", "other")
    return dict(zip(names, parts))


def _dedup(hints):
    seen, out = set(), []
    for hint in hints:
        key = (hint.repo, hint.fixed_version)
        if key not in seen:
            seen.add(key)
            out.append(hint)
    return out


def _has_digit(text: str | None) -> bool:
    return bool(text) and any(ch.isdigit() for ch in text)


def extract_version_hints(record: VulnRecord) -> list[VersionHint]:
    if record.package_name and _has_digit(record.update_to_version):
        return [VersionHint(record.package_name, record.update_to_version, STRUCTURED_FIELD)]

    hints = []
    for match in record.cpes:
        try:
            cpe = parse_cpe(match.uri)
        except CpeParseError as exc:
            log.info("%s: skipping CPE: %s", record.cve_id, exc)
            continue
        if not _has_digit(match.version_end_excluding):
            continue
        repo = f"{cpe['vendor']}/{cpe['product']}"
        hints.append(VersionHint(repo, match.version_end_excluding, CPE))
    return _dedup(hints)


def load_version_template(template_dir=None) -> str:
    path = Path(template_dir or TEMPLATE_DIR) / "version_extraction.txt"
    return path.read_text(encoding="utf-8")


def render_version_prompt(record: VulnRecord, template: str | None = None) -> str:
    template = template if template is not None else load_version_template()
    return Template(template).safe_substitute(
        CVE_ID=record.cve_id, CVE_DESCRIPTION=record.description.strip()
    )


_ANSWER_RE = re.compile(r"<answer>(.*?)</answer>", re.S | re.I)
_PAIR_RE = re.compile(r"\(\s*([^,()]+?)\s*,\s*([^()]+?)\s*\)")


def parse_version_answer(response: str) -> list[tuple[str, str]]:
    match = _ANSWER_RE.search(response)
    if match is None:
        raise VersionExtractionError("model response has no <answer> tag", reason="no_answer_tag")
    body = match.group(1).strip()
    if not body:
        raise VersionExtractionError("model returned an empty <answer>", reason="empty_answer")
    return [(repo.strip("'\" "), version.strip("'\" ")) for repo, version in _PAIR_RE.findall(body)]


def llm_extract_version_hints(record: VulnRecord, gateway, template: str | None = None) -> list[VersionHint]:
    """Ask a model for (repository, fixed version) pairs.

    Pairs whose version has no digit are dropped; models tend to answer
    "unknown" or echo a function name when the description has no version.
    """
    prompt = render_version_prompt(record, template)
    transcript = gateway.complete(prompt, round_index=0)
    hints = []
    for repo, version in parse_version_answer(transcript.response_text):
        if repo and _has_digit(version):
            hints.append(VersionHint(repo, version, LLM_EXTRACTION))
        else:
            log.info("%s: discarding model pair (%s, %s)", record.cve_id, repo, version)
    return _dedup(hints)
