"""Enclosing-function extraction for the lines a commit touches.

The post-image of each changed file is parsed with tree-sitter and every
modified line is mapped to the innermost function definition around it.
Lines that sit outside any function (imports, globals, top-level script
code) get a window of surrounding lines instead.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import PurePosixPath

from .errors import ParseFailure, PreconditionError

log = logging.getLogger(__name__)

LANGUAGES = ("c", "cpp", "java", "go", "python", "javascript")
UNKNOWN = "unknown"
PARSED = "parsed"
WINDOW_FALLBACK = "window_fallback"

WINDOW_RADIUS = 10
DEFAULT_MAX_CONTEXTS = 20
MAX_FILE_BYTES = 1024 * 1024

_EXTENSIONS = {
    ".c": "c",
    ".cc": "cpp", ".cpp": "cpp", ".cxx": "cpp", ".hpp": "cpp", ".hh": "cpp", ".hxx": "cpp",
    ".java": "java",
    ".go": "go",
    ".py": "python",
    ".js": "javascript", ".mjs": "javascript", ".cjs": "javascript", ".jsx": "javascript",
}

FUNCTION_NODES = {
    "c": {"function_definition"},
    "cpp": {"function_definition"},
    "java": {"method_declaration", "constructor_declaration", "compact_constructor_declaration"},
    "go": {"function_declaration", "method_declaration", "func_literal"},
    "python": {"function_definition"},
    "javascript": {
        "function_declaration", "function_expression", "function", "arrow_function",
        "method_definition", "generator_function_declaration", "generator_function",
    },
}


@dataclass(frozen=True)
class FunctionContext:
    file: str
    language: str
    declaration: str
    body: str
    span: tuple[int, int]
    origin: str
    lines: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if self.span[0] > self.span[1]:
            raise ValueError(f"bad span {self.span}")
        if self.origin == PARSED and self.language == UNKNOWN:
            raise ValueError("parsed contexts need a known language")

    def as_declaration_only(self) -> FunctionContext:
        return FunctionContext(self.file, self.language, self.declaration,
                               self.declaration, self.span, self.origin, self.lines)

    def to_dict(self) -> dict:
        return {
            "file": self.file,
            "language": self.language,
            "declaration": self.declaration,
            "body": self.body,
            "span": list(self.span),
            "origin": self.origin,
            "lines": list(self.lines),
        }


def detect_language(path: str, siblings=()) -> str:
    p = PurePosixPath(path)
    ext = p.suffix.lower()
    if ext == ".h":
        stems = {PurePosixPath(s).stem for s in siblings if PurePosixPath(s).suffix.lower() == ".c"}
        return "c" if p.stem in stems else "cpp"
    return _EXTENSIONS.get(ext, UNKNOWN)


@lru_cache(maxsize=None)
def _parser(language: str):
    from tree_sitter import Language, Parser

    if language == "c":
        import tree_sitter_c as mod
    elif language == "cpp":
        import tree_sitter_cpp as mod
    elif language == "java":
        import tree_sitter_java as mod
    elif language == "go":
        import tree_sitter_go as mod
    elif language == "python":
        import tree_sitter_python as mod
    elif language == "javascript":
        import tree_sitter_javascript as mod
    else:
        raise PreconditionError(f"no grammar for language {language!r}")
    return Parser(Language(mod.language()))


def _function_nodes(root, kinds):
    found, stack = [], [root]
    while stack:
        node = stack.pop()
        if node.is_named and node.type in kinds:
            found.append(node)
        stack.extend(node.children)
    return found


def _end_line(node) -> int:
    row, col = node.end_point
    # a node ending at column 0 stops before that line starts
    return row if col == 0 and row > node.start_point[0] else row + 1


def window_context(path: str, language: str, source_lines: list[str], line: int,
                   radius: int = WINDOW_RADIUS) -> FunctionContext:
    start = max(1, line - radius)
    end = max(start, min(len(source_lines), line + radius))
    body = "\n".join(source_lines[start - 1:end])
    return FunctionContext(path, language, "", body, (start, end), WINDOW_FALLBACK, (line,))


def enclosing_functions(source: str, language: str, lines, path: str = "") -> list[FunctionContext]:
    """Innermost function around each modified line, deduplicated by span."""
    lines = sorted(set(lines))
    if language not in LANGUAGES:
        raise PreconditionError(f"cannot parse language {language!r}")
    if not lines:
        raise PreconditionError("no modified lines given")
    source_lines = _split_lines(source)
    if lines[0] < 1 or lines[-1] > max(1, len(source_lines)):
        raise PreconditionError(f"modified lines {lines[0]}..{lines[-1]} outside 1..{len(source_lines)}")

    data = source.encode("utf-8")
    tree = _parser(language).parse(data)
    nodes = _function_nodes(tree.root_node, FUNCTION_NODES[language])
    if tree.root_node.has_error and not nodes:
        raise ParseFailure(f"{path or language}: source does not parse")

    spans = [(n.start_point[0] + 1, _end_line(n), n.end_byte - n.start_byte, n) for n in nodes]
    by_node: dict[tuple, tuple] = {}
    outside: list[int] = []
    for line in lines:
        around = [s for s in spans if s[0] <= line <= s[1]]
        if not around:
            outside.append(line)
            continue
        start, end, _, node = min(around, key=lambda s: (s[2], -s[0]))
        key = (node.start_byte, node.end_byte)
        if key not in by_node:
            by_node[key] = (node, start, end, [])
        by_node[key][3].append(line)

    results = []
    for node, start, end, covered in by_node.values():
        body_text = data[node.start_byte:node.end_byte].decode("utf-8", errors="replace")
        body_node = node.child_by_field_name("body")
        if body_node is not None and body_node.start_byte > node.start_byte:
            declaration = data[node.start_byte:body_node.start_byte].decode("utf-8", errors="replace").rstrip()
        else:
            declaration = body_text.split("\n", 1)[0].rstrip()
        results.append(FunctionContext(path, language, declaration, body_text,
                                       (start, end), PARSED, tuple(covered)))

    if outside:
        results.extend(_windows(source_lines, language, outside, path))
    results.sort(key=lambda c: (c.span[0], c.span[1]))
    return results


def _split_lines(source: str) -> list[str]:
    source_lines = source.split("\n")
    if source.endswith("\n"):
        source_lines.pop()
    return source_lines


def fallback_contexts(source: str, language: str, lines, path: str = "") -> list[FunctionContext]:
    return _windows(_split_lines(source), language, lines, path)


def _windows(source_lines, language, lines, path) -> list[FunctionContext]:
    merged: dict[tuple, FunctionContext] = {}
    for line in sorted(set(lines)):
        ctx = window_context(path, language, source_lines, line)
        prev = merged.get(ctx.span)
        if prev is not None:
            ctx = FunctionContext(path, language, "", prev.body, prev.span, WINDOW_FALLBACK, prev.lines + (line,))
        merged[ctx.span] = ctx
    return list(merged.values())


def _modified_lines(commit, path: str, deleted: bool) -> list[int]:
    lines: list[int] = []
    for hunk in commit.hunks:
        if hunk.file != path:
            continue
        if deleted:
            lines.extend(n for n, _ in hunk.removed_lines)
        elif hunk.added_lines:
            lines.extend(n for n, _ in hunk.added_lines)
        else:
            # pure removal inside a surviving file: anchor at the line before the gap
            lines.append(max(1, hunk.new_start))
    return lines


def commit_contexts(commit, repo, max_contexts: int = DEFAULT_MAX_CONTEXTS,
                    notices: list | None = None) -> list[FunctionContext]:
    """Contexts for every file a commit changes, best-covered first.

    Deleted files are read from the parent commit.  Binary files and files
    over 1 MB are skipped; a message for each lands in ``notices``.
    """
    notices = notices if notices is not None else []
    contexts: list[FunctionContext] = []
    for path in commit.files:
        deleted = path in commit.deleted_files
        lines = _modified_lines(commit, path, deleted)
        rev = f"{commit.hash}^" if deleted else commit.hash
        if not lines:
            # git reports binary changes without hunks
            raw = repo.show_file(rev, path) if not deleted else None
            if raw is not None and b"\x00" in raw[:8000]:
                notices.append(f"{commit.abbrev}:{path}: skipped binary file")
            continue
        size = repo.file_size(rev, path)
        if size is None:
            notices.append(f"{commit.abbrev}:{path}: not readable at {rev}")
            continue
        if size > MAX_FILE_BYTES:
            notices.append(f"{commit.abbrev}:{path}: skipped, {size} bytes exceeds {MAX_FILE_BYTES}")
            continue
        raw = repo.show_file(rev, path) or b""
        if b"\x00" in raw:
            notices.append(f"{commit.abbrev}:{path}: skipped binary file")
            continue
        text = raw.decode("utf-8", errors="replace")
        n_lines = len(text.split("\n")) - (1 if text.endswith("\n") else 0)
        if n_lines < 1:
            continue
        lines = sorted({min(max(1, n), n_lines) for n in lines})

        language = detect_language(path, commit.files)
        if language == UNKNOWN:
            contexts.extend(fallback_contexts(text, UNKNOWN, lines, path))
            continue
        try:
            contexts.extend(enclosing_functions(text, language, lines, path))
        except ParseFailure as exc:
            notices.append(str(exc))
            contexts.extend(fallback_contexts(text, language, lines, path))

    for note in notices:
        log.info("%s", note)
    ranked = sorted(enumerate(contexts), key=lambda item: (-len(item[1].lines), item[0]))
    return [ctx for _, ctx in ranked[:max_contexts]]
