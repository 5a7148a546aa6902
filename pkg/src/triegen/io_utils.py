"""Shared I/O helpers: line escaping, JSONL, and transactional file writes."""
from __future__ import annotations

import json
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path


class FileFormatError(ValueError):
    """A text input could not be parsed; message carries path and line."""

    def __init__(self, path, line_no: int, reason: str) -> None:
        super().__init__(f"{path}:{line_no}: {reason}")
        self.path = str(path)
        self.line_no = line_no
        self.reason = reason


_ESCAPES = {"\\": "\\\\", "\t": "\\t", "\n": "\\n", "\r": "\\r"}
_UNESCAPES = {"\\": "\\", "t": "\t", "n": "\n", "r": "\r"}


def escape(text: str) -> str:
    """Escape backslash, tab, newline and carriage return for line-based formats."""
    return "".join(_ESCAPES.get(ch, ch) for ch in text)


def unescape(text: str) -> str:
    out: list[str] = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch != "\\":
            out.append(ch)
            i += 1
            continue
        if i + 1 >= len(text):
            raise ValueError("dangling escape at end of field")
        marker = text[i + 1]
        if marker not in _UNESCAPES:
            raise ValueError(f"unknown escape sequence \\{marker}")
        out.append(_UNESCAPES[marker])
        i += 2
    return "".join(out)


def dump_json_line(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True)


def read_jsonl(path) -> list[dict]:
    """Read a JSONL file into a list of dicts, one per non-empty line."""
    path = Path(path)
    rows: list[dict] = []
    for i, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FileFormatError(path, i, f"invalid JSON: {exc.msg}") from exc
        if not isinstance(obj, dict):
            raise FileFormatError(path, i, "expected a JSON object")
        rows.append(obj)
    return rows


class OutputStage:
    """Collects artifacts in temp files; commit moves them all into place.

    Keeps failed commands from leaving partial outputs behind: nothing is
    visible at the final paths until every artifact has been written.
    """

    def __init__(self) -> None:
        self._staged: list[tuple[str, Path]] = []

    def stage_text(self, path, text: str) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(text)
        except BaseException:
            os.unlink(tmp)
            raise
        self._staged.append((tmp, path))

    def commit(self) -> None:
        for tmp, path in self._staged:
            os.replace(tmp, path)
        self._staged.clear()

    def abort(self) -> None:
        for tmp, _ in self._staged:
            try:
                os.unlink(tmp)
            except OSError:
                pass
        self._staged.clear()


@contextmanager
def staged_writes():
    stage = OutputStage()
    try:
        yield stage
    except BaseException:
        stage.abort()
        raise
    stage.commit()


def atomic_write_text(path, text: str) -> None:
    with staged_writes() as stage:
        stage.stage_text(path, text)
