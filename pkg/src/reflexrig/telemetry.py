"""Newline-delimited JSON run records.

A run file is a header record, one record per frame, and a trailing summary.
Every record is a single JSON object on its own line, so files diff cleanly
and stream without an index. Floats are written with Python's shortest
round-trip repr, which makes serialization bit-exact, and the run hash is a
SHA-256 over the canonical form of the header and frames with volatile keys
(wall-clock times) removed. Two runs of the same scenario with the same
inputs therefore produce the same hash, which is what `replay --verify`
checks.
"""

from __future__ import annotations

import hashlib
import json
import time
from typing import Iterable, Iterator, TextIO

SCHEMA_VERSION = 1

# Keys carrying wall-clock measurements; excluded from the run hash.
VOLATILE_KEYS = frozenset({"wall_ns", "created_unix"})


class TelemetryError(ValueError):
    pass


def scrub(obj):
    """Copy of a record tree without volatile keys."""
    if isinstance(obj, dict):
        return {k: scrub(v) for k, v in obj.items() if k not in VOLATILE_KEYS}
    if isinstance(obj, list):
        return [scrub(v) for v in obj]
    return obj


def canonical(record: dict) -> str:
    return json.dumps(scrub(record), sort_keys=True, separators=(",", ":"))


class RunHasher:
    """Incremental hash over the header and frame records."""

    def __init__(self) -> None:
        self._h = hashlib.sha256()

    def add(self, record: dict) -> None:
        self._h.update(canonical(record).encode("utf-8"))
        self._h.update(b"\n")

    def hexdigest(self) -> str:
        return self._h.hexdigest()


def run_hash(header: dict, frames: Iterable[dict]) -> str:
    h = RunHasher()
    h.add(header)
    for f in frames:
        h.add(f)
    return h.hexdigest()


class TelemetryWriter:
    """Streams records to a file while hashing header + frames."""

    def __init__(self, path: str) -> None:
        self.path = path
        self._fh: TextIO | None = open(path, "w", encoding="utf-8")
        self._hasher = RunHasher()
        self.frames = 0
        self._wrote_header = False

    def _emit(self, record: dict) -> None:
        assert self._fh is not None, "writer is closed"
        self._fh.write(json.dumps(record, separators=(",", ":")))
        self._fh.write("\n")

    def write_header(self, header: dict) -> None:
        if self._wrote_header:
            raise TelemetryError("header already written")
        record = {"type": "header", "schema": SCHEMA_VERSION,
                  "created_unix": time.time(), **header}
        self._emit(record)
        self._hasher.add(record)
        self._wrote_header = True

    def write_frame(self, record: dict) -> None:
        if not self._wrote_header:
            raise TelemetryError("frame before header")
        record = {"type": "frame", **record}
        self._emit(record)
        self._hasher.add(record)
        self.frames += 1

    def write_fault(self, message: str, frame: int, detail: dict | None = None) -> None:
        self._emit({"type": "fault", "frame": frame, "error": message,
                    "detail": detail or {}})

    def write_summary(self, stats: dict) -> str:
        """Append the summary (carrying the run hash) and return the hash."""
        digest = self._hasher.hexdigest()
        self._emit({"type": "summary", **stats, "hash": digest})
        return digest

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self) -> "TelemetryWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_records(path: str) -> Iterator[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as e:
                raise TelemetryError(f"{path}:{line_no}: {e.msg}") from e


def load_run(path: str) -> tuple[dict, list[dict], dict | None]:
    """Read a full run file into (header, frames, summary)."""
    header: dict | None = None
    frames: list[dict] = []
    summary: dict | None = None
    for rec in read_records(path):
        kind = rec.get("type")
        if kind == "header":
            if header is not None:
                raise TelemetryError(f"{path}: duplicate header")
            header = rec
        elif kind == "frame":
            frames.append(rec)
        elif kind == "summary":
            summary = rec
        elif kind == "fault":
            pass  # fault records ride along; callers inspect them via read_records
        else:
            raise TelemetryError(f"{path}: unknown record type {kind!r}")
    if header is None:
        raise TelemetryError(f"{path}: missing header record")
    return header, frames, summary
