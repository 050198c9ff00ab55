"""Virtual file catalogue: hierarchical logical names over site storage.

Each entry maps an absolute, slash-separated logical file name (LFN) to
a freshly minted 128-bit GUID and a physical file under the node's data
directory.  A node only indexes files it stores itself; the global view
across sites comes from the federation layer.
"""

from __future__ import annotations

import os
import re
import secrets
import sqlite3
import threading
from dataclasses import dataclass
from datetime import datetime, timezone


class CatalogueError(Exception):
    pass


class LfnExists(CatalogueError):
    pass


class BadLfn(CatalogueError):
    pass


class BadPattern(CatalogueError):
    pass


class NotFound(CatalogueError):
    pass


class NotLocal(CatalogueError):
    """Entry exists but the physical file lives at another site."""


@dataclass(frozen=True)
class CatalogueEntry:
    lfn: str
    guid: str
    site_id: str
    physical_path: str
    size_bytes: int
    created_at: str


_LFN_SEGMENT_RE = re.compile(r"^[A-Za-z0-9._+-]+$")


def validate_lfn(lfn: str) -> list[str]:
    """Check LFN shape; returns its path segments."""
    if not lfn.startswith("/") or lfn.endswith("/"):
        raise BadLfn(f"LFN must be an absolute path: {lfn!r}")
    segments = lfn[1:].split("/")
    for seg in segments:
        if not _LFN_SEGMENT_RE.match(seg) or seg in (".", ".."):
            raise BadLfn(f"bad LFN segment {seg!r} in {lfn!r}")
    return segments


def _compile_segment(pattern: str) -> re.Pattern:
    if "**" in pattern:
        raise BadPattern(f"'**' must be a whole segment, not {pattern!r}")
    out = "".join("[^/]*" if ch == "*" else re.escape(ch) for ch in pattern)
    return re.compile(f"^{out}$")


def _match_segments(pat: list[str], segs: list[str]) -> bool:
    if not pat:
        return not segs
    if pat[0] == "**":
        return any(_match_segments(pat[1:], segs[i:])
                   for i in range(len(segs) + 1))
    if not segs or not _compile_segment(pat[0]).match(segs[0]):
        return False
    return _match_segments(pat[1:], segs[1:])


def glob_match(pattern: str, lfn: str) -> bool:
    """Match an LFN against a glob with ``*`` (one segment) and ``**``."""
    if not pattern.startswith("/"):
        raise BadPattern(f"pattern must be absolute: {pattern!r}")
    pat = pattern[1:].split("/")
    for seg in pat:
        if seg != "**":
            _compile_segment(seg)  # validates embedded '**'
    return _match_segments(pat, lfn[1:].split("/"))


class FileCatalogue:
    """Per-site catalogue; entries persisted in sqlite, payloads on disk."""

    def __init__(self, db_path: str, files_dir: str, site_id: str):
        self.site_id = site_id
        self.files_dir = files_dir
        self._lock = threading.RLock()
        self._conn = sqlite3.connect(db_path, timeout=30.0,
                                     check_same_thread=False)
        self._conn.execute("PRAGMA journal_mode = WAL")
        self._conn.execute("PRAGMA synchronous = FULL")
        with self._lock, self._conn:
            self._conn.execute(
                "CREATE TABLE IF NOT EXISTS catalogue ("
                " lfn TEXT PRIMARY KEY,"
                " guid TEXT NOT NULL UNIQUE,"
                " site_id TEXT NOT NULL,"
                " physical_path TEXT NOT NULL,"
                " size_bytes INTEGER NOT NULL,"
                " created_at TEXT NOT NULL)")

    def close(self) -> None:
        with self._lock:
            self._conn.close()

    def _physical_path(self, lfn: str) -> str:
        return os.path.join(self.files_dir, *validate_lfn(lfn))

    def add_file(self, data: bytes, lfn: str, site_id: str | None = None) -> CatalogueEntry:
        site_id = site_id or self.site_id
        path = self._physical_path(lfn)
        with self._lock:
            if self._row(lfn) is not None:
                raise LfnExists(lfn)
            os.makedirs(os.path.dirname(path), exist_ok=True)
            tmp = path + ".part"
            with open(tmp, "wb") as fh:
                fh.write(data)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, path)
            entry = CatalogueEntry(
                lfn=lfn,
                guid=secrets.token_hex(16),
                site_id=site_id,
                physical_path=path,
                size_bytes=len(data),
                created_at=datetime.now(timezone.utc).isoformat(),
            )
            with self._conn:
                self._conn.execute(
                    "INSERT INTO catalogue VALUES (?, ?, ?, ?, ?, ?)",
                    (entry.lfn, entry.guid, entry.site_id, entry.physical_path,
                     entry.size_bytes, entry.created_at))
            return entry

    def _row(self, lfn: str):
        return self._conn.execute(
            "SELECT lfn, guid, site_id, physical_path, size_bytes, created_at"
            " FROM catalogue WHERE lfn = ?", (lfn,)).fetchone()

    def entry(self, lfn: str) -> CatalogueEntry | None:
        with self._lock:
            row = self._row(lfn)
        return CatalogueEntry(*row) if row else None

    def find(self, lfn_glob: str) -> list[str]:
        """All LFNs matching the glob, ascending lexicographically."""
        with self._lock:
            lfns = [r[0] for r in
                    self._conn.execute("SELECT lfn FROM catalogue").fetchall()]
        return sorted(lfn for lfn in lfns if glob_match(lfn_glob, lfn))

    def get_file(self, lfn: str) -> bytes:
        entry = self.entry(lfn)
        if entry is None:
            raise NotFound(lfn)
        if entry.site_id != self.site_id:
            raise NotLocal(f"{lfn} is stored at site {entry.site_id}")
        with open(entry.physical_path, "rb") as fh:
            return fh.read()

    def all_lfns(self) -> list[str]:
        with self._lock:
            return sorted(r[0] for r in
                          self._conn.execute("SELECT lfn FROM catalogue"))

    def register(self, entry: CatalogueEntry) -> None:
        """Insert a bare entry without storing bytes (tests, foreign sites)."""
        with self._lock, self._conn:
            self._conn.execute(
                "INSERT INTO catalogue VALUES (?, ?, ?, ?, ?, ?)",
                (entry.lfn, entry.guid, entry.site_id, entry.physical_path,
                 entry.size_bytes, entry.created_at))
