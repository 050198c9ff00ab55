"""Relational metadata store behind the local query handler.

Four tables (patient/study/series/image) persisted in sqlite with
full-synchronous WAL journaling, so an acknowledged ingest survives a
process kill.  The only SQL accepted by :meth:`execute_sql` is the
SELECT shape emitted by :func:`mgrid.fq.translate`; anything else is
rejected before reaching the engine.
"""

from __future__ import annotations

import re
import sqlite3
import threading

_SCHEMA = """
CREATE TABLE IF NOT EXISTS patient (
    patient_pseudo_id TEXT PRIMARY KEY,
    sex TEXT CHECK (sex IN ('F', 'M', 'O') OR sex IS NULL),
    birth_year INTEGER
);
CREATE TABLE IF NOT EXISTS study (
    study_uid TEXT PRIMARY KEY,
    patient_pseudo_id TEXT NOT NULL REFERENCES patient(patient_pseudo_id),
    study_date TEXT,
    description TEXT
);
CREATE TABLE IF NOT EXISTS series (
    series_uid TEXT PRIMARY KEY,
    study_uid TEXT NOT NULL REFERENCES study(study_uid),
    modality TEXT,
    laterality TEXT CHECK (laterality IN ('L', 'R') OR laterality IS NULL),
    view_code TEXT
);
CREATE TABLE IF NOT EXISTS image (
    sop_uid TEXT PRIMARY KEY,
    series_uid TEXT NOT NULL REFERENCES series(series_uid),
    lfn TEXT NOT NULL UNIQUE,
    rows INTEGER NOT NULL CHECK (rows > 0),
    columns INTEGER NOT NULL CHECK (columns > 0),
    bits_allocated INTEGER,
    pixel_spacing_x REAL,
    pixel_spacing_y REAL
);
"""

# one joined row per image, used by fetch_metadata
METADATA_COLUMNS = (
    "patient.patient_pseudo_id", "patient.sex", "patient.birth_year",
    "study.study_uid", "study.study_date", "study.description",
    "series.series_uid", "series.modality", "series.laterality",
    "series.view_code",
    "image.sop_uid", "image.lfn", "image.rows", "image.columns",
    "image.bits_allocated", "image.pixel_spacing_x", "image.pixel_spacing_y",
)

_FROM_CLAUSE = (
    "FROM patient"
    " JOIN study ON study.patient_pseudo_id = patient.patient_pseudo_id"
    " JOIN series ON series.study_uid = study.study_uid"
    " JOIN image ON image.series_uid = series.series_uid"
)

_COLUMN_RE = r"(?:patient|study|series|image)\.[a-z_]+"
_SQL_SHAPE_RE = re.compile(
    r"^SELECT image\.lfn(?:, " + _COLUMN_RE + r")* "
    + re.escape(_FROM_CLAUSE)
    + r" WHERE [^;]+"
    + r" ORDER BY " + _COLUMN_RE + r" (?:ASC|DESC)"
    + r"(?:, " + _COLUMN_RE + r" (?:ASC|DESC))*"
    + r"(?: LIMIT \d+(?: OFFSET \d+)?)?$"
)


def da_to_iso(text: str | None) -> str | None:
    """DICOM DA value ("YYYYMMDD") to ISO-8601 date text."""
    if text and len(text) == 8 and text.isdigit():
        return f"{text[:4]}-{text[4:6]}-{text[6:]}"
    return text


class StoreError(Exception):
    pass


class DuplicateSopUid(StoreError):
    pass


class ConstraintViolation(StoreError):
    pass


class SqlShapeError(StoreError):
    pass


class MetadataStore:
    """Thread-safe store; writes serialized, durable on commit."""

    def __init__(self, db_path: str):
        self._lock = threading.RLock()
        self._conn = sqlite3.connect(db_path, timeout=30.0,
                                     check_same_thread=False)
        self._conn.execute("PRAGMA journal_mode = WAL")
        self._conn.execute("PRAGMA synchronous = FULL")
        self._conn.execute("PRAGMA foreign_keys = ON")
        self._conn.execute("PRAGMA case_sensitive_like = ON")
        with self._lock, self._conn:
            self._conn.executescript(_SCHEMA)

    def close(self) -> None:
        with self._lock:
            self._conn.close()

    def ingest(self, summary: dict, lfn: str) -> None:
        """Upsert patient/study/series and insert the image row.

        Re-ingesting the same summary with the same LFN is a no-op; the
        same SOP UID under a different LFN is an error.
        """
        sop_uid = summary.get("sop_uid")
        if not sop_uid:
            raise ConstraintViolation("summary without sop_uid")
        for dim in ("rows", "columns"):
            v = summary.get(dim)
            if not isinstance(v, int) or v <= 0:
                raise ConstraintViolation(f"bad {dim}: {v!r}")
        birth = summary.get("birth_date")
        birth_year = int(birth[:4]) if birth and birth[:4].isdigit() else None
        spacing = summary.get("pixel_spacing") or (None, None)
        with self._lock:
            existing = self._conn.execute(
                "SELECT lfn FROM image WHERE sop_uid = ?", (sop_uid,)).fetchone()
            if existing is not None:
                if existing[0] != lfn:
                    raise DuplicateSopUid(
                        f"sop_uid {sop_uid} already filed under {existing[0]}")
                return
            try:
                with self._conn:
                    self._conn.execute(
                        "INSERT INTO patient (patient_pseudo_id, sex, birth_year)"
                        " VALUES (?, ?, ?)"
                        " ON CONFLICT(patient_pseudo_id) DO UPDATE SET"
                        " sex = excluded.sex, birth_year = excluded.birth_year",
                        (summary.get("patient_id"), summary.get("sex"), birth_year))
                    self._conn.execute(
                        "INSERT INTO study (study_uid, patient_pseudo_id,"
                        " study_date, description) VALUES (?, ?, ?, ?)"
                        " ON CONFLICT(study_uid) DO UPDATE SET"
                        " study_date = excluded.study_date,"
                        " description = excluded.description",
                        (summary.get("study_uid"), summary.get("patient_id"),
                         da_to_iso(summary.get("study_date")),
                         summary.get("study_description")))
                    self._conn.execute(
                        "INSERT INTO series (series_uid, study_uid, modality,"
                        " laterality, view_code) VALUES (?, ?, ?, ?, ?)"
                        " ON CONFLICT(series_uid) DO UPDATE SET"
                        " modality = excluded.modality,"
                        " laterality = excluded.laterality,"
                        " view_code = excluded.view_code",
                        (summary.get("series_uid"), summary.get("study_uid"),
                         summary.get("modality"), summary.get("laterality"),
                         summary.get("view_code")))
                    self._conn.execute(
                        "INSERT INTO image (sop_uid, series_uid, lfn, rows,"
                        " columns, bits_allocated, pixel_spacing_x,"
                        " pixel_spacing_y) VALUES (?, ?, ?, ?, ?, ?, ?, ?)",
                        (sop_uid, summary.get("series_uid"), lfn,
                         summary["rows"], summary["columns"],
                         summary.get("bits_allocated"), spacing[0], spacing[1]))
            except sqlite3.IntegrityError as exc:
                raise ConstraintViolation(str(exc))

    def execute_sql(self, sql: str) -> list[tuple]:
        """Run one translated SELECT; rows in the statement's projection order."""
        if not _SQL_SHAPE_RE.match(sql):
            raise SqlShapeError(f"statement outside the supported grammar: {sql!r}")
        with self._lock:
            return self._conn.execute(sql).fetchall()

    def fetch_metadata(self, lfns: list[str]) -> dict[str, dict]:
        """Joined metadata row per known LFN; unknown LFNs are omitted."""
        if not lfns:
            return {}
        out: dict[str, dict] = {}
        cols = ", ".join(METADATA_COLUMNS)
        with self._lock:
            for chunk_start in range(0, len(lfns), 500):
                chunk = lfns[chunk_start:chunk_start + 500]
                marks = ", ".join("?" for _ in chunk)
                rows = self._conn.execute(
                    f"SELECT {cols} {_FROM_CLAUSE}"
                    f" WHERE image.lfn IN ({marks})", chunk).fetchall()
                for row in rows:
                    record = dict(zip(METADATA_COLUMNS, row))
                    out[record["image.lfn"]] = record
        return out

    def counts(self) -> dict[str, int]:
        with self._lock:
            return {table: self._conn.execute(
                        f"SELECT COUNT(*) FROM {table}").fetchone()[0]
                    for table in ("patient", "study", "series", "image")}
