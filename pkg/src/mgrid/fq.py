"""The XML query language: parse, serialize, SQL translation, reference evaluator.

A query is a flat list of constraints over the metadata schema joined by
``and``/``or`` (AND binds tighter), plus optional ordering, limit/offset
and a no-data flag.  ``translate`` emits the one SELECT shape the
metadata store accepts; ``evaluate`` is an independent brute-force
evaluator over ground-truth records, used as the oracle in tests and by
the federation harness.
"""

from __future__ import annotations

import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

COMPARISONS = ("EQUAL", "LIKE", "GREATER", "GREATER_OR_EQUAL",
               "SMALLER", "SMALLER_OR_EQUAL", "NOT_EQUAL")
CONJUNCTIONS = ("and", "or")

_SQL_OPS = {
    "EQUAL": "=",
    "NOT_EQUAL": "<>",
    "GREATER": ">",
    "GREATER_OR_EQUAL": ">=",
    "SMALLER": "<",
    "SMALLER_OR_EQUAL": "<=",
}

# attribute path -> (SQL column, value type)
SCHEMA_ATTRS = {
    "Patient.PatientId": ("patient.patient_pseudo_id", str),
    "Patient.Sex": ("patient.sex", str),
    "Patient.BirthYear": ("patient.birth_year", int),
    "Study.StudyUid": ("study.study_uid", str),
    "Study.StudyDate": ("study.study_date", str),
    "Study.Description": ("study.description", str),
    "Series.SeriesUid": ("series.series_uid", str),
    "Series.Modality": ("series.modality", str),
    "Series.Laterality": ("series.laterality", str),
    "Series.ViewCode": ("series.view_code", str),
    "Image.SopUid": ("image.sop_uid", str),
    "Image.Lfn": ("image.lfn", str),
    "Image.Rows": ("image.rows", int),
    "Image.Columns": ("image.columns", int),
    "Image.BitsAllocated": ("image.bits_allocated", int),
}

LFN_ATTR = "Image.Lfn"

FROM_CLAUSE = (
    "FROM patient"
    " JOIN study ON study.patient_pseudo_id = patient.patient_pseudo_id"
    " JOIN series ON series.study_uid = study.study_uid"
    " JOIN image ON image.series_uid = series.series_uid"
)


class FqError(Exception):
    """Base class for query language failures."""


class XmlError(FqError):
    pass


class UnknownAttribute(FqError):
    pass


class BadComparison(FqError):
    pass


class BadConjunction(FqError):
    pass


class EmptyQuery(FqError):
    pass


class InvalidQuery(FqError):
    """Structurally valid XML violating a query invariant."""


@dataclass(frozen=True)
class Constraint:
    attribute: str
    value: str
    comparison: str = "EQUAL"
    # joins this constraint to the preceding one; ignored on the first
    conjunction: str = "and"


@dataclass
class FormalQuery:
    constraints: list[Constraint]
    order: list[tuple[str, str]] = field(default_factory=list)
    limit: int | None = None
    offset: int | None = None
    no_data: bool = False


def _is_null_test(c: Constraint) -> bool:
    return c.value == "NULL" and c.comparison in ("EQUAL", "NOT_EQUAL")


def validate(fq: FormalQuery) -> None:
    if not fq.constraints:
        raise EmptyQuery("query has no constraints")
    for c in fq.constraints:
        if c.attribute not in SCHEMA_ATTRS:
            raise UnknownAttribute(f"unknown attribute {c.attribute!r}")
        if c.comparison not in COMPARISONS:
            raise BadComparison(f"unknown comparison {c.comparison!r}")
        if c.conjunction not in CONJUNCTIONS:
            raise BadConjunction(f"unknown conjunction {c.conjunction!r}")
        if not c.value:
            raise InvalidQuery(f"empty value for {c.attribute}")
        if (SCHEMA_ATTRS[c.attribute][1] is int and c.comparison != "LIKE"
                and not _is_null_test(c)):
            try:
                int(c.value)
            except ValueError:
                raise InvalidQuery(
                    f"non-integer value {c.value!r} for numeric {c.attribute}")
    for attr, direction in fq.order:
        if attr not in SCHEMA_ATTRS:
            raise UnknownAttribute(f"unknown order attribute {attr!r}")
        if direction not in ("ASC", "DESC"):
            raise InvalidQuery(f"bad order direction {direction!r}")
    if fq.limit is not None and fq.limit < 0:
        raise InvalidQuery("negative limit")
    if fq.offset is not None:
        if fq.offset < 0:
            raise InvalidQuery("negative offset")
        if fq.limit is None:
            raise InvalidQuery("offset requires limit")


# ---------------------------------------------------------------------------
# XML wire form

def parse_fq(data: bytes) -> FormalQuery:
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        raise XmlError(f"malformed query XML: {exc}")
    if root.tag != "Query":
        raise XmlError(f"root element must be Query, got {root.tag!r}")
    fq = FormalQuery(constraints=[])
    for node in root:
        if node.tag == "Constraint":
            fq.constraints.append(_parse_constraint(node))
        elif node.tag == "QueryOrder":
            fq.order.append(_parse_order(node.text or ""))
        elif node.tag == "QueryLimit":
            fq.limit = _parse_int(node, "QueryLimit")
        elif node.tag == "QueryOffset":
            fq.offset = _parse_int(node, "QueryOffset")
        elif node.tag == "QueryNoData":
            text = (node.text or "").strip()
            if text not in ("true", "false", "1", "0"):
                raise XmlError(f"bad QueryNoData value {text!r}")
            fq.no_data = text in ("true", "1")
        else:
            raise XmlError(f"unknown element {node.tag!r} in Query")
    validate(fq)
    return fq


def _parse_constraint(node: ET.Element) -> Constraint:
    seen = {}
    for child in node:
        if child.tag in seen:
            raise XmlError(f"repeated {child.tag} in Constraint")
        if child.tag not in ("Conjunction", "Attribute", "Value", "Comparison"):
            raise XmlError(f"unknown element {child.tag!r} in Constraint")
        seen[child.tag] = child.text or ""
    if "Conjunction" not in seen:
        raise BadConjunction("Constraint without Conjunction")
    if "Attribute" not in seen:
        raise XmlError("Constraint without Attribute")
    if "Value" not in seen:
        raise XmlError("Constraint without Value")
    return Constraint(
        attribute=seen["Attribute"].strip(),
        value=seen["Value"],
        comparison=seen.get("Comparison", "EQUAL").strip() or "EQUAL",
        conjunction=seen["Conjunction"].strip(),
    )


def _parse_order(text: str) -> tuple[str, str]:
    parts = text.strip().split()
    if len(parts) == 1:
        return parts[0], "ASC"
    if len(parts) == 2 and parts[1] in ("ASC", "DESC"):
        return parts[0], parts[1]
    raise InvalidQuery(f"bad QueryOrder text {text!r}")


def _parse_int(node: ET.Element, name: str) -> int:
    try:
        return int((node.text or "").strip())
    except ValueError:
        raise XmlError(f"non-integer {name}")


def serialize_fq(fq: FormalQuery) -> bytes:
    validate(fq)
    root = ET.Element("Query")
    for c in fq.constraints:
        node = ET.SubElement(root, "Constraint")
        ET.SubElement(node, "Conjunction").text = c.conjunction
        ET.SubElement(node, "Attribute").text = c.attribute
        ET.SubElement(node, "Value").text = c.value
        ET.SubElement(node, "Comparison").text = c.comparison
    for attr, direction in fq.order:
        ET.SubElement(root, "QueryOrder").text = f"{attr} {direction}"
    if fq.limit is not None:
        ET.SubElement(root, "QueryLimit").text = str(fq.limit)
    if fq.offset is not None:
        ET.SubElement(root, "QueryOffset").text = str(fq.offset)
    if fq.no_data:
        ET.SubElement(root, "QueryNoData").text = "true"
    return ET.tostring(root, encoding="utf-8", xml_declaration=True)


# ---------------------------------------------------------------------------
# SQL translation

def _or_runs(constraints: list[Constraint]) -> list[list[Constraint]]:
    """Split the flat constraint list into AND-runs separated by 'or'."""
    runs: list[list[Constraint]] = [[constraints[0]]]
    for c in constraints[1:]:
        if c.conjunction == "or":
            runs.append([c])
        else:
            runs[-1].append(c)
    return runs


def _sql_comparison(c: Constraint) -> str:
    col, typ = SCHEMA_ATTRS[c.attribute]
    if _is_null_test(c):
        return f"{col} IS NULL" if c.comparison == "EQUAL" else f"{col} IS NOT NULL"
    if c.comparison == "LIKE":
        return f"{col} LIKE '" + c.value.replace("'", "''") + "'"
    op = _SQL_OPS[c.comparison]
    if typ is int:
        return f"{col} {op} {int(c.value)}"
    return f"{col} {op} '" + c.value.replace("'", "''") + "'"


def order_columns(fq: FormalQuery) -> list[tuple[str, str]]:
    """SQL (column, direction) sort spec with the LFN tie-break appended."""
    cols = [(SCHEMA_ATTRS[attr][0], direction) for attr, direction in fq.order]
    if "image.lfn" not in [c for c, _ in cols]:
        cols.append(("image.lfn", "ASC"))
    return cols


def translate(fq: FormalQuery) -> str:
    """Deterministic SQL text for the fixed four-table join.

    The projection is the LFN plus any columns named in the ordering (the
    caller needs their values for cross-site merging); the result order
    is always total thanks to the LFN tie-break.
    """
    validate(fq)
    select_cols = ["image.lfn"]
    for attr, _ in fq.order:
        col = SCHEMA_ATTRS[attr][0]
        if col not in select_cols:
            select_cols.append(col)
    runs = _or_runs(fq.constraints)
    run_sql = ["(" + " AND ".join(_sql_comparison(c) for c in run) + ")"
               for run in runs]
    predicate = run_sql[0] if len(run_sql) == 1 else "(" + " OR ".join(run_sql) + ")"
    sql = ("SELECT " + ", ".join(select_cols)
           + " " + FROM_CLAUSE
           + " WHERE " + predicate
           + " ORDER BY " + ", ".join(f"{c} {d}" for c, d in order_columns(fq)))
    if fq.limit is not None:
        sql += f" LIMIT {fq.limit}"
        if fq.offset is not None:
            sql += f" OFFSET {fq.offset}"
    return sql


# ---------------------------------------------------------------------------
# reference evaluator (brute force over ground-truth records)

def _like_match(value: str, pattern: str) -> bool:
    regex = "".join(".*" if ch == "%" else "." if ch == "_" else re.escape(ch)
                    for ch in pattern)
    return re.fullmatch(regex, value, flags=re.DOTALL) is not None


def _constraint_matches(c: Constraint, record: dict) -> bool:
    value = record.get(c.attribute)
    if _is_null_test(c):
        return (value is None) == (c.comparison == "EQUAL")
    if value is None:
        return False  # SQL three-valued logic: NULL never satisfies a comparison
    if c.comparison == "LIKE":
        return _like_match(str(value), c.value)
    typ = SCHEMA_ATTRS[c.attribute][1]
    if typ is int:
        left, right = int(value), int(c.value)
    else:
        left, right = str(value), c.value
    op = c.comparison
    if op == "EQUAL":
        return left == right
    if op == "NOT_EQUAL":
        return left != right
    if op == "GREATER":
        return left > right
    if op == "GREATER_OR_EQUAL":
        return left >= right
    if op == "SMALLER":
        return left < right
    return left <= right


def matches(fq: FormalQuery, record: dict) -> bool:
    return any(all(_constraint_matches(c, record) for c in run)
               for run in _or_runs(fq.constraints))


class _Descending:
    """Inverts comparison order for DESC sort keys."""

    __slots__ = ("key",)

    def __init__(self, key):
        self.key = key

    def __lt__(self, other):
        return other.key < self.key

    def __eq__(self, other):
        return other.key == self.key


def row_sort_key(order: list[tuple[str, str]], values, lfn: str):
    """Total sort key matching the store's ORDER BY semantics.

    ``values`` holds one entry per order attribute.  NULLs sort first
    ascending / last descending, like the SQL engine; ties always break
    on ascending LFN.
    """
    key = []
    for (attr, direction), value in zip(order, values):
        typ = SCHEMA_ATTRS[attr][1]
        part = (0, typ()) if value is None else (1, typ(value))
        key.append(part if direction == "ASC" else _Descending(part))
    key.append(lfn)
    return tuple(key)


def sort_key_for(fq: FormalQuery, record: dict):
    values = [record.get(attr) for attr, _ in fq.order]
    return row_sort_key(fq.order, values, record[LFN_ATTR])


def evaluate(fq: FormalQuery, records: list[dict]) -> list[str]:
    """Ordered LFN list of records matching the query."""
    validate(fq)
    hits = [r for r in records if matches(fq, r)]
    hits.sort(key=lambda r: sort_key_for(fq, r))
    lfns = [r[LFN_ATTR] for r in hits]
    if fq.offset is not None:
        lfns = lfns[fq.offset:]
    if fq.limit is not None:
        lfns = lfns[:fq.limit]
    return lfns
