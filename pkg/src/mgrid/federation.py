"""Scatter-gather query execution across peer nodes.

A federated query runs the same formal query locally and on every peer
not yet visited, then k-way-merges the per-site results on the query's
order keys.  Loop protection is a visited set carried in the request
plus a hop-count ttl; duplicates (possible on cyclic topologies) are
collapsed by LFN.  Only the originating node applies the query's global
offset and final limit; sub-queries instead have their limit widened to
limit+offset so no site under-reports.

The module is transport-agnostic: the node injects a callable that
ships a FederatedQuery payload to a named peer and returns the response
payload.  Site failures never raise out of :meth:`federated_query`;
they show up as per-site statuses and ``complete=False``.
"""

from __future__ import annotations

import heapq
import secrets
import threading
import xml.etree.ElementTree as ET
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

from .fq import SCHEMA_ATTRS, FormalQuery, parse_fq, row_sort_key, serialize_fq, validate
from .store import METADATA_COLUMNS, MetadataStore

DEFAULT_TTL = 8
DEFAULT_PEER_TIMEOUT = 5.0

_INT_FIELDS = frozenset({"patient.birth_year", "image.rows", "image.columns",
                         "image.bits_allocated"})
_REAL_FIELDS = frozenset({"image.pixel_spacing_x", "image.pixel_spacing_y"})


class FederationError(Exception):
    pass


class BadMessage(FederationError):
    """Malformed FederatedQuery/FederatedResponse payload."""


class UnknownFormat(FederationError):
    pass


@dataclass(frozen=True)
class Row:
    """One matched image: its LFN, the order-key values it was sorted
    by at its origin site, and (unless no_data) its metadata row."""
    lfn: str
    keys: tuple
    metadata: dict | None = None


@dataclass(frozen=True)
class SiteStatus:
    site_id: str
    status: str  # "ok" | "timeout" | "error"
    message: str = ""


@dataclass
class SiteResult:
    site_id: str
    status: str
    message: str = ""
    rows: list[Row] = field(default_factory=list)
    # statuses of the sites already merged into this result (set when the
    # part came from a peer, whose response covers its whole subtree)
    sub_statuses: list[SiteStatus] = field(default_factory=list)


@dataclass
class QueryResult:
    rows: list[Row]
    site_statuses: list[SiteStatus]
    complete: bool


@dataclass
class FederatedRequest:
    query: FormalQuery
    visited: list[str]  # originator first
    ttl: int
    request_id: bytes  # 16 random bytes


# ---------------------------------------------------------------------------
# query analysis (the homogeneous-schema Query Analyser)

def analyse(fq: FormalQuery, peers: list[str], visited: list[str],
            pushdown: bool = True):
    """Split into (local_fq, remote_fq, targets).

    With one shared schema both sub-queries keep the full constraint
    list; only limit/offset are rewritten.  Pushdown widens the limit to
    limit+offset and drops the offset, leaving the global offset to the
    originator; with pushdown off, sub-queries run unbounded.
    """
    validate(fq)
    targets = [p for p in peers if p not in visited]
    if not pushdown:
        sub = replace(fq, limit=None, offset=None)
    elif fq.limit is not None:
        sub = replace(fq, limit=fq.limit + (fq.offset or 0), offset=None)
    else:
        sub = fq
    return sub, sub, targets


def merge_results(fq: FormalQuery, parts: list[SiteResult],
                  originator: bool = True) -> QueryResult:
    """K-way merge of per-site rows on the query's order keys.

    Each part is already sorted at its origin; duplicates keep the first
    occurrence in merge order.  Offset and limit are applied only at the
    originator.
    """
    statuses: list[SiteStatus] = []
    for part in parts:
        if part.sub_statuses:
            statuses.extend(part.sub_statuses)
        else:
            statuses.append(SiteStatus(part.site_id, part.status, part.message))
    merged = heapq.merge(
        *(part.rows for part in parts if part.status == "ok"),
        key=lambda row: row_sort_key(fq.order, row.keys, row.lfn))
    rows: list[Row] = []
    seen: set[str] = set()
    for row in merged:
        if row.lfn not in seen:
            seen.add(row.lfn)
            rows.append(row)
    if originator:
        if fq.offset is not None:
            rows = rows[fq.offset:]
        if fq.limit is not None:
            rows = rows[:fq.limit]
    complete = all(s.status == "ok" for s in statuses)
    return QueryResult(rows, statuses, complete)


# ---------------------------------------------------------------------------
# the engine

class Federation:
    """Per-node federation engine.

    ``transport(peer_id, payload, timeout)`` must deliver a
    FederatedQuery payload to the peer's endpoint and return the
    FederatedResponse payload, raising ``TimeoutError`` on expiry and
    any other exception on transport/auth failure.
    """

    def __init__(self, site_id: str, store: MetadataStore, peers: list[str],
                 transport: Callable[[str, bytes, float], bytes] | None = None,
                 ttl: int = DEFAULT_TTL,
                 peer_timeout: float = DEFAULT_PEER_TIMEOUT,
                 pushdown: bool = True):
        self.site_id = site_id
        self.store = store
        self.peers = list(peers)
        self.transport = transport
        self.ttl = ttl
        self.peer_timeout = peer_timeout
        self.pushdown = pushdown
        self._counter_lock = threading.Lock()
        self.messages_sent: dict[str, int] = {}  # request id hex -> count

    # -- Local Query Handler
    def handle_local(self, fq: FormalQuery) -> SiteResult:
        from .fq import translate
        try:
            raw = self.store.execute_sql(translate(fq))
            select_cols = ["image.lfn"]
            for attr, _ in fq.order:
                col = SCHEMA_ATTRS[attr][0]
                if col not in select_cols:
                    select_cols.append(col)
            key_idx = [select_cols.index(SCHEMA_ATTRS[attr][0])
                       for attr, _ in fq.order]
            meta = ({} if fq.no_data
                    else self.store.fetch_metadata([r[0] for r in raw]))
            rows = [Row(r[0], tuple(r[i] for i in key_idx),
                        None if fq.no_data else meta.get(r[0]))
                    for r in raw]
            return SiteResult(self.site_id, "ok", rows=rows)
        except Exception as exc:
            return SiteResult(self.site_id, "error", str(exc))

    # -- Remote Query Handler
    def handle_remote(self, req: FederatedRequest, peer: str,
                      timeout: float) -> SiteResult:
        with self._counter_lock:
            rid = req.request_id.hex()
            self.messages_sent[rid] = self.messages_sent.get(rid, 0) + 1
        try:
            payload = self.transport(peer, request_to_xml(req), timeout)
            response = result_from_xml(payload)
        except TimeoutError:
            return SiteResult(peer, "timeout",
                              f"no response within {timeout:g}s")
        except Exception as exc:
            return SiteResult(peer, "error", str(exc) or type(exc).__name__)
        return SiteResult(peer, "ok", rows=response.rows,
                          sub_statuses=response.site_statuses)

    def federated_query(self, fq: FormalQuery,
                        incoming: FederatedRequest | None = None) -> QueryResult:
        validate(fq)
        if incoming is not None:
            visited = list(incoming.visited)
            ttl = incoming.ttl
            request_id = incoming.request_id
        else:
            visited = [self.site_id]
            ttl = self.ttl
            request_id = secrets.token_bytes(16)
        local_fq, remote_fq, targets = analyse(fq, self.peers, visited,
                                               self.pushdown)
        if ttl <= 0 or self.transport is None:
            targets = []
        new_visited = list(visited)
        for node in [self.site_id] + targets:
            if node not in new_visited:
                new_visited.append(node)
        req = FederatedRequest(remote_fq, new_visited, ttl - 1, request_id)
        parts = []
        if targets:
            with ThreadPoolExecutor(max_workers=len(targets)) as pool:
                futures = [pool.submit(self.handle_remote, req, peer,
                                       self.peer_timeout)
                           for peer in targets]
                parts.append(self.handle_local(local_fq))
                parts.extend(f.result() for f in futures)
        else:
            parts.append(self.handle_local(local_fq))
        return merge_results(fq, parts, originator=incoming is None)

    def message_count(self, request_id: bytes) -> int:
        with self._counter_lock:
            return self.messages_sent.get(request_id.hex(), 0)


# ---------------------------------------------------------------------------
# wire forms

def request_to_xml(req: FederatedRequest) -> bytes:
    root = ET.Element("FederatedQuery", ttl=str(req.ttl))
    ET.SubElement(root, "RequestId").text = req.request_id.hex()
    visited = ET.SubElement(root, "Visited")
    for node in req.visited:
        ET.SubElement(visited, "Node").text = node
    root.append(ET.fromstring(serialize_fq(req.query)))
    return ET.tostring(root, encoding="utf-8", xml_declaration=True)


def request_from_xml(data: bytes) -> FederatedRequest:
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        raise BadMessage(f"malformed FederatedQuery XML: {exc}")
    if root.tag != "FederatedQuery":
        raise BadMessage(f"unexpected root {root.tag!r}")
    try:
        ttl = int(root.attrib["ttl"])
        request_id = bytes.fromhex(root.findtext("RequestId", ""))
        if len(request_id) != 16:
            raise ValueError("request id must be 16 bytes")
        visited_node = root.find("Visited")
        query_node = root.find("Query")
        if visited_node is None or query_node is None:
            raise ValueError("missing Visited or Query")
        visited = [n.text or "" for n in visited_node.findall("Node")]
        query = parse_fq(ET.tostring(query_node))
    except (KeyError, ValueError) as exc:
        raise BadMessage(str(exc))
    return FederatedRequest(query, visited, ttl, request_id)


def _append_row(parent: ET.Element, row: Row, with_keys: bool) -> None:
    node = ET.SubElement(parent, "Row", lfn=row.lfn)
    if with_keys:
        for value in row.keys:
            key = ET.SubElement(node, "Key")
            if value is None:
                key.set("null", "true")
            else:
                key.text = str(value)
    if row.metadata is not None:
        meta = ET.SubElement(node, "Meta")
        for name in METADATA_COLUMNS:
            value = row.metadata.get(name)
            fld = ET.SubElement(meta, "Field", name=name)
            if value is None:
                fld.set("null", "true")
            else:
                fld.text = str(value)


def _coerce_field(name: str, text: str | None):
    if text is None:
        return None
    if name in _INT_FIELDS:
        return int(text)
    if name in _REAL_FIELDS:
        return float(text)
    return text


def _parse_field_value(name: str, node: ET.Element):
    if node.get("null") == "true":
        return None
    return _coerce_field(name, node.text or "")


def _parse_row(node: ET.Element) -> Row:
    lfn = node.attrib["lfn"]
    keys = tuple(None if key.get("null") == "true" else (key.text or "")
                 for key in node.findall("Key"))
    meta_node = node.find("Meta")
    metadata = None
    if meta_node is not None:
        metadata = {fld.attrib["name"]: _parse_field_value(fld.attrib["name"], fld)
                    for fld in meta_node.findall("Field")}
    return Row(lfn, keys, metadata)


def result_to_xml(result: QueryResult) -> bytes:
    root = ET.Element("FederatedResponse",
                      complete="true" if result.complete else "false")
    for status in result.site_statuses:
        node = ET.SubElement(root, "Site", id=status.site_id,
                             status=status.status)
        if status.message:
            node.set("message", status.message)
    rows = ET.SubElement(root, "Rows")
    for row in result.rows:
        _append_row(rows, row, with_keys=True)
    return ET.tostring(root, encoding="utf-8", xml_declaration=True)


def result_from_xml(data: bytes) -> QueryResult:
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        raise BadMessage(f"malformed FederatedResponse XML: {exc}")
    if root.tag != "FederatedResponse":
        raise BadMessage(f"unexpected root {root.tag!r}")
    try:
        statuses = [SiteStatus(n.attrib["id"], n.attrib["status"],
                               n.get("message", ""))
                    for n in root.findall("Site")]
        rows_node = root.find("Rows")
        rows = ([] if rows_node is None
                else [_parse_row(n) for n in rows_node.findall("Row")])
    except (KeyError, ValueError) as exc:
        raise BadMessage(str(exc))
    complete = root.get("complete") == "true"
    return QueryResult(rows, statuses, complete)


# ---------------------------------------------------------------------------
# client-facing renderings (the Result Handler's Transform step)

def wrap_result(result: QueryResult, format: str) -> bytes:
    if format == "fq-xml":
        root = ET.Element("QueryResult",
                          complete="true" if result.complete else "false")
        for status in result.site_statuses:
            node = ET.SubElement(root, "Site", id=status.site_id,
                                 status=status.status)
            if status.message:
                node.set("message", status.message)
        for row in result.rows:
            _append_row(root, row, with_keys=False)
        return ET.tostring(root, encoding="utf-8", xml_declaration=True)
    if format == "rowset-xml":
        with_meta = any(row.metadata is not None for row in result.rows)
        columns = ("lfn",) + (METADATA_COLUMNS if with_meta else ())
        root = ET.Element("RowSet",
                          complete="true" if result.complete else "false")
        header = ET.SubElement(root, "Columns")
        for name in columns:
            ET.SubElement(header, "Column", name=name)
        for row in result.rows:
            node = ET.SubElement(root, "Row")
            values = [row.lfn]
            if with_meta:
                meta = row.metadata or {}
                values += [meta.get(name) for name in columns[1:]]
            for name, value in zip(columns, values):
                cell = ET.SubElement(node, "Value")
                if value is None:
                    cell.set("null", "true")
                else:
                    cell.text = str(value)
        return ET.tostring(root, encoding="utf-8", xml_declaration=True)
    raise UnknownFormat(f"unknown result format {format!r}")


def parse_wrapped(data: bytes) -> tuple[bool, list[tuple[str, dict | None]]]:
    """Read back either wrap_result rendering as (complete, [(lfn, meta)])."""
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        raise BadMessage(f"malformed result document: {exc}")
    complete = root.get("complete") == "true"
    if root.tag == "QueryResult":
        return complete, [((row := _parse_row(n)).lfn, row.metadata)
                          for n in root.findall("Row")]
    if root.tag == "RowSet":
        header = root.find("Columns")
        columns = [] if header is None else [
            c.attrib["name"] for c in header.findall("Column")]
        out = []
        for node in root.findall("Row"):
            cells = [None if v.get("null") == "true" else (v.text or "")
                     for v in node.findall("Value")]
            record = dict(zip(columns, cells))
            lfn = record.pop("lfn", "")
            meta = ({name: _coerce_field(name, text)
                     for name, text in record.items()} or None)
            out.append((lfn, meta))
        return complete, out
    raise BadMessage(f"unexpected root {root.tag!r}")
