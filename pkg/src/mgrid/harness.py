"""Multi-node simulation harness with a brute-force oracle.

Builds a federation of real nodes on loopback TCP inside one process,
partitions a synthetic corpus across them, fires randomized formal
queries at every originator, and compares each answer against
:func:`mgrid.fq.evaluate` over the union ground truth.  Divergences are
collected into a report (plain-text summary plus machine-readable XML),
never raised mid-run.
"""

from __future__ import annotations

import hashlib
import random
import shutil
import tempfile
import time
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

from .corpus import dataset_for_record, ground_truth
from .dicomio import EXPLICIT_VR_LE, serialize_file
from .federation import parse_wrapped
from .fq import FormalQuery, evaluate, serialize_fq
from .fqgen import random_fq
from .node import (
    BindError,
    Node,
    NodeConfig,
    PeerRef,
    StagedFile,
    client_query,
)

TOPOLOGIES = ("line", "star", "ring", "complete")


def topology_edges(n: int, topology: str) -> set[tuple[int, int]]:
    """Undirected edge set over node indices 0..n-1."""
    if topology not in TOPOLOGIES:
        raise ValueError(f"unknown topology {topology!r}")
    edges = set()
    if topology in ("line", "ring"):
        edges |= {(i, i + 1) for i in range(n - 1)}
        if topology == "ring" and n > 2:
            edges.add((0, n - 1))
    elif topology == "star":
        edges |= {(0, i) for i in range(1, n)}
    else:
        edges |= {(i, j) for i in range(n) for j in range(i + 1, n)}
    return edges


@dataclass
class FederationHandle:
    nodes: list[Node]
    topology: str
    token: str
    key: bytes
    temp_dir: str
    partition: dict[str, str] = field(default_factory=dict)  # sop -> site
    records: list[dict] = field(default_factory=list)

    @property
    def site_ids(self) -> list[str]:
        return [node.config.site_id for node in self.nodes]

    def node_by_site(self, site_id: str) -> Node:
        return next(n for n in self.nodes if n.config.site_id == site_id)

    def ingest(self, records: list[dict], partition_seed: int) -> list[dict]:
        """Partition records across nodes and ingest; returns ground truth."""
        rng = random.Random(partition_seed)
        for record in records:
            node = rng.choice(self.nodes)
            ingest_record(node, record, self.token)
            self.partition[record["sop_uid"]] = node.config.site_id
            self.records.append(record)
        return self.union_truth()

    def union_truth(self, sites: set[str] | None = None) -> list[dict]:
        records = [r for r in self.records
                   if sites is None or self.partition[r["sop_uid"]] in sites]
        return ground_truth(records, self.key, self.partition
                            if sites is None
                            else {s: self.partition[s] for s in
                                  (r["sop_uid"] for r in records)})

    def reachable_sites(self, origin: str, down: set[str] = frozenset()) -> set[str]:
        """Sites reachable from ``origin`` skipping ``down`` nodes."""
        if origin in down:
            return set()
        peers = {node.config.site_id:
                 [p.node_id for p in node.config.peers]
                 for node in self.nodes}
        seen, frontier = {origin}, [origin]
        while frontier:
            site = frontier.pop()
            for peer in peers[site]:
                if peer not in seen and peer not in down:
                    seen.add(peer)
                    frontier.append(peer)
        return seen

    def total_messages(self) -> int:
        return sum(sum(node.federation.messages_sent.values())
                   for node in self.nodes)

    def stop_node(self, site_id: str) -> None:
        self.node_by_site(site_id).stop()

    def close(self) -> None:
        for node in self.nodes:
            try:
                node.stop()
            except Exception:
                pass
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def ingest_record(node: Node, record: dict, token: str) -> str:
    """Stage and add one synthetic record directly; returns the LFN."""
    ds = dataset_for_record(record, random.Random(hash(record["sop_uid"]) & 0xFFFF))
    data = serialize_file(ds, EXPLICIT_VR_LE)
    sop_uid = record["sop_uid"]
    with node._staging_lock:
        node._staging[sop_uid] = StagedFile(sop_uid, data, time.monotonic())
    lfn, _ = node.api_add(sop_uid, token)
    return lfn


def build_federation(n: int, topology: str, seed: int) -> FederationHandle:
    """n nodes on loopback with fresh temp data dirs, 1 <= n <= 8."""
    if not 1 <= n <= 8:
        raise ValueError(f"node count {n} outside 1..8")
    edges = topology_edges(n, topology)
    token = f"harness-{seed}"
    key = hashlib.sha256(f"harness-key-{seed}".encode()).digest()
    temp_dir = tempfile.mkdtemp(prefix="mgrid-harness-")
    rng = random.Random(seed)
    for attempt in range(20):
        base = 20000 + rng.randrange(0, 40000 - 3 * n)
        ports = [base + i for i in range(3 * n)]
        site_ids = [f"site{i}" for i in range(n)]
        configs = []
        for i, site_id in enumerate(site_ids):
            peer_ids = sorted({b for a, b in edges if a == i}
                              | {a for a, b in edges if b == i})
            configs.append(NodeConfig(
                site_id=site_id,
                data_dir=f"{temp_dir}/{site_id}-{attempt}",
                dicom_port=ports[3 * i],
                api_port=ports[3 * i + 1],
                peer_port=ports[3 * i + 2],
                shared_token=token,
                pseudonym_key=key,
                peers=[PeerRef(site_ids[j], "127.0.0.1", ports[3 * j + 2])
                       for j in peer_ids],
                ttl=n,
            ))
        nodes = []
        try:
            for config in configs:
                node = Node(config)
                node.start()
                nodes.append(node)
            return FederationHandle(nodes, topology, token, key, temp_dir)
        except BindError:
            for node in nodes:
                node.stop()
    shutil.rmtree(temp_dir, ignore_errors=True)
    raise BindError(f"no free port block found for seed {seed}")


# ---------------------------------------------------------------------------
# workload driver

@dataclass
class Divergence:
    originator: str
    fq_xml: bytes
    expected: list[str]
    got: list[str]


@dataclass
class WorkloadReport:
    cases: int
    queries: int
    divergences: list[Divergence]

    def ok(self) -> bool:
        return not self.divergences

    def text(self) -> str:
        lines = [f"workload: {self.cases} formal queries,"
                 f" {self.queries} federated executions,"
                 f" {len(self.divergences)} divergences"]
        for d in self.divergences[:10]:
            lines.append(f"  divergence at {d.originator}:"
                         f" expected {len(d.expected)} rows,"
                         f" got {len(d.got)}")
        return "\n".join(lines)

    def xml(self) -> bytes:
        root = ET.Element("WorkloadReport", cases=str(self.cases),
                          queries=str(self.queries),
                          divergences=str(len(self.divergences)))
        for d in self.divergences:
            node = ET.SubElement(root, "Divergence", originator=d.originator)
            node.append(ET.fromstring(d.fq_xml))
            for tag, lfns in (("Expected", d.expected), ("Got", d.got)):
                seq = ET.SubElement(node, tag)
                for lfn in lfns:
                    ET.SubElement(seq, "Lfn").text = lfn
        return ET.tostring(root, encoding="utf-8", xml_declaration=True)


def federated_lfns(handle: FederationHandle, node: Node,
                   fq: FormalQuery) -> tuple[bool, list[str]]:
    """Run one FQ at an originator over the real wire; (complete, lfns)."""
    doc = client_query("127.0.0.1", node.config.api_port, handle.token,
                       serialize_fq(fq))
    complete, rows = parse_wrapped(doc)
    return complete, [lfn for lfn, _ in rows]


def run_workload(handle: FederationHandle, truth: list[dict], fq_seed: int,
                 cases: int) -> WorkloadReport:
    rng = random.Random(fq_seed)
    divergences = []
    queries = 0
    for _ in range(cases):
        fq = random_fq(rng, truth)
        expected = evaluate(fq, truth)
        for node in handle.nodes:
            _, got = federated_lfns(handle, node, fq)
            queries += 1
            if got != expected:
                divergences.append(Divergence(node.config.site_id,
                                              serialize_fq(fq),
                                              expected, got))
    return WorkloadReport(cases, queries, divergences)
