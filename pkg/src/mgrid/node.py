"""The node daemon: DICOM store endpoint, client API, peer endpoint.

A node owns one data directory (metadata store, file catalogue, staged
files) and three TCP listeners.  Acquisition is the two-step flow: a
C-STORE only stages the file; a later authenticated ``add`` call
pseudonymizes it, files it in the catalogue under its logical file
name, and extracts its metadata — only then does it become queryable.

Configuration is a flat key=value file; the MG_CONFIG environment
variable overrides the path given to :func:`load_config`.
"""

from __future__ import annotations

import hmac
import os
import secrets
import socket
import threading
import time
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

from . import wire
from .anonymize import pseudonymize
from .catalogue import (
    CatalogueError,
    FileCatalogue,
    LfnExists,
    NotFound,
    validate_lfn,
)
from .dicomio import EXPLICIT_VR_LE, extract_summary, parse_file, serialize_file
from .dicomxml import dataset_to_xml_bytes
from .federation import (
    DEFAULT_PEER_TIMEOUT,
    DEFAULT_TTL,
    Federation,
    FederationError,
    request_from_xml,
    result_to_xml,
    wrap_result,
)
from .fq import FqError, parse_fq
from .store import MetadataStore, StoreError
from .upperlayer import STATUS_SUCCESS, StoreScp

DEFAULT_STAGING_TTL = 3600.0
DEFAULT_MAX_CONNECTIONS = 64


class NodeError(Exception):
    pass


class ConfigError(NodeError):
    pass


class BindError(NodeError):
    pass


class AuthError(NodeError):
    pass


class NotStaged(NodeError):
    pass


class PeerError(NodeError):
    """Protocol-level failure talking to a peer node."""


@dataclass(frozen=True)
class PeerRef:
    node_id: str
    host: str
    port: int


@dataclass
class NodeConfig:
    site_id: str
    data_dir: str
    dicom_port: int
    api_port: int
    peer_port: int
    shared_token: str
    pseudonym_key: bytes
    peers: list[PeerRef] = field(default_factory=list)
    ttl: int = DEFAULT_TTL
    peer_timeout: float = DEFAULT_PEER_TIMEOUT
    staging_ttl: float = DEFAULT_STAGING_TTL
    max_connections: int = DEFAULT_MAX_CONNECTIONS

    def validate(self) -> None:
        if not self.site_id:
            raise ConfigError("site_id must not be empty")
        ports = [self.dicom_port, self.api_port, self.peer_port]
        for port in ports:
            if not 1 <= port <= 65535:
                raise ConfigError(f"port {port} out of range")
        if len(set(ports)) != 3:
            raise ConfigError(f"ports must be distinct, got {ports}")
        if len(self.pseudonym_key) != 32:
            raise ConfigError("pseudonym_key must be 32 bytes")
        if not self.shared_token:
            raise ConfigError("shared_token must not be empty")
        if any(p.node_id == self.site_id for p in self.peers):
            raise ConfigError("a node cannot be its own peer")


@dataclass
class StagedFile:
    sop_uid: str
    data: bytes
    received_at: float


# ---------------------------------------------------------------------------
# config file handling

def parse_config(text: str) -> NodeConfig:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    try:
        peers = []
        for spec in filter(None, (s.strip()
                                  for s in values.get("peers", "").split(","))):
            node_id, _, addr = spec.partition("@")
            host, _, port = addr.rpartition(":")
            if not (node_id and host and port):
                raise ConfigError(f"bad peer spec {spec!r}"
                                  " (expected id@host:port)")
            peers.append(PeerRef(node_id, host, int(port)))
        config = NodeConfig(
            site_id=values["site_id"],
            data_dir=values["data_dir"],
            dicom_port=int(values["dicom_port"]),
            api_port=int(values["api_port"]),
            peer_port=int(values["peer_port"]),
            shared_token=values["shared_token"],
            pseudonym_key=bytes.fromhex(values["pseudonym_key"]),
            peers=peers,
            ttl=int(values.get("ttl", DEFAULT_TTL)),
            peer_timeout=float(values.get("peer_timeout",
                                          DEFAULT_PEER_TIMEOUT)),
            staging_ttl=float(values.get("staging_ttl", DEFAULT_STAGING_TTL)),
            max_connections=int(values.get("max_connections",
                                           DEFAULT_MAX_CONNECTIONS)),
        )
    except KeyError as exc:
        raise ConfigError(f"missing required key {exc.args[0]}")
    except ValueError as exc:
        raise ConfigError(str(exc))
    config.validate()
    return config


def render_config(config: NodeConfig) -> str:
    lines = [
        f"site_id = {config.site_id}",
        f"data_dir = {config.data_dir}",
        f"dicom_port = {config.dicom_port}",
        f"api_port = {config.api_port}",
        f"peer_port = {config.peer_port}",
        f"shared_token = {config.shared_token}",
        f"pseudonym_key = {config.pseudonym_key.hex()}",
        "peers = " + ", ".join(f"{p.node_id}@{p.host}:{p.port}"
                               for p in config.peers),
        f"ttl = {config.ttl}",
        f"peer_timeout = {config.peer_timeout}",
        f"staging_ttl = {config.staging_ttl}",
        f"max_connections = {config.max_connections}",
    ]
    return "\n".join(lines) + "\n"


def load_config(path: str | None = None) -> NodeConfig:
    path = os.environ.get("MG_CONFIG", path)
    if not path:
        raise ConfigError("no config path given and MG_CONFIG unset")
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")


# ---------------------------------------------------------------------------
# XML envelopes and error documents

def error_doc(code: str, message: str) -> bytes:
    root = ET.Element("Error", code=code)
    root.text = message
    return ET.tostring(root, encoding="utf-8", xml_declaration=True)


def parse_error_doc(data: bytes) -> tuple[str, str]:
    try:
        root = ET.fromstring(data)
    except ET.ParseError:
        return "Unknown", data.decode("utf-8", "replace")
    if root.tag != "Error":
        return "Unknown", data.decode("utf-8", "replace")
    return root.get("code", "Unknown"), root.text or ""


def _raise_for_error(code: str, message: str):
    if code == "AuthError":
        raise AuthError(message)
    if code == "NotFound":
        raise NotFound(message)
    if code == "NotStaged":
        raise NotStaged(message)
    raise PeerError(f"{code}: {message}")


# ---------------------------------------------------------------------------
# the node

class Node:
    def __init__(self, config: NodeConfig):
        config.validate()
        self.config = config
        os.makedirs(config.data_dir, exist_ok=True)
        self.store = MetadataStore(os.path.join(config.data_dir, "metadata.db"))
        self.catalogue = FileCatalogue(
            os.path.join(config.data_dir, "catalogue.db"),
            os.path.join(config.data_dir, "files"), config.site_id)
        self._peer_map = {p.node_id: p for p in config.peers}
        self.federation = Federation(
            config.site_id, self.store, list(self._peer_map),
            self._peer_transport, ttl=config.ttl,
            peer_timeout=config.peer_timeout)
        self._staging: dict[str, StagedFile] = {}
        self._staging_lock = threading.Lock()
        self._ingest_lock = threading.Lock()
        self._conn_slots = threading.BoundedSemaphore(config.max_connections)
        self._workers: set[threading.Thread] = set()
        self._workers_lock = threading.Lock()
        self._servers: list[socket.socket] = []
        self._acceptors: list[threading.Thread] = []
        self._stopping = threading.Event()
        self._scp = StoreScp(self._on_store)

    # -- lifecycle

    def start(self) -> None:
        if self._servers:
            return  # already serving
        endpoints = [
            (self.config.dicom_port, self._handle_dicom),
            (self.config.api_port, self._handle_api),
            (self.config.peer_port, self._handle_peer),
        ]
        try:
            for port, handler in endpoints:
                server = socket.create_server(("127.0.0.1", port))
                server.settimeout(0.2)
                self._servers.append(server)
                thread = threading.Thread(
                    target=self._accept_loop, args=(server, handler),
                    daemon=True)
                self._acceptors.append(thread)
        except OSError as exc:
            for server in self._servers:
                server.close()
            self._servers.clear()
            raise BindError(f"cannot bind port {port}: {exc}")
        for thread in self._acceptors:
            thread.start()

    def stop(self) -> None:
        if self._stopping.is_set():
            return
        self._stopping.set()
        for thread in self._acceptors:
            thread.join(timeout=5)
        for server in self._servers:
            server.close()
        with self._workers_lock:
            workers = list(self._workers)
        for thread in workers:
            thread.join(timeout=5)
        self.store.close()
        self.catalogue.close()

    def __enter__(self):
        self.start()
        return self

    def __exit__(self, *exc):
        self.stop()

    def _accept_loop(self, server: socket.socket, handler) -> None:
        while not self._stopping.is_set():
            try:
                conn, _ = server.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            thread = threading.Thread(target=self._run_worker,
                                      args=(handler, conn), daemon=True)
            with self._workers_lock:
                self._workers.add(thread)
            thread.start()

    def _run_worker(self, handler, conn: socket.socket) -> None:
        with self._conn_slots:
            try:
                handler(conn)
            except (OSError, wire.FrameError):
                pass
            finally:
                conn.close()
                with self._workers_lock:
                    self._workers.discard(threading.current_thread())

    # -- staging (DICOM listener)

    def _handle_dicom(self, conn: socket.socket) -> None:
        self._scp.handle(conn)

    def _on_store(self, sop_class: str, sop_instance: str, ds,
                  transfer_syntax: str) -> int:
        data = serialize_file(ds, transfer_syntax)
        now = time.monotonic()
        with self._staging_lock:
            self._evict_staging(now)
            self._staging[sop_instance] = StagedFile(sop_instance, data, now)
        return STATUS_SUCCESS

    def _evict_staging(self, now: float) -> None:
        expired = [uid for uid, staged in self._staging.items()
                   if now - staged.received_at > self.config.staging_ttl]
        for uid in expired:
            del self._staging[uid]

    def staged_uids(self) -> list[str]:
        with self._staging_lock:
            self._evict_staging(time.monotonic())
            return sorted(self._staging)

    # -- API operations

    def _check_token(self, token: str) -> None:
        if not hmac.compare_digest(token.encode(),
                                   self.config.shared_token.encode()):
            raise AuthError("invalid token")

    def api_add(self, sop_uid: str, token: str) -> tuple[str, str]:
        self._check_token(token)
        with self._staging_lock:
            self._evict_staging(time.monotonic())
            staged = self._staging.get(sop_uid)
        if staged is None:
            raise NotStaged(f"no staged file for {sop_uid}")
        with self._ingest_lock:
            ds = parse_file(staged.data)
            pseudo_ds, pseudonym = pseudonymize(ds, self.config.pseudonym_key)
            summary = extract_summary(pseudo_ds)
            lfn = (f"/mg/{self.config.site_id}/{pseudonym}"
                   f"/{summary['study_uid']}/{sop_uid}.dcm")
            data = serialize_file(pseudo_ds,
                                  ds.transfer_syntax or EXPLICIT_VR_LE)
            try:
                entry = self.catalogue.add_file(data, lfn)
            except LfnExists:
                # crash between catalogue and store commits: resume
                entry = self.catalogue.entry(lfn)
            with open(entry.physical_path + ".xml", "wb") as fh:
                fh.write(dataset_to_xml_bytes(pseudo_ds))
            self.store.ingest(summary, lfn)
        with self._staging_lock:
            self._staging.pop(sop_uid, None)
        return lfn, pseudonym

    def api_query(self, fq_xml: bytes, format: str, token: str) -> bytes:
        self._check_token(token)
        try:
            fq = parse_fq(fq_xml)
        except FqError as exc:
            return error_doc(type(exc).__name__, str(exc))
        result = self.federation.federated_query(fq)
        try:
            return wrap_result(result, format)
        except FederationError as exc:
            return error_doc(type(exc).__name__, str(exc))

    def api_get(self, lfn: str, token: str, ttl: int | None = None,
                visited: list[str] | None = None) -> bytes:
        self._check_token(token)
        validate_lfn(lfn)
        entry = self.catalogue.entry(lfn)
        if entry is not None and entry.site_id == self.config.site_id:
            return self.catalogue.get_file(lfn)
        ttl = self.config.ttl if ttl is None else ttl
        visited = list(visited or [])
        if ttl <= 0:
            raise NotFound(f"{lfn} not held locally")
        # the LFN layout names the owning site; go straight there if peered
        segments = lfn.split("/")
        owner = segments[2] if len(segments) > 2 else ""
        if owner in self._peer_map and owner not in visited:
            targets = [owner]
        else:
            targets = [p for p in self._peer_map if p not in visited]
        next_visited = visited + [self.config.site_id] + targets
        for peer in targets:
            try:
                return self._peer_fetch(peer, lfn, ttl - 1, next_visited)
            except NotFound:
                continue
        raise NotFound(f"{lfn} not found in the federation")

    # -- peer protocol (client side)

    def _peer_transport(self, peer_id: str, payload: bytes,
                        timeout: float) -> bytes:
        peer = self._peer_map.get(peer_id)
        if peer is None:
            raise PeerError(f"unknown peer {peer_id!r}")
        envelope = _seal(self.config.shared_token, payload)
        with socket.create_connection((peer.host, peer.port),
                                      timeout=timeout) as sock:
            sock.settimeout(timeout)
            wire.write_frame(sock, wire.MSG_FEDERATED_QUERY,
                             secrets.token_bytes(16), envelope)
            msg_type, _, data = wire.read_frame(sock)
        if msg_type == wire.MSG_ERROR:
            _raise_for_error(*parse_error_doc(data))
        if msg_type != wire.MSG_FEDERATED_RESPONSE:
            raise PeerError(f"unexpected frame type 0x{msg_type:02x}")
        return data

    def _peer_fetch(self, peer_id: str, lfn: str, ttl: int,
                    visited: list[str]) -> bytes:
        peer = self._peer_map[peer_id]
        request = _get_request_xml(self.config.shared_token, lfn, ttl, visited)
        rid = secrets.token_bytes(16)
        with socket.create_connection(
                (peer.host, peer.port),
                timeout=self.config.peer_timeout) as sock:
            sock.settimeout(self.config.peer_timeout)
            wire.write_frame(sock, wire.MSG_GET_REQUEST, rid, request)
            try:
                return wire.read_file_frames(sock, rid)
            except wire.FrameError as exc:
                code, message = parse_error_doc(str(exc).encode())
                _raise_for_error(code, message)

    # -- connection handlers (server side)

    def _handle_api(self, conn: socket.socket) -> None:
        while not self._stopping.is_set():
            try:
                msg_type, rid, payload = wire.read_frame(conn)
            except (wire.FrameError, OSError):
                return
            try:
                self._dispatch_api(conn, msg_type, rid, payload)
            except (NodeError, CatalogueError, StoreError) as exc:
                wire.write_frame(conn, wire.MSG_ERROR, rid,
                                 error_doc(type(exc).__name__, str(exc)))

    def _dispatch_api(self, conn, msg_type, rid, payload) -> None:
        if msg_type == wire.MSG_QUERY_REQUEST:
            root = _parse_payload(payload, "QueryRequest")
            token = root.get("token", "")
            format = root.get("format", "fq-xml")
            query = root.find("Query")
            if query is None:
                raise PeerError("QueryRequest without Query")
            response = self.api_query(ET.tostring(query), format, token)
            wire.write_frame(conn, wire.MSG_QUERY_RESPONSE, rid, response)
        elif msg_type == wire.MSG_ADD_REQUEST:
            root = _parse_payload(payload, "AddRequest")
            lfn, pseudonym = self.api_add(root.get("sopUid", ""),
                                          root.get("token", ""))
            out = ET.Element("AddResponse", lfn=lfn, pseudonym=pseudonym)
            wire.write_frame(conn, wire.MSG_ADD_RESPONSE, rid,
                             ET.tostring(out, encoding="utf-8",
                                         xml_declaration=True))
        elif msg_type == wire.MSG_GET_REQUEST:
            self._serve_get(conn, rid, payload)
        else:
            raise PeerError(f"unexpected frame type 0x{msg_type:02x}")

    def _serve_get(self, conn, rid, payload) -> None:
        root = _parse_payload(payload, "GetRequest")
        visited = [n.text or "" for n in root.iter("Node")]
        data = self.api_get(root.get("lfn", ""), root.get("token", ""),
                            ttl=int(root.get("ttl", self.config.ttl)),
                            visited=visited)
        wire.write_file_frames(conn, rid, data)

    def _handle_peer(self, conn: socket.socket) -> None:
        while not self._stopping.is_set():
            try:
                msg_type, rid, payload = wire.read_frame(conn)
            except (wire.FrameError, OSError):
                return
            try:
                if msg_type == wire.MSG_FEDERATED_QUERY:
                    inner = _unseal(self.config.shared_token, payload)
                    req = request_from_xml(inner)
                    result = self.federation.federated_query(req.query,
                                                             incoming=req)
                    wire.write_frame(conn, wire.MSG_FEDERATED_RESPONSE, rid,
                                     result_to_xml(result))
                elif msg_type == wire.MSG_GET_REQUEST:
                    self._serve_get(conn, rid, payload)
                else:
                    raise PeerError(f"unexpected frame type 0x{msg_type:02x}")
            except (NodeError, CatalogueError, FederationError) as exc:
                wire.write_frame(conn, wire.MSG_ERROR, rid,
                                 error_doc(type(exc).__name__, str(exc)))


def serve(config: NodeConfig) -> Node:
    node = Node(config)
    node.start()
    return node


# ---------------------------------------------------------------------------
# payload helpers

def _parse_payload(payload: bytes, expected_root: str) -> ET.Element:
    try:
        root = ET.fromstring(payload)
    except ET.ParseError as exc:
        raise PeerError(f"malformed payload: {exc}")
    if root.tag != expected_root:
        raise PeerError(f"expected {expected_root}, got {root.tag!r}")
    return root


def _seal(token: str, inner: bytes) -> bytes:
    root = ET.Element("PeerEnvelope", token=token)
    root.append(ET.fromstring(inner))
    return ET.tostring(root, encoding="utf-8", xml_declaration=True)


def _unseal(token: str, payload: bytes) -> bytes:
    root = _parse_payload(payload, "PeerEnvelope")
    sent = root.get("token", "")
    if not hmac.compare_digest(sent.encode(), token.encode()):
        raise AuthError("invalid peer token")
    if len(root) != 1:
        raise PeerError("PeerEnvelope must wrap exactly one element")
    return ET.tostring(root[0])


def _get_request_xml(token: str, lfn: str, ttl: int,
                     visited: list[str]) -> bytes:
    root = ET.Element("GetRequest", token=token, lfn=lfn, ttl=str(ttl))
    nodes = ET.SubElement(root, "Visited")
    for node in visited:
        ET.SubElement(nodes, "Node").text = node
    return ET.tostring(root, encoding="utf-8", xml_declaration=True)


# ---------------------------------------------------------------------------
# client helpers (used by the CLI and tests)

def _client_call(host: str, port: int, msg_type: int, payload: bytes,
                 timeout: float = 30.0) -> tuple[int, bytes, bytes, socket.socket]:
    sock = socket.create_connection((host, port), timeout=timeout)
    sock.settimeout(timeout)
    rid = secrets.token_bytes(16)
    wire.write_frame(sock, msg_type, rid, payload)
    reply_type, reply_rid, data = wire.read_frame(sock)
    return reply_type, data, rid, sock


def client_query(host: str, port: int, token: str, fq_xml: bytes,
                 format: str = "fq-xml", timeout: float = 30.0) -> bytes:
    root = ET.Element("QueryRequest", token=token, format=format)
    root.append(ET.fromstring(fq_xml))
    payload = ET.tostring(root, encoding="utf-8", xml_declaration=True)
    reply_type, data, _, sock = _client_call(host, port,
                                             wire.MSG_QUERY_REQUEST, payload,
                                             timeout)
    sock.close()
    if reply_type == wire.MSG_ERROR:
        _raise_for_error(*parse_error_doc(data))
    return data


def client_add(host: str, port: int, token: str, sop_uid: str,
               timeout: float = 30.0) -> tuple[str, str]:
    payload = ET.tostring(ET.Element("AddRequest", token=token,
                                     sopUid=sop_uid),
                          encoding="utf-8", xml_declaration=True)
    reply_type, data, _, sock = _client_call(host, port,
                                             wire.MSG_ADD_REQUEST, payload,
                                             timeout)
    sock.close()
    if reply_type == wire.MSG_ERROR:
        _raise_for_error(*parse_error_doc(data))
    root = ET.fromstring(data)
    return root.get("lfn", ""), root.get("pseudonym", "")


def client_get(host: str, port: int, token: str, lfn: str,
               timeout: float = 30.0) -> bytes:
    # no ttl attribute: the node substitutes its configured ttl when
    # routing the fetch to peers
    root = ET.Element("GetRequest", token=token, lfn=lfn)
    ET.SubElement(root, "Visited")
    payload = ET.tostring(root, encoding="utf-8", xml_declaration=True)
    sock = socket.create_connection((host, port), timeout=timeout)
    sock.settimeout(timeout)
    rid = secrets.token_bytes(16)
    wire.write_frame(sock, wire.MSG_GET_REQUEST, rid, payload)
    try:
        return wire.read_file_frames(sock, rid)
    except wire.FrameError as exc:
        code, message = parse_error_doc(str(exc).encode())
        _raise_for_error(code, message)
    finally:
        sock.close()
