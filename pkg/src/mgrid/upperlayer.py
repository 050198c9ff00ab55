"""DICOM upper-layer protocol subset: association + C-STORE over TCP.

Implements the seven PDU types of the standard's Part 8 (A-ASSOCIATE
RQ/AC/RJ, P-DATA-TF, A-RELEASE RQ/RP, A-ABORT) with big-endian lengths
and PDV message-control-header bits, plus the minimal DIMSE C-STORE
command sets (implicit VR little endian).  Enough for a real SCU/SCP
pair to move a mammogram between processes; no C-FIND/C-MOVE.
"""

from __future__ import annotations

import socket
import struct
from dataclasses import dataclass
from typing import Callable

from .dicomio import (
    EXPLICIT_VR_LE,
    IMPLEMENTATION_CLASS_UID,
    IMPLEMENTATION_VERSION_NAME,
    IMPLICIT_VR_LE,
    DataElement,
    DicomDataset,
    Tag,
    parse_dataset_bytes,
    serialize_dataset_bytes,
)
from .dicomdict import vr_for_tag

PDU_A_ASSOCIATE_RQ = 0x01
PDU_A_ASSOCIATE_AC = 0x02
PDU_A_ASSOCIATE_RJ = 0x03
PDU_P_DATA_TF = 0x04
PDU_A_RELEASE_RQ = 0x05
PDU_A_RELEASE_RP = 0x06
PDU_A_ABORT = 0x07

ITEM_APPLICATION_CONTEXT = 0x10
ITEM_PRESENTATION_CONTEXT_RQ = 0x20
ITEM_PRESENTATION_CONTEXT_AC = 0x21
ITEM_ABSTRACT_SYNTAX = 0x30
ITEM_TRANSFER_SYNTAX = 0x40
ITEM_USER_INFORMATION = 0x50
ITEM_MAX_LENGTH = 0x51
ITEM_IMPLEMENTATION_CLASS = 0x52
ITEM_IMPLEMENTATION_VERSION = 0x55

APPLICATION_CONTEXT_UID = "1.2.840.10008.3.1.1.1"
MAMMO_STORAGE = "1.2.840.10008.5.1.4.1.1.1.2"
SECONDARY_CAPTURE_STORAGE = "1.2.840.10008.5.1.4.1.1.7"
SUPPORTED_ABSTRACT_SYNTAXES = (MAMMO_STORAGE, SECONDARY_CAPTURE_STORAGE)
# preference order when both sides offer both
TRANSFER_SYNTAX_PREFERENCE = (EXPLICIT_VR_LE, IMPLICIT_VR_LE)

DEFAULT_MAX_PDU = 16 * 1024
MAX_PDU_LENGTH = 16 * 1024 * 1024
PROTOCOL_VERSION = 0x0001

C_STORE_RQ = 0x0001
C_STORE_RSP = 0x8001
NO_DATASET = 0x0101  # CommandDataSetType value meaning "no data set follows"
STATUS_SUCCESS = 0x0000
STATUS_OUT_OF_RESOURCES = 0xA700

_PDU_HEADER = struct.Struct(">BBI")
_PDV_HEADER = struct.Struct(">IBB")


class UpperLayerError(Exception):
    pass


class ProtocolError(UpperLayerError):
    pass


class AssociationRejected(UpperLayerError):
    def __init__(self, result: int, source: int, reason: int):
        super().__init__(f"association rejected"
                         f" (result={result} source={source} reason={reason})")
        self.result, self.source, self.reason = result, source, reason


class AssociationAborted(UpperLayerError):
    pass


@dataclass(frozen=True)
class PresentationContext:
    context_id: int  # odd, 1..255
    abstract_syntax: str
    transfer_syntaxes: tuple[str, ...]


@dataclass(frozen=True)
class AcceptedContext:
    context_id: int
    result: int  # 0 acceptance, 3 abstract-syntax, 4 transfer-syntax rejection
    transfer_syntax: str


@dataclass
class AssociateRQ:
    called_ae: str
    calling_ae: str
    contexts: list[PresentationContext]
    max_pdu: int = DEFAULT_MAX_PDU
    implementation_class: str = IMPLEMENTATION_CLASS_UID
    implementation_version: str = IMPLEMENTATION_VERSION_NAME


@dataclass
class AssociateAC:
    called_ae: str
    calling_ae: str
    contexts: list[AcceptedContext]
    max_pdu: int = DEFAULT_MAX_PDU
    implementation_class: str = IMPLEMENTATION_CLASS_UID
    implementation_version: str = IMPLEMENTATION_VERSION_NAME


@dataclass(frozen=True)
class Pdv:
    context_id: int
    is_command: bool
    is_last: bool
    data: bytes


# ---------------------------------------------------------------------------
# PDU framing

def read_pdu(sock: socket.socket) -> tuple[int, bytes]:
    header = _recv_exact(sock, _PDU_HEADER.size)
    pdu_type, _, length = _PDU_HEADER.unpack(header)
    if pdu_type not in range(PDU_A_ASSOCIATE_RQ, PDU_A_ABORT + 1):
        raise ProtocolError(f"unknown PDU type 0x{pdu_type:02x}")
    if length > MAX_PDU_LENGTH:
        raise ProtocolError(f"PDU of {length} bytes exceeds limit")
    return pdu_type, _recv_exact(sock, length)


def write_pdu(sock: socket.socket, pdu_type: int, body: bytes) -> None:
    sock.sendall(_PDU_HEADER.pack(pdu_type, 0, len(body)) + body)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ProtocolError("connection closed mid-PDU")
        buf += chunk
    return bytes(buf)


# ---------------------------------------------------------------------------
# item encoding

def _ae_bytes(title: str) -> bytes:
    encoded = title.encode("ascii")
    if not encoded or len(encoded) > 16:
        raise ProtocolError(f"bad AE title {title!r}")
    return encoded.ljust(16, b" ")


def _item(item_type: int, payload: bytes) -> bytes:
    return struct.pack(">BBH", item_type, 0, len(payload)) + payload


def _uid_item(item_type: int, uid: str) -> bytes:
    return _item(item_type, uid.encode("ascii"))


def _walk_items(data: bytes):
    pos = 0
    while pos < len(data):
        if pos + 4 > len(data):
            raise ProtocolError("truncated item header")
        item_type, _, length = struct.unpack_from(">BBH", data, pos)
        pos += 4
        if pos + length > len(data):
            raise ProtocolError("truncated item payload")
        yield item_type, data[pos:pos + length]
        pos += length


def _user_information(max_pdu: int, impl_class: str, impl_version: str) -> bytes:
    payload = (_item(ITEM_MAX_LENGTH, struct.pack(">I", max_pdu))
               + _uid_item(ITEM_IMPLEMENTATION_CLASS, impl_class)
               + _uid_item(ITEM_IMPLEMENTATION_VERSION, impl_version))
    return _item(ITEM_USER_INFORMATION, payload)


def _associate_header(called_ae: str, calling_ae: str) -> bytes:
    return (struct.pack(">HH", PROTOCOL_VERSION, 0)
            + _ae_bytes(called_ae) + _ae_bytes(calling_ae) + bytes(32))


def encode_associate_rq(rq: AssociateRQ) -> bytes:
    body = bytearray(_associate_header(rq.called_ae, rq.calling_ae))
    body += _uid_item(ITEM_APPLICATION_CONTEXT, APPLICATION_CONTEXT_UID)
    for ctx in rq.contexts:
        payload = (struct.pack(">BBBB", ctx.context_id, 0, 0, 0)
                   + _uid_item(ITEM_ABSTRACT_SYNTAX, ctx.abstract_syntax)
                   + b"".join(_uid_item(ITEM_TRANSFER_SYNTAX, ts)
                              for ts in ctx.transfer_syntaxes))
        body += _item(ITEM_PRESENTATION_CONTEXT_RQ, payload)
    body += _user_information(rq.max_pdu, rq.implementation_class,
                              rq.implementation_version)
    return bytes(body)


def encode_associate_ac(ac: AssociateAC) -> bytes:
    body = bytearray(_associate_header(ac.called_ae, ac.calling_ae))
    body += _uid_item(ITEM_APPLICATION_CONTEXT, APPLICATION_CONTEXT_UID)
    for ctx in ac.contexts:
        payload = (struct.pack(">BBBB", ctx.context_id, 0, ctx.result, 0)
                   + _uid_item(ITEM_TRANSFER_SYNTAX, ctx.transfer_syntax))
        body += _item(ITEM_PRESENTATION_CONTEXT_AC, payload)
    body += _user_information(ac.max_pdu, ac.implementation_class,
                              ac.implementation_version)
    return bytes(body)


def _decode_associate_common(body: bytes):
    if len(body) < 68:
        raise ProtocolError("associate PDU too short")
    version, = struct.unpack_from(">H", body, 0)
    if version & 0x0001 == 0:
        raise ProtocolError(f"unsupported protocol version 0x{version:04x}")
    called_ae = body[4:20].decode("ascii", "replace").rstrip()
    calling_ae = body[20:36].decode("ascii", "replace").rstrip()
    return called_ae, calling_ae, body[68:]


def _decode_user_information(payload: bytes):
    max_pdu, impl_class, impl_version = DEFAULT_MAX_PDU, "", ""
    for sub_type, sub in _walk_items(payload):
        if sub_type == ITEM_MAX_LENGTH:
            if len(sub) != 4:
                raise ProtocolError("bad maximum-length sub-item")
            max_pdu, = struct.unpack(">I", sub)
        elif sub_type == ITEM_IMPLEMENTATION_CLASS:
            impl_class = sub.decode("ascii", "replace")
        elif sub_type == ITEM_IMPLEMENTATION_VERSION:
            impl_version = sub.decode("ascii", "replace")
    return max_pdu, impl_class, impl_version


def decode_associate_rq(body: bytes) -> AssociateRQ:
    called_ae, calling_ae, items = _decode_associate_common(body)
    rq = AssociateRQ(called_ae, calling_ae, [])
    for item_type, payload in _walk_items(items):
        if item_type == ITEM_PRESENTATION_CONTEXT_RQ:
            if len(payload) < 4:
                raise ProtocolError("short presentation context item")
            context_id = payload[0]
            abstract, transfer = "", []
            for sub_type, sub in _walk_items(payload[4:]):
                if sub_type == ITEM_ABSTRACT_SYNTAX:
                    abstract = sub.decode("ascii", "replace")
                elif sub_type == ITEM_TRANSFER_SYNTAX:
                    transfer.append(sub.decode("ascii", "replace"))
            rq.contexts.append(PresentationContext(context_id, abstract,
                                                   tuple(transfer)))
        elif item_type == ITEM_USER_INFORMATION:
            (rq.max_pdu, rq.implementation_class,
             rq.implementation_version) = _decode_user_information(payload)
    return rq


def decode_associate_ac(body: bytes) -> AssociateAC:
    called_ae, calling_ae, items = _decode_associate_common(body)
    ac = AssociateAC(called_ae, calling_ae, [])
    for item_type, payload in _walk_items(items):
        if item_type == ITEM_PRESENTATION_CONTEXT_AC:
            if len(payload) < 4:
                raise ProtocolError("short presentation context item")
            context_id, _, result, _ = struct.unpack_from(">BBBB", payload)
            transfer = ""
            for sub_type, sub in _walk_items(payload[4:]):
                if sub_type == ITEM_TRANSFER_SYNTAX:
                    transfer = sub.decode("ascii", "replace")
            ac.contexts.append(AcceptedContext(context_id, result, transfer))
        elif item_type == ITEM_USER_INFORMATION:
            (ac.max_pdu, ac.implementation_class,
             ac.implementation_version) = _decode_user_information(payload)
    return ac


def encode_associate_rj(result: int, source: int, reason: int) -> bytes:
    return struct.pack(">BBBB", 0, result, source, reason)


def decode_associate_rj(body: bytes) -> tuple[int, int, int]:
    if len(body) != 4:
        raise ProtocolError("bad A-ASSOCIATE-RJ length")
    _, result, source, reason = struct.unpack(">BBBB", body)
    return result, source, reason


RELEASE_BODY = bytes(4)


def encode_abort(source: int, reason: int) -> bytes:
    return struct.pack(">BBBB", 0, 0, source, reason)


# ---------------------------------------------------------------------------
# P-DATA-TF

def encode_pdata(pdvs: list[Pdv]) -> bytes:
    out = bytearray()
    for pdv in pdvs:
        control = (0x01 if pdv.is_command else 0) | (0x02 if pdv.is_last else 0)
        out += _PDV_HEADER.pack(len(pdv.data) + 2, pdv.context_id, control)
        out += pdv.data
    return bytes(out)


def decode_pdata(body: bytes) -> list[Pdv]:
    pdvs = []
    pos = 0
    while pos < len(body):
        if pos + _PDV_HEADER.size > len(body):
            raise ProtocolError("truncated PDV header")
        length, context_id, control = _PDV_HEADER.unpack_from(body, pos)
        pos += _PDV_HEADER.size
        data_len = length - 2
        if data_len < 0 or pos + data_len > len(body):
            raise ProtocolError("truncated PDV payload")
        pdvs.append(Pdv(context_id, bool(control & 0x01),
                        bool(control & 0x02), body[pos:pos + data_len]))
        pos += data_len
    return pdvs


def fragment(data: bytes, context_id: int, is_command: bool,
             max_pdu: int) -> list[Pdv]:
    """Split a message into PDVs that fit the negotiated max PDU size."""
    chunk = max(1, max_pdu - _PDV_HEADER.size - _PDU_HEADER.size)
    pdvs = []
    for start in range(0, max(len(data), 1), chunk):
        piece = data[start:start + chunk]
        pdvs.append(Pdv(context_id, is_command,
                        start + chunk >= len(data), piece))
    return pdvs


# ---------------------------------------------------------------------------
# DIMSE C-STORE command sets (implicit VR LE, with group length)

def _command_dataset(fields: list[tuple[int, list]]) -> bytes:
    ds = DicomDataset()
    for element, value in sorted(fields):
        ds.put(DataElement(Tag(0x0000, element), vr_for_tag(0x0000, element),
                           value))
    body = serialize_dataset_bytes(ds, IMPLICIT_VR_LE)
    full = DicomDataset()
    full.put(DataElement(Tag(0x0000, 0x0000), "UL", [len(body)]))
    for el in ds:
        full.put(el)
    return serialize_dataset_bytes(full, IMPLICIT_VR_LE)


def c_store_rq_command(sop_class: str, sop_instance: str,
                       message_id: int) -> bytes:
    return _command_dataset([
        (0x0002, [sop_class]),
        (0x0100, [C_STORE_RQ]),
        (0x0110, [message_id]),
        (0x0700, [0x0000]),  # priority medium
        (0x0800, [0x0000]),  # data set follows
        (0x1000, [sop_instance]),
    ])


def c_store_rsp_command(sop_class: str, sop_instance: str, message_id: int,
                        status: int) -> bytes:
    return _command_dataset([
        (0x0002, [sop_class]),
        (0x0100, [C_STORE_RSP]),
        (0x0120, [message_id]),
        (0x0800, [NO_DATASET]),
        (0x0900, [status]),
        (0x1000, [sop_instance]),
    ])


def parse_command(data: bytes) -> dict:
    """Command-set bytes to a {keyword: value} dict (single values)."""
    ds = parse_dataset_bytes(data, IMPLICIT_VR_LE)
    out = {}
    for el in ds:
        value = el.value
        if isinstance(value, list) and len(value) == 1:
            value = value[0]
        out[el.tag] = value
    return {
        "command_field": out.get(Tag(0x0000, 0x0100)),
        "message_id": out.get(Tag(0x0000, 0x0110)),
        "message_id_responded": out.get(Tag(0x0000, 0x0120)),
        "sop_class": out.get(Tag(0x0000, 0x0002)),
        "sop_instance": out.get(Tag(0x0000, 0x1000)),
        "data_set_type": out.get(Tag(0x0000, 0x0800)),
        "status": out.get(Tag(0x0000, 0x0900)),
    }


# ---------------------------------------------------------------------------
# SCP

class StoreScp:
    """Serves one association per call to :meth:`handle`.

    ``on_store(sop_class, sop_instance, dataset, transfer_syntax)``
    receives the parsed data set and returns a DIMSE status word;
    raising maps to the out-of-resources class.
    """

    def __init__(self, on_store: Callable[[str, str, DicomDataset, str], int],
                 ae_title: str = "MGRID",
                 max_pdu: int = DEFAULT_MAX_PDU):
        self.on_store = on_store
        self.ae_title = ae_title
        self.max_pdu = max_pdu

    def _negotiate(self, rq: AssociateRQ) -> list[AcceptedContext]:
        accepted = []
        for ctx in rq.contexts:
            if ctx.abstract_syntax not in SUPPORTED_ABSTRACT_SYNTAXES:
                accepted.append(AcceptedContext(ctx.context_id, 3, ""))
                continue
            chosen = next((ts for ts in TRANSFER_SYNTAX_PREFERENCE
                           if ts in ctx.transfer_syntaxes), None)
            if chosen is None:
                accepted.append(AcceptedContext(ctx.context_id, 4, ""))
            else:
                accepted.append(AcceptedContext(ctx.context_id, 0, chosen))
        return accepted

    def handle(self, sock: socket.socket) -> None:
        try:
            self._handle(sock)
        except (UpperLayerError, OSError, struct.error):
            try:
                write_pdu(sock, PDU_A_ABORT, encode_abort(2, 0))
            except OSError:
                pass
        finally:
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            sock.close()

    def _handle(self, sock: socket.socket) -> None:
        pdu_type, body = read_pdu(sock)
        if pdu_type != PDU_A_ASSOCIATE_RQ:
            raise ProtocolError("expected A-ASSOCIATE-RQ")
        rq = decode_associate_rq(body)
        contexts = self._negotiate(rq)
        accepted = {c.context_id: c.transfer_syntax
                    for c in contexts if c.result == 0}
        if not accepted:
            write_pdu(sock, PDU_A_ASSOCIATE_RJ, encode_associate_rj(1, 1, 1))
            return
        peer_max = rq.max_pdu or DEFAULT_MAX_PDU
        ac = AssociateAC(rq.called_ae, rq.calling_ae, contexts,
                         max_pdu=self.max_pdu)
        write_pdu(sock, PDU_A_ASSOCIATE_AC, encode_associate_ac(ac))
        command_buf, data_buf = bytearray(), bytearray()
        pending = None  # parsed C-STORE-RQ command awaiting its data set
        while True:
            pdu_type, body = read_pdu(sock)
            if pdu_type == PDU_A_RELEASE_RQ:
                write_pdu(sock, PDU_A_RELEASE_RP, RELEASE_BODY)
                return
            if pdu_type == PDU_A_ABORT:
                return
            if pdu_type != PDU_P_DATA_TF:
                raise ProtocolError(f"unexpected PDU 0x{pdu_type:02x}"
                                    " on established association")
            for pdv in decode_pdata(body):
                if pdv.context_id not in accepted:
                    raise ProtocolError(
                        f"PDV on unaccepted context {pdv.context_id}")
                if pdv.is_command:
                    command_buf += pdv.data
                    if pdv.is_last:
                        command = parse_command(bytes(command_buf))
                        command_buf.clear()
                        if command["command_field"] != C_STORE_RQ:
                            raise ProtocolError("only C-STORE-RQ is supported")
                        pending = (command, pdv.context_id)
                else:
                    data_buf += pdv.data
                    if pdv.is_last:
                        if pending is None:
                            raise ProtocolError("data set without command")
                        self._finish_store(sock, pending, bytes(data_buf),
                                           accepted, peer_max)
                        data_buf.clear()
                        pending = None

    def _finish_store(self, sock, pending, dataset_bytes, accepted, peer_max):
        command, context_id = pending
        transfer_syntax = accepted[context_id]
        try:
            ds = parse_dataset_bytes(dataset_bytes, transfer_syntax)
            status = self.on_store(command["sop_class"],
                                   command["sop_instance"], ds,
                                   transfer_syntax)
        except Exception:
            status = STATUS_OUT_OF_RESOURCES
        rsp = c_store_rsp_command(command["sop_class"],
                                  command["sop_instance"],
                                  command["message_id"], status)
        pdvs = fragment(rsp, context_id, is_command=True, max_pdu=peer_max)
        write_pdu(sock, PDU_P_DATA_TF, encode_pdata(pdvs))


# ---------------------------------------------------------------------------
# SCU

class StoreScu:
    """One association; N stores; release.  Use as a context manager."""

    def __init__(self, host: str, port: int, calling_ae: str = "MGRID_SCU",
                 called_ae: str = "MGRID", timeout: float = 10.0):
        self.host, self.port = host, port
        self.calling_ae, self.called_ae = calling_ae, called_ae
        self.timeout = timeout
        self.sock: socket.socket | None = None
        self.accepted: dict[str, tuple[int, str]] = {}  # abstract -> (id, ts)
        self.peer_max = DEFAULT_MAX_PDU
        self._message_id = 0

    def __enter__(self):
        self.associate()
        return self

    def __exit__(self, *exc):
        self.close()

    def associate(self,
                  contexts: list[PresentationContext] | None = None) -> None:
        if contexts is None:
            contexts = [
                PresentationContext(2 * i + 1, abstract,
                                    TRANSFER_SYNTAX_PREFERENCE)
                for i, abstract in enumerate(SUPPORTED_ABSTRACT_SYNTAXES)]
        self.sock = socket.create_connection((self.host, self.port),
                                             timeout=self.timeout)
        rq = AssociateRQ(self.called_ae, self.calling_ae, contexts)
        write_pdu(self.sock, PDU_A_ASSOCIATE_RQ, encode_associate_rq(rq))
        pdu_type, body = read_pdu(self.sock)
        if pdu_type == PDU_A_ASSOCIATE_RJ:
            raise AssociationRejected(*decode_associate_rj(body))
        if pdu_type == PDU_A_ABORT:
            raise AssociationAborted("association aborted by peer")
        if pdu_type != PDU_A_ASSOCIATE_AC:
            raise ProtocolError(f"unexpected PDU 0x{pdu_type:02x}")
        ac = decode_associate_ac(body)
        self.peer_max = ac.max_pdu or DEFAULT_MAX_PDU
        by_id = {ctx.context_id: ctx for ctx in contexts}
        self.accepted = {
            by_id[acc.context_id].abstract_syntax:
                (acc.context_id, acc.transfer_syntax)
            for acc in ac.contexts
            if acc.result == 0 and acc.context_id in by_id}
        if not self.accepted:
            self.abort()
            raise AssociationRejected(1, 1, 1)

    def store(self, ds: DicomDataset) -> tuple[str, int]:
        """C-STORE one data set; returns (sop instance UID, DIMSE status)."""
        sop_class = (ds.first(0x0008, 0x0016) or "").strip()
        sop_instance = (ds.first(0x0008, 0x0018) or "").strip()
        if sop_class not in self.accepted:
            raise ProtocolError(
                f"no accepted presentation context for {sop_class!r}")
        context_id, transfer_syntax = self.accepted[sop_class]
        self._message_id += 1
        command = c_store_rq_command(sop_class, sop_instance, self._message_id)
        write_pdu(self.sock, PDU_P_DATA_TF, encode_pdata(
            fragment(command, context_id, True, self.peer_max)))
        payload = serialize_dataset_bytes(ds, transfer_syntax)
        for pdv in fragment(payload, context_id, False, self.peer_max):
            write_pdu(self.sock, PDU_P_DATA_TF, encode_pdata([pdv]))
        response = bytearray()
        while True:
            pdu_type, body = read_pdu(self.sock)
            if pdu_type == PDU_A_ABORT:
                raise AssociationAborted("aborted during C-STORE")
            if pdu_type != PDU_P_DATA_TF:
                raise ProtocolError(f"unexpected PDU 0x{pdu_type:02x}")
            done = False
            for pdv in decode_pdata(body):
                if not pdv.is_command:
                    raise ProtocolError("unexpected data PDV in response")
                response += pdv.data
                done = done or pdv.is_last
            if done:
                break
        command = parse_command(bytes(response))
        if command["command_field"] != C_STORE_RSP:
            raise ProtocolError("expected C-STORE-RSP")
        return sop_instance, command["status"]

    def release(self) -> None:
        if self.sock is None:
            return
        write_pdu(self.sock, PDU_A_RELEASE_RQ, RELEASE_BODY)
        pdu_type, _ = read_pdu(self.sock)
        if pdu_type != PDU_A_RELEASE_RP:
            raise ProtocolError("expected A-RELEASE-RP")

    def abort(self) -> None:
        if self.sock is not None:
            try:
                write_pdu(self.sock, PDU_A_ABORT, encode_abort(0, 0))
            except OSError:
                pass

    def close(self) -> None:
        if self.sock is not None:
            try:
                self.release()
            except (UpperLayerError, OSError):
                pass
            self.sock.close()
            self.sock = None
