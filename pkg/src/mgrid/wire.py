"""Length-prefixed frame protocol for the client API and peer channels.

Frame layout: 1-byte message type, 16-byte request id, 4-byte big-endian
payload length, then the payload (UTF-8 XML, or raw bytes for file
chunks).  Files travel as a run of FileChunk frames of at most 1 MB,
terminated by a zero-length chunk.
"""

from __future__ import annotations

import socket
import struct

MSG_QUERY_REQUEST = 0x01
MSG_QUERY_RESPONSE = 0x02
MSG_ADD_REQUEST = 0x03
MSG_ADD_RESPONSE = 0x04
MSG_GET_REQUEST = 0x05
MSG_FILE_CHUNK = 0x06
MSG_FEDERATED_QUERY = 0x07
MSG_FEDERATED_RESPONSE = 0x08
MSG_ERROR = 0x7F

KNOWN_TYPES = frozenset([
    MSG_QUERY_REQUEST, MSG_QUERY_RESPONSE, MSG_ADD_REQUEST, MSG_ADD_RESPONSE,
    MSG_GET_REQUEST, MSG_FILE_CHUNK, MSG_FEDERATED_QUERY,
    MSG_FEDERATED_RESPONSE, MSG_ERROR,
])

MAX_FRAME = 16 * 1024 * 1024
FILE_CHUNK_SIZE = 1024 * 1024

_HEADER = struct.Struct(">B16sI")


class FrameError(Exception):
    pass


def recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise FrameError("connection closed mid-frame")
        buf += chunk
    return bytes(buf)


def read_frame(sock: socket.socket) -> tuple[int, bytes, bytes]:
    """Read one frame; returns (type, request_id, payload)."""
    msg_type, request_id, length = _HEADER.unpack(recv_exact(sock, _HEADER.size))
    if msg_type not in KNOWN_TYPES:
        raise FrameError(f"unknown message type 0x{msg_type:02x}")
    if length > MAX_FRAME:
        raise FrameError(f"frame of {length} bytes exceeds limit")
    return msg_type, request_id, recv_exact(sock, length)


def write_frame(sock: socket.socket, msg_type: int, request_id: bytes,
                payload: bytes) -> None:
    if len(request_id) != 16:
        raise FrameError("request id must be 16 bytes")
    if len(payload) > MAX_FRAME:
        raise FrameError(f"frame of {len(payload)} bytes exceeds limit")
    sock.sendall(_HEADER.pack(msg_type, request_id, len(payload)) + payload)


def write_file_frames(sock: socket.socket, request_id: bytes, data: bytes) -> None:
    """Send a file as chunked FileChunk frames plus the zero-length terminator."""
    for start in range(0, len(data), FILE_CHUNK_SIZE):
        write_frame(sock, MSG_FILE_CHUNK, request_id,
                    data[start:start + FILE_CHUNK_SIZE])
    write_frame(sock, MSG_FILE_CHUNK, request_id, b"")


def read_file_frames(sock: socket.socket, request_id: bytes) -> bytes:
    """Collect FileChunk frames until the zero-length terminator.

    A MSG_ERROR frame mid-stream aborts with its payload in the error.
    """
    out = bytearray()
    while True:
        msg_type, rid, payload = read_frame(sock)
        if msg_type == MSG_ERROR:
            raise FrameError(payload.decode("utf-8", "replace"))
        if msg_type != MSG_FILE_CHUNK or rid != request_id:
            raise FrameError("unexpected frame during file transfer")
        if not payload:
            return bytes(out)
        out += payload
