import socket
import struct
import threading

import pytest

from mgrid import wire


@pytest.fixture
def pair():
    a, b = socket.socketpair()
    yield a, b
    a.close()
    b.close()


RID = bytes(range(16))


class TestFrames:
    def test_round_trip(self, pair):
        a, b = pair
        wire.write_frame(a, wire.MSG_QUERY_REQUEST, RID, b"<Query/>")
        assert wire.read_frame(b) == (wire.MSG_QUERY_REQUEST, RID, b"<Query/>")

    def test_header_layout_is_frozen(self, pair):
        a, b = pair
        wire.write_frame(a, wire.MSG_ERROR, RID, b"no")
        raw = b.recv(1024)
        assert raw == struct.pack(">B16sI", 0x7F, RID, 2) + b"no"

    def test_unknown_type_rejected(self, pair):
        a, b = pair
        a.sendall(struct.pack(">B16sI", 0x42, RID, 0))
        with pytest.raises(wire.FrameError):
            wire.read_frame(b)

    def test_oversized_frame_rejected(self, pair):
        a, b = pair
        a.sendall(struct.pack(">B16sI", 0x01, RID, wire.MAX_FRAME + 1))
        with pytest.raises(wire.FrameError):
            wire.read_frame(b)

    def test_truncated_stream(self, pair):
        a, b = pair
        a.sendall(struct.pack(">B16sI", 0x01, RID, 10) + b"half")
        a.close()
        with pytest.raises(wire.FrameError):
            wire.read_frame(b)

    def test_bad_request_id_length(self, pair):
        a, _ = pair
        with pytest.raises(wire.FrameError):
            wire.write_frame(a, wire.MSG_QUERY_REQUEST, b"short", b"")


class TestFileFrames:
    def test_multi_chunk_round_trip(self, pair):
        a, b = pair
        data = bytes(i % 251 for i in range(3 * wire.FILE_CHUNK_SIZE + 17))
        done = threading.Event()
        received = {}

        def reader():
            received["data"] = wire.read_file_frames(b, RID)
            done.set()

        t = threading.Thread(target=reader)
        t.start()
        wire.write_file_frames(a, RID, data)
        assert done.wait(10)
        t.join()
        assert received["data"] == data

    def test_empty_file(self, pair):
        a, b = pair
        wire.write_file_frames(a, RID, b"")
        assert wire.read_file_frames(b, RID) == b""

    def test_error_frame_aborts_transfer(self, pair):
        a, b = pair
        wire.write_frame(a, wire.MSG_FILE_CHUNK, RID, b"part")
        wire.write_frame(a, wire.MSG_ERROR, RID, b"gone")
        with pytest.raises(wire.FrameError, match="gone"):
            wire.read_file_frames(b, RID)
