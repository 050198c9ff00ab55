"""DICOM dataset model, Part-10 file parser and serializer.

Supports the two uncompressed little-endian transfer syntaxes (explicit
and implicit VR) over a fixed VR subset.  Parsing is defensive: any
malformed input raises a :class:`DicomError` subclass, never an
unbounded read or a crash.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from mgrid.dicomdict import keyword_for_tag, vr_for_tag

EXPLICIT_VR_LE = "1.2.840.10008.1.2.1"
IMPLICIT_VR_LE = "1.2.840.10008.1.2"
SUPPORTED_TRANSFER_SYNTAXES = (EXPLICIT_VR_LE, IMPLICIT_VR_LE)

UNDEFINED_LENGTH = 0xFFFFFFFF
MAX_SQ_DEPTH = 4

# VR subset; anything else is rejected with VrMismatch.
TEXT_VRS = {"AE", "AS", "CS", "DA", "DS", "DT", "IS", "LO", "LT", "PN", "SH", "ST", "TM"}
INT_VRS = {"US": "<H", "SS": "<h", "UL": "<I", "SL": "<i"}
BYTES_VRS = {"OB", "OW", "UN"}
SUPPORTED_VRS = TEXT_VRS | set(INT_VRS) | BYTES_VRS | {"UI", "SQ"}
# VRs using the 4-byte length form (with 2 reserved bytes) in explicit VR
LONG_LENGTH_VRS = {"OB", "OW", "SQ", "UN"}
# multi-valued text VRs split on backslash; LT/ST have no value multiplicity
SINGLE_VALUE_TEXT_VRS = {"LT", "ST"}

IMPLEMENTATION_CLASS_UID = "1.2.826.0.1.3680043.10.1462.1"
IMPLEMENTATION_VERSION_NAME = "MGRID_0_1"


class DicomError(Exception):
    """Base class for all DICOM parse/serialize failures."""


class MalformedPreamble(DicomError):
    pass


class UnsupportedTransferSyntax(DicomError):
    pass


class TruncatedElement(DicomError):
    pass


class NestingTooDeep(TruncatedElement):
    pass


class VrMismatch(DicomError):
    pass


class ValueTooLong(DicomError):
    pass


class TagOrderError(DicomError):
    """Duplicate or out-of-order tag at one nesting level."""


class MissingSopUid(DicomError):
    pass


@dataclass(frozen=True, order=True)
class Tag:
    group: int
    element: int

    def __post_init__(self):
        if not (0 <= self.group <= 0xFFFF and 0 <= self.element <= 0xFFFF):
            raise ValueError("tag components must be 16-bit unsigned")

    def __str__(self) -> str:
        return f"{self.group:04X}{self.element:04X}"

    @classmethod
    def from_hex(cls, text: str) -> "Tag":
        if len(text) != 8:
            raise ValueError(f"bad tag text {text!r}")
        return cls(int(text[:4], 16), int(text[4:], 16))


@dataclass
class DataElement:
    tag: Tag
    vr: str
    # list[str] for text/UI VRs, list[int] for integer VRs, bytes for
    # OB/OW/UN, list[DicomDataset] for SQ
    value: object
    # preserve the length form an SQ/pixel element was parsed with
    undefined_length: bool = False

    def __post_init__(self):
        if self.vr not in SUPPORTED_VRS:
            raise VrMismatch(f"unsupported VR {self.vr!r}")

    def __eq__(self, other) -> bool:
        if not isinstance(other, DataElement):
            return NotImplemented
        return (self.tag, self.vr, self.value) == (other.tag, other.vr, other.value)

    def first(self):
        """First value, or None for an empty element."""
        if isinstance(self.value, bytes):
            return self.value or None
        return self.value[0] if self.value else None


class DicomDataset:
    """Ordered, duplicate-free collection of data elements."""

    def __init__(self, elements: list[DataElement] | None = None,
                 transfer_syntax: str | None = None):
        self._elements: dict[Tag, DataElement] = {}
        self.transfer_syntax = transfer_syntax
        for el in elements or []:
            self.put(el)

    def put(self, el: DataElement) -> None:
        if el.tag in self._elements:
            raise TagOrderError(f"duplicate tag {el.tag}")
        self._elements[el.tag] = el

    def set(self, group: int, element: int, value, vr: str | None = None) -> None:
        """Convenience setter; VR resolved from the dictionary when omitted."""
        tag = Tag(group, element)
        if vr is None:
            vr = vr_for_tag(group, element)
        if isinstance(value, (str, int)):
            value = [value]
        self._elements.pop(tag, None)
        self._elements[tag] = DataElement(tag, vr, value)

    def get(self, group: int, element: int) -> DataElement | None:
        return self._elements.get(Tag(group, element))

    def first(self, group: int, element: int):
        el = self.get(group, element)
        return el.first() if el else None

    def remove(self, group: int, element: int) -> None:
        self._elements.pop(Tag(group, element), None)

    def __contains__(self, tag: Tag) -> bool:
        return tag in self._elements

    def __iter__(self):
        return iter(sorted(self._elements.values(), key=lambda e: e.tag))

    def __len__(self) -> int:
        return len(self._elements)

    def __eq__(self, other) -> bool:
        if not isinstance(other, DicomDataset):
            return NotImplemented
        return list(self) == list(other)

    def __repr__(self) -> str:
        return f"DicomDataset({len(self._elements)} elements, ts={self.transfer_syntax})"

    def copy(self) -> "DicomDataset":
        return DicomDataset(list(self), transfer_syntax=self.transfer_syntax)


class _Reader:
    """Bounds-checked cursor over an immutable buffer."""

    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def remaining(self) -> int:
        return len(self.buf) - self.pos

    def read(self, n: int) -> bytes:
        if n < 0 or n > self.remaining():
            raise TruncatedElement(
                f"need {n} bytes at offset {self.pos}, have {self.remaining()}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u16(self) -> int:
        return struct.unpack("<H", self.read(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.read(4))[0]

    def peek_tag(self) -> tuple[int, int] | None:
        if self.remaining() < 4:
            return None
        return struct.unpack_from("<HH", self.buf, self.pos)


def _decode_value(vr: str, raw: bytes):
    if vr == "SQ":
        raise AssertionError("SQ handled separately")
    if vr in BYTES_VRS:
        return raw
    if vr in INT_VRS:
        fmt = INT_VRS[vr]
        size = struct.calcsize(fmt)
        if len(raw) % size:
            raise VrMismatch(f"{vr} value length {len(raw)} not a multiple of {size}")
        return [struct.unpack_from(fmt, raw, i)[0] for i in range(0, len(raw), size)]
    try:
        text = raw.decode("ascii")
    except UnicodeDecodeError:
        raise VrMismatch(f"non-ASCII bytes in {vr} value")
    if vr == "UI":
        text = text.rstrip("\x00")
        return text.split("\\") if text else []
    # text VRs
    text = text.rstrip(" ")
    if vr in SINGLE_VALUE_TEXT_VRS:
        return [text] if text else []
    return text.split("\\") if text else []


def _read_element_header(r: _Reader, explicit: bool) -> tuple[Tag, str, int]:
    group = r.u16()
    element = r.u16()
    tag = Tag(group, element)
    if explicit:
        vr = r.read(2).decode("ascii", errors="replace")
        if vr not in SUPPORTED_VRS:
            raise VrMismatch(f"unknown explicit VR {vr!r} at tag {tag}")
        if vr in LONG_LENGTH_VRS:
            r.read(2)  # reserved
            length = r.u32()
        else:
            length = r.u16()
    else:
        length = r.u32()
        vr = vr_for_tag(group, element)
    return tag, vr, length


def _parse_sq_items(r: _Reader, explicit: bool, undefined: bool,
                    length: int, depth: int) -> list[DicomDataset]:
    if depth >= MAX_SQ_DEPTH:
        raise NestingTooDeep(f"sequence nesting exceeds {MAX_SQ_DEPTH}")
    items: list[DicomDataset] = []
    end = None if undefined else r.pos + length
    if end is not None and end > len(r.buf):
        raise TruncatedElement("sequence length exceeds remaining bytes")
    while True:
        if end is not None:
            if r.pos == end:
                break
            if r.pos > end:
                raise TruncatedElement("sequence items overran declared length")
        group = r.u16()
        element = r.u16()
        ilen = r.u32()
        if (group, element) == (0xFFFE, 0xE0DD):
            if not undefined:
                raise TruncatedElement("sequence delimiter inside defined-length SQ")
            break
        if (group, element) != (0xFFFE, 0xE000):
            raise TruncatedElement(
                f"expected item tag in sequence, got {group:04X}{element:04X}")
        if ilen == UNDEFINED_LENGTH:
            items.append(_parse_dataset(r, explicit, None, depth + 1,
                                        stop_at_item_delim=True))
        else:
            if ilen > r.remaining():
                raise TruncatedElement("item length exceeds remaining bytes")
            items.append(_parse_dataset(r, explicit, r.pos + ilen, depth + 1))
    return items


def _parse_dataset(r: _Reader, explicit: bool, end: int | None, depth: int,
                   stop_at_item_delim: bool = False) -> DicomDataset:
    ds = DicomDataset()
    last_tag: Tag | None = None
    while True:
        if end is not None:
            if r.pos == end:
                break
            if r.pos > end:
                raise TruncatedElement("element overran enclosing length")
        elif r.remaining() == 0:
            break
        if stop_at_item_delim:
            peek = r.peek_tag()
            if peek == (0xFFFE, 0xE00D):
                r.read(4)
                if r.u32() != 0:
                    raise TruncatedElement("item delimiter with nonzero length")
                break
        tag, vr, length = _read_element_header(r, explicit)
        if last_tag is not None and tag <= last_tag:
            raise TagOrderError(f"tag {tag} not in ascending order")
        last_tag = tag
        if vr == "SQ":
            undefined = length == UNDEFINED_LENGTH
            items = _parse_sq_items(r, explicit, undefined, length, depth)
            ds.put(DataElement(tag, vr, items, undefined_length=undefined))
            continue
        if length == UNDEFINED_LENGTH:
            raise TruncatedElement(f"undefined length on non-SQ element {tag}")
        raw = r.read(length)
        ds.put(DataElement(tag, vr, _decode_value(vr, raw)))
    return ds


def parse_file(data: bytes) -> DicomDataset:
    """Parse a DICOM Part-10 file into a dataset.

    The File Meta group is consumed to learn the transfer syntax and is
    not part of the returned dataset.
    """
    if len(data) < 132 or data[128:132] != b"DICM":
        raise MalformedPreamble("missing 128-byte preamble + DICM magic")
    r = _Reader(data)
    r.pos = 132
    meta = DicomDataset()
    while True:
        peek = r.peek_tag()
        if peek is None or peek[0] != 0x0002:
            break
        tag, vr, length = _read_element_header(r, explicit=True)
        if vr == "SQ" or length == UNDEFINED_LENGTH:
            raise TruncatedElement("sequence in file meta group")
        raw = r.read(length)
        if tag in meta:
            raise TagOrderError(f"duplicate meta tag {tag}")
        meta._elements[tag] = DataElement(tag, vr, _decode_value(vr, raw))
    ts = meta.first(0x0002, 0x0010)
    if ts not in SUPPORTED_TRANSFER_SYNTAXES:
        raise UnsupportedTransferSyntax(f"transfer syntax {ts!r}")
    ds = _parse_dataset(r, explicit=(ts == EXPLICIT_VR_LE), end=None, depth=0)
    ds.transfer_syntax = ts
    return ds


def parse_dataset_bytes(data: bytes, transfer_syntax: str) -> DicomDataset:
    """Parse a bare data set (no preamble/meta), e.g. a C-STORE payload."""
    if transfer_syntax not in SUPPORTED_TRANSFER_SYNTAXES:
        raise UnsupportedTransferSyntax(f"transfer syntax {transfer_syntax!r}")
    r = _Reader(data)
    ds = _parse_dataset(r, explicit=(transfer_syntax == EXPLICIT_VR_LE),
                        end=None, depth=0)
    ds.transfer_syntax = transfer_syntax
    return ds


def _encode_value(el: DataElement) -> bytes:
    vr = el.vr
    if vr in BYTES_VRS:
        raw = bytes(el.value)
        return raw + b"\x00" if len(raw) % 2 else raw
    if vr in INT_VRS:
        fmt = INT_VRS[vr]
        try:
            return b"".join(struct.pack(fmt, int(v)) for v in el.value)
        except struct.error as exc:
            raise VrMismatch(f"value out of range for {vr}: {exc}")
    parts = [str(v) for v in el.value]
    text = "\\".join(parts)
    try:
        raw = text.encode("ascii")
    except UnicodeEncodeError:
        raise VrMismatch(f"non-ASCII text in {vr} value")
    if len(raw) % 2:
        raw += b"\x00" if vr == "UI" else b" "
    return raw


def _write_element(out: bytearray, el: DataElement, explicit: bool,
                   depth: int = 0) -> None:
    out += struct.pack("<HH", el.tag.group, el.tag.element)
    if el.vr == "SQ":
        if depth >= MAX_SQ_DEPTH:
            raise NestingTooDeep(f"sequence nesting exceeds {MAX_SQ_DEPTH}")
        body = bytearray()
        for item in el.value:
            item_body = _serialize_dataset(item, explicit, depth + 1)
            if el.undefined_length:
                body += struct.pack("<HHI", 0xFFFE, 0xE000, UNDEFINED_LENGTH)
                body += item_body
                body += struct.pack("<HHI", 0xFFFE, 0xE00D, 0)
            else:
                body += struct.pack("<HHI", 0xFFFE, 0xE000, len(item_body))
                body += item_body
        length = UNDEFINED_LENGTH if el.undefined_length else len(body)
        if explicit:
            out += b"SQ\x00\x00" + struct.pack("<I", length)
        else:
            out += struct.pack("<I", length)
        out += body
        if el.undefined_length:
            out += struct.pack("<HHI", 0xFFFE, 0xE0DD, 0)
        return
    raw = _encode_value(el)
    if explicit:
        if el.vr in LONG_LENGTH_VRS:
            if len(raw) > 0xFFFFFFFE:
                raise ValueTooLong(f"{el.tag} value of {len(raw)} bytes")
            out += el.vr.encode("ascii") + b"\x00\x00" + struct.pack("<I", len(raw))
        else:
            if len(raw) > 0xFFFF:
                raise ValueTooLong(
                    f"{el.tag} {el.vr} value of {len(raw)} bytes exceeds 16-bit length")
            out += el.vr.encode("ascii") + struct.pack("<H", len(raw))
    else:
        out += struct.pack("<I", len(raw))
    out += raw


def _serialize_dataset(ds: DicomDataset, explicit: bool, depth: int = 0) -> bytes:
    out = bytearray()
    for el in ds:
        _write_element(out, el, explicit, depth)
    return bytes(out)


def serialize_dataset_bytes(ds: DicomDataset, transfer_syntax: str) -> bytes:
    """Serialize a bare data set in the given transfer syntax."""
    if transfer_syntax not in SUPPORTED_TRANSFER_SYNTAXES:
        raise UnsupportedTransferSyntax(f"transfer syntax {transfer_syntax!r}")
    return _serialize_dataset(ds, explicit=(transfer_syntax == EXPLICIT_VR_LE))


def _build_file_meta(ds: DicomDataset, transfer_syntax: str) -> bytes:
    meta = DicomDataset()
    meta.set(0x0002, 0x0001, b"\x00\x01", vr="OB")
    meta.set(0x0002, 0x0002, [ds.first(0x0008, 0x0016) or ""], vr="UI")
    meta.set(0x0002, 0x0003, [ds.first(0x0008, 0x0018) or ""], vr="UI")
    meta.set(0x0002, 0x0010, [transfer_syntax], vr="UI")
    meta.set(0x0002, 0x0012, [IMPLEMENTATION_CLASS_UID], vr="UI")
    meta.set(0x0002, 0x0013, [IMPLEMENTATION_VERSION_NAME], vr="SH")
    body = _serialize_dataset(meta, explicit=True)
    head = bytearray()
    _write_element(head, DataElement(Tag(0x0002, 0x0000), "UL", [len(body)]),
                   explicit=True)
    return bytes(head) + body


def serialize_file(ds: DicomDataset, transfer_syntax: str) -> bytes:
    """Serialize a dataset to a complete Part-10 file.

    The File Meta group is regenerated; the output re-parses to an equal
    dataset.
    """
    if transfer_syntax not in SUPPORTED_TRANSFER_SYNTAXES:
        raise UnsupportedTransferSyntax(f"transfer syntax {transfer_syntax!r}")
    body = serialize_dataset_bytes(ds, transfer_syntax)
    return b"\x00" * 128 + b"DICM" + _build_file_meta(ds, transfer_syntax) + body


# ---------------------------------------------------------------------------
# metadata summary extraction

SUMMARY_ATTRS = (
    "patient_id", "sex", "birth_date", "study_uid", "study_date",
    "study_description", "series_uid", "modality", "laterality",
    "view_code", "sop_uid", "rows", "columns", "bits_allocated",
    "pixel_spacing",
)


def extract_summary(ds: DicomDataset) -> dict:
    """Fixed attribute map feeding the metadata store; absent values are None."""
    sop_uid = ds.first(0x0008, 0x0018)
    if not sop_uid:
        raise MissingSopUid("dataset has no SOP Instance UID (0008,0018)")
    laterality = ds.first(0x0020, 0x0062) or ds.first(0x0020, 0x0060)
    spacing_el = ds.get(0x0028, 0x0030)
    spacing = None
    if spacing_el and len(spacing_el.value) == 2:
        try:
            spacing = (float(spacing_el.value[0]), float(spacing_el.value[1]))
        except ValueError:
            spacing = None
    return {
        "patient_id": ds.first(0x0010, 0x0020),
        "sex": ds.first(0x0010, 0x0040),
        "birth_date": ds.first(0x0010, 0x0030),
        "study_uid": ds.first(0x0020, 0x000D),
        "study_date": ds.first(0x0008, 0x0020),
        "study_description": ds.first(0x0008, 0x1030),
        "series_uid": ds.first(0x0020, 0x000E),
        "modality": ds.first(0x0008, 0x0060),
        "laterality": laterality,
        "view_code": ds.first(0x0018, 0x5101),
        "sop_uid": sop_uid,
        "rows": ds.first(0x0028, 0x0010),
        "columns": ds.first(0x0028, 0x0011),
        "bits_allocated": ds.first(0x0028, 0x0100),
        "pixel_spacing": spacing,
    }
