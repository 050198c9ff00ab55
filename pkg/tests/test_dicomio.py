import random
import struct

import pytest

from genutil import random_dataset
from mgrid.dicomio import (
    EXPLICIT_VR_LE,
    IMPLICIT_VR_LE,
    DataElement,
    DicomDataset,
    DicomError,
    MalformedPreamble,
    MissingSopUid,
    NestingTooDeep,
    Tag,
    TagOrderError,
    TruncatedElement,
    UnsupportedTransferSyntax,
    ValueTooLong,
    VrMismatch,
    extract_summary,
    parse_file,
    serialize_file,
    serialize_dataset_bytes,
)


def minimal_file_bytes() -> bytes:
    # Hand-assembled per the standard: preamble, DICM, meta group with
    # transfer syntax UID, then one explicit-VR LO element (0010,0020).
    ts_value = b"1.2.840.10008.1.2.1\x00"  # odd length padded with NUL
    meta_body = struct.pack("<HH2sH", 0x0002, 0x0010, b"UI", len(ts_value)) + ts_value
    group_len = struct.pack("<HH2sH", 0x0002, 0x0000, b"UL", 4) + struct.pack("<I", len(meta_body))
    element = struct.pack("<HH2sH", 0x0010, 0x0020, b"LO", 4) + b"P123"
    return b"\x00" * 128 + b"DICM" + group_len + meta_body + element


class TestParseFile:
    def test_hand_assembled_minimal_file(self):
        ds = parse_file(minimal_file_bytes())
        assert len(ds) == 1
        assert ds.first(0x0010, 0x0020) == "P123"
        assert ds.transfer_syntax == EXPLICIT_VR_LE

    def test_empty_input_is_malformed_preamble(self):
        with pytest.raises(MalformedPreamble):
            parse_file(b"")

    def test_bad_magic(self):
        with pytest.raises(MalformedPreamble):
            parse_file(b"\x00" * 128 + b"DICX" + b"\x00" * 32)

    def test_unknown_transfer_syntax(self):
        data = minimal_file_bytes().replace(b"1.2.840.10008.1.2.1\x00",
                                            b"1.2.840.10008.1.2.2\x00")
        with pytest.raises(UnsupportedTransferSyntax):
            parse_file(data)

    def test_truncated_value(self):
        data = minimal_file_bytes()[:-2]
        with pytest.raises(TruncatedElement):
            parse_file(data)

    def test_bad_explicit_vr_code(self):
        data = minimal_file_bytes().replace(b"LO", b"ZZ")
        with pytest.raises(VrMismatch):
            parse_file(data)

    def test_duplicate_tag_rejected(self):
        element = struct.pack("<HH2sH", 0x0010, 0x0020, b"LO", 4) + b"P123"
        data = minimal_file_bytes() + element
        with pytest.raises(TagOrderError):
            parse_file(data)

    def test_descending_tags_rejected(self):
        early = struct.pack("<HH2sH", 0x0008, 0x0060, b"CS", 2) + b"MG"
        data = minimal_file_bytes() + early
        with pytest.raises(TagOrderError):
            parse_file(data)


class TestRoundTrip:
    @pytest.mark.parametrize("ts", [EXPLICIT_VR_LE, IMPLICIT_VR_LE])
    def test_generated_datasets_round_trip(self, ts):
        rng = random.Random(7)
        for _ in range(60):
            ds = random_dataset(rng, with_pixels=rng.random() < 0.5)
            again = parse_file(serialize_file(ds, ts))
            assert again == ds
            assert again.transfer_syntax == ts

    def test_dual_encodings_parse_equal(self):
        rng = random.Random(11)
        for _ in range(30):
            ds = random_dataset(rng)
            explicit = parse_file(serialize_file(ds, EXPLICIT_VR_LE))
            implicit = parse_file(serialize_file(ds, IMPLICIT_VR_LE))
            assert explicit == implicit

    def test_reserialization_is_byte_identical(self):
        rng = random.Random(13)
        for _ in range(20):
            data = serialize_file(random_dataset(rng), EXPLICIT_VR_LE)
            assert serialize_file(parse_file(data), EXPLICIT_VR_LE) == data

    def test_serialized_elements_have_even_length(self):
        ds = DicomDataset()
        ds.set(0x0010, 0x0020, "P1")  # odd once padded? "P1" is even
        ds.set(0x0010, 0x0040, "F")   # odd, padded with space
        ds.set(0x0008, 0x0018, "1.2.3")  # odd UI, padded with NUL
        body = serialize_dataset_bytes(ds, EXPLICIT_VR_LE)
        assert len(body) % 2 == 0
        assert b"F " in body
        assert b"1.2.3\x00" in body

    def test_unsupported_transfer_syntax_on_serialize(self):
        with pytest.raises(UnsupportedTransferSyntax):
            serialize_file(DicomDataset(), "1.2.840.10008.1.2.2")

    def test_value_too_long_for_short_length_vr(self):
        ds = DicomDataset()
        ds.set(0x0010, 0x0020, "X" * 0x10000, vr="LO")
        with pytest.raises(ValueTooLong):
            serialize_file(ds, EXPLICIT_VR_LE)


class TestSequences:
    def test_undefined_length_sq_emits_delimiters(self):
        item = DicomDataset()
        item.set(0x0008, 0x1150, "1.2.840.10008.5.1.4.1.1.7")
        ds = DicomDataset()
        ds.put(DataElement(Tag(0x0008, 0x1140), "SQ", [item], undefined_length=True))
        body = serialize_dataset_bytes(ds, EXPLICIT_VR_LE)
        # hand-assembled expectation per the standard
        inner = struct.pack("<HH2sH", 0x0008, 0x1150, b"UI", 26) + b"1.2.840.10008.5.1.4.1.1.7\x00"
        expected = (struct.pack("<HH", 0x0008, 0x1140) + b"SQ\x00\x00"
                    + struct.pack("<I", 0xFFFFFFFF)
                    + struct.pack("<HHI", 0xFFFE, 0xE000, 0xFFFFFFFF)
                    + inner
                    + struct.pack("<HHI", 0xFFFE, 0xE00D, 0)
                    + struct.pack("<HHI", 0xFFFE, 0xE0DD, 0))
        assert body == expected
        assert parse_file(serialize_file(ds, EXPLICIT_VR_LE)) == ds

    def test_defined_length_sq_round_trip_both_syntaxes(self):
        item = DicomDataset()
        item.set(0x0040, 0x1001, "RP01")
        ds = DicomDataset()
        ds.put(DataElement(Tag(0x0040, 0x0275), "SQ", [item]))
        for ts in (EXPLICIT_VR_LE, IMPLICIT_VR_LE):
            assert parse_file(serialize_file(ds, ts)) == ds

    def test_nesting_beyond_limit_rejected(self):
        ds = DicomDataset()
        inner = ds
        for _ in range(5):
            nested = DicomDataset()
            inner.put(DataElement(Tag(0x0008, 0x1140), "SQ", [nested]))
            inner = nested
        with pytest.raises(NestingTooDeep):
            serialize_file(ds, EXPLICIT_VR_LE)


class TestFuzzSafety:
    def test_random_garbage_never_crashes(self):
        rng = random.Random(99)
        for _ in range(500):
            blob = rng.randbytes(rng.randint(0, 4096))
            try:
                parse_file(blob)
            except DicomError:
                pass

    def test_mutated_valid_files_never_crash(self):
        rng = random.Random(101)
        base = serialize_file(random_dataset(rng, with_pixels=True), EXPLICIT_VR_LE)
        for _ in range(500):
            data = bytearray(base)
            for _ in range(rng.randint(1, 8)):
                data[rng.randrange(len(data))] = rng.randrange(256)
            try:
                parse_file(bytes(data))
            except DicomError:
                pass


class TestExtractSummary:
    def test_dimensions_extracted(self):
        ds = DicomDataset()
        ds.set(0x0008, 0x0018, "1.2.3.4")
        ds.set(0x0028, 0x0010, 1024)
        ds.set(0x0028, 0x0011, 800)
        summary = extract_summary(ds)
        assert summary["rows"] == 1024
        assert summary["columns"] == 800
        assert summary["sop_uid"] == "1.2.3.4"
        assert summary["sex"] is None

    def test_missing_sop_uid(self):
        ds = DicomDataset()
        ds.set(0x0028, 0x0010, 1024)
        with pytest.raises(MissingSopUid):
            extract_summary(ds)

    def test_corpus_dataset_matches_ground_truth(self):
        from mgrid.corpus import dataset_for_record, generate_records
        records = generate_records(5, seed=21)
        rng = random.Random(3)
        for record in records:
            summary = extract_summary(dataset_for_record(record, rng))
            for name in ("patient_id", "sex", "birth_date", "study_uid",
                         "study_date", "study_description", "series_uid",
                         "modality", "laterality", "view_code", "sop_uid",
                         "rows", "columns", "bits_allocated"):
                assert summary[name] == record[name], name
            assert summary["pixel_spacing"] == tuple(
                float(v) for v in record["pixel_spacing"])
