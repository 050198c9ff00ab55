import random

import pytest

from mgrid.anonymize import MissingIdentity, pseudonym_for, pseudonymize
from mgrid.dicomio import DicomDataset

ZERO_KEY = b"\x00" * 32
OTHER_KEY = b"\x01" * 32


def sample_dataset():
    ds = DicomDataset()
    ds.set(0x0008, 0x0018, "1.2.3.4")
    ds.set(0x0008, 0x0050, "ACC001")
    ds.set(0x0008, 0x0080, "GENERAL HOSPITAL")
    ds.set(0x0008, 0x0090, "HOUSE^GREG")
    ds.set(0x0010, 0x0010, "SMITH^MARY")
    ds.set(0x0010, 0x0020, "P123")
    ds.set(0x0010, 0x0030, "19651104")
    ds.set(0x0010, 0x0040, "F")
    ds.set(0x0010, 0x1040, "1 MAIN ST")
    ds.set(0x0028, 0x0010, 1024)
    return ds


def test_frozen_hmac_vector():
    # computed with an independent HMAC-SHA-256 implementation
    assert pseudonym_for(ZERO_KEY, "P123") == "c4fb3e23b9651d8d"


def test_pseudonymization_is_deterministic():
    out1, p1 = pseudonymize(sample_dataset(), ZERO_KEY)
    out2, p2 = pseudonymize(sample_dataset(), ZERO_KEY)
    assert p1 == p2 == "c4fb3e23b9651d8d"
    assert out1 == out2


def test_identity_replacement_and_removal():
    out, pseudo = pseudonymize(sample_dataset(), ZERO_KEY)
    assert out.first(0x0010, 0x0020) == pseudo
    assert out.first(0x0010, 0x0010) == pseudo
    assert out.first(0x0010, 0x0030) == "19650101"
    for group, element in [(0x0008, 0x0050), (0x0008, 0x0080),
                           (0x0008, 0x0090), (0x0010, 0x1040)]:
        assert out.get(group, element) is None
    # everything outside the identity set is untouched
    assert out.first(0x0008, 0x0018) == "1.2.3.4"
    assert out.first(0x0010, 0x0040) == "F"
    assert out.first(0x0028, 0x0010) == 1024


def test_input_dataset_not_mutated():
    ds = sample_dataset()
    pseudonymize(ds, ZERO_KEY)
    assert ds.first(0x0010, 0x0020) == "P123"


def test_missing_patient_id():
    ds = DicomDataset()
    ds.set(0x0008, 0x0018, "1.2.3.4")
    with pytest.raises(MissingIdentity):
        pseudonymize(ds, ZERO_KEY)


def test_pseudonyms_distinct_across_many_patients():
    rng = random.Random(17)
    ids = {f"HID{rng.randrange(10**9):09d}" for _ in range(1100)}
    pseudos = {pseudonym_for(ZERO_KEY, pid) for pid in ids}
    assert len(pseudos) == len(ids)


def test_key_sensitivity():
    rng = random.Random(19)
    for _ in range(100):
        pid = f"HID{rng.randrange(10**9):09d}"
        assert pseudonym_for(ZERO_KEY, pid) != pseudonym_for(OTHER_KEY, pid)


def test_bad_key_length():
    with pytest.raises(ValueError):
        pseudonymize(sample_dataset(), b"short")
