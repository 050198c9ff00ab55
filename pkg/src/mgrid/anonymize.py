"""Keyed pseudonymization of datasets at the ingestion boundary.

The pseudonym is the first 16 lowercase hex characters of
HMAC-SHA-256(key, PatientID), so it is deterministic per key and lets
records for one patient be linked across sites without exposing the
original identity.  Direct-identifier elements are stripped outright and
the birth date is truncated to January 1st of its year.

Study/series/SOP UIDs are deliberately left untouched: they are the join
keys used across sites.  This is a known privacy limitation.
"""

from __future__ import annotations

import hashlib
import hmac

from mgrid.dicomio import DicomDataset, DicomError

PSEUDONYM_HEX_CHARS = 16

# Direct identifiers deleted outright during pseudonymization.
REMOVED_TAGS = (
    (0x0008, 0x0050),  # Accession Number
    (0x0008, 0x0080),  # Institution Name
    (0x0008, 0x0090),  # Referring Physician's Name
    (0x0008, 0x1070),  # Operators' Name
    (0x0010, 0x1000),  # Other Patient IDs
    (0x0010, 0x1001),  # Other Patient Names
    (0x0010, 0x1040),  # Patient's Address
)


class MissingIdentity(DicomError):
    """Dataset carries no PatientID to pseudonymize."""


def pseudonym_for(key: bytes, patient_id: str) -> str:
    """Deterministic 64-bit pseudonym for a patient identifier."""
    digest = hmac.new(key, patient_id.encode("utf-8"), hashlib.sha256)
    return digest.hexdigest()[:PSEUDONYM_HEX_CHARS]


def pseudonymize(ds: DicomDataset, key: bytes) -> tuple[DicomDataset, str]:
    """Return a pseudonymized copy of the dataset and the pseudonym used.

    All elements outside the identity set are carried over unchanged.
    """
    if len(key) != 32:
        raise ValueError("pseudonym key must be 32 bytes")
    patient_id = ds.first(0x0010, 0x0020)
    if not patient_id:
        raise MissingIdentity("dataset has no PatientID (0010,0020)")
    pseudo = pseudonym_for(key, patient_id)
    out = ds.copy()
    out.set(0x0010, 0x0020, [pseudo], vr="LO")
    out.set(0x0010, 0x0010, [pseudo], vr="PN")
    birth = out.first(0x0010, 0x0030)
    if birth and len(birth) >= 4:
        out.set(0x0010, 0x0030, [birth[:4] + "0101"], vr="DA")
    for group, element in REMOVED_TAGS:
        out.remove(group, element)
    return out, pseudo
