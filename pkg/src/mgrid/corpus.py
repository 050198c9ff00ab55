"""Synthetic mammogram corpus with a ground-truth manifest.

Files are complete DICOM Part-10 files with small random pixel payloads
and realistic attribute distributions.  Generation is deterministic for
a fixed seed, and the manifest retains every record's raw attributes so
tests can use it as the independent ground truth for query oracles and
leak scans.
"""

from __future__ import annotations

import os
import random
import xml.etree.ElementTree as ET

from mgrid.anonymize import pseudonym_for
from mgrid.dicomio import EXPLICIT_VR_LE, DicomDataset, serialize_file
from mgrid.store import da_to_iso

MAMMO_SOP_CLASS = "1.2.840.10008.5.1.4.1.1.1.2"
UID_ROOT = "1.2.826.0.1.3680043.9.7430"

_SURNAMES = ["GARCIA", "ROSSI", "JENSEN", "NOVAK", "DUBOIS", "SILVA",
             "KOVACS", "WALSH", "LINDQVIST", "PAPAS"]
_FORENAMES = ["MARIA", "ANNA", "SOFIA", "EMMA", "LAURA", "IRENE",
              "CLARA", "NORA", "PAULA", "GRETA"]
_DESCRIPTIONS = ["SCREENING MAMMOGRAPHY", "DIAGNOSTIC MAMMOGRAPHY",
                 "FOLLOW UP", None]
_DIMENSIONS = [512, 1024, 2048, 2560, 3328, 4096]

RECORD_FIELDS = (
    "patient_id", "patient_name", "sex", "birth_date", "study_uid",
    "study_date", "study_description", "series_uid", "modality",
    "laterality", "view_code", "sop_uid", "rows", "columns",
    "bits_allocated", "pixel_spacing",
)
_INT_FIELDS = {"rows", "columns", "bits_allocated"}


def _uid(rng: random.Random, kind: int, counter: int) -> str:
    return f"{UID_ROOT}.{kind}.{rng.randrange(10**8)}.{counter}"


def _new_patient(rng: random.Random, counter: int) -> dict:
    return {
        "patient_id": f"HID{rng.randrange(10**7):07d}",
        "patient_name": f"{rng.choice(_SURNAMES)}^{rng.choice(_FORENAMES)}",
        "sex": rng.choices(["F", "M", "O"], weights=[90, 8, 2])[0],
        "birth_date": f"{rng.randint(1930, 1985)}"
                      f"{rng.randint(1, 12):02d}{rng.randint(1, 28):02d}",
        "studies": [],
    }


def _new_study(rng: random.Random, counter: int) -> dict:
    return {
        "study_uid": _uid(rng, 1, counter),
        "study_date": f"{rng.randint(1995, 2004)}"
                      f"{rng.randint(1, 12):02d}{rng.randint(1, 28):02d}",
        "study_description": rng.choice(_DESCRIPTIONS),
    }


def generate_records(n: int, seed: int) -> list[dict]:
    """Raw (pre-pseudonymization) ground-truth records, one per image."""
    rng = random.Random(seed)
    patients: list[dict] = []
    records = []
    for i in range(n):
        if not patients or (len(patients) < max(1, n // 3) and rng.random() < 0.4):
            patients.append(_new_patient(rng, len(patients)))
        patient = rng.choice(patients)
        if not patient["studies"] or rng.random() < 0.25:
            patient["studies"].append(_new_study(rng, i))
        study = rng.choice(patient["studies"])
        spacing = rng.choice(["0.050", "0.070", "0.085", "0.100"])
        record = {
            "patient_id": patient["patient_id"],
            "patient_name": patient["patient_name"],
            "sex": patient["sex"],
            "birth_date": patient["birth_date"],
            "study_uid": study["study_uid"],
            "study_date": study["study_date"],
            "study_description": study["study_description"],
            "series_uid": _uid(rng, 2, i),
            "modality": "MG",
            "laterality": rng.choice(["L", "R", None]),
            "view_code": rng.choice(["CC", "MLO", None]),
            "sop_uid": _uid(rng, 3, i),
            "rows": rng.choice(_DIMENSIONS),
            "columns": rng.choice(_DIMENSIONS),
            "bits_allocated": rng.choice([8, 16]),
            "pixel_spacing": (spacing, spacing),
        }
        records.append(record)
    return records


def dataset_for_record(record: dict, rng: random.Random) -> DicomDataset:
    """Build the DICOM dataset carrying a record's attributes."""
    ds = DicomDataset()
    ds.set(0x0008, 0x0008, ["ORIGINAL", "PRIMARY"])
    ds.set(0x0008, 0x0016, MAMMO_SOP_CLASS)
    ds.set(0x0008, 0x0018, record["sop_uid"])
    ds.set(0x0008, 0x0020, record["study_date"])
    ds.set(0x0008, 0x0050, f"ACC{rng.randrange(10**6):06d}")
    ds.set(0x0008, 0x0060, record["modality"])
    ds.set(0x0008, 0x0080, "GENERAL HOSPITAL RADIOLOGY")
    ds.set(0x0008, 0x0090, f"{rng.choice(_SURNAMES)}^DR")
    if record["study_description"]:
        ds.set(0x0008, 0x1030, record["study_description"])
    ds.set(0x0010, 0x0010, record["patient_name"])
    ds.set(0x0010, 0x0020, record["patient_id"])
    ds.set(0x0010, 0x0030, record["birth_date"])
    ds.set(0x0010, 0x0040, record["sex"])
    if record["view_code"]:
        ds.set(0x0018, 0x5101, record["view_code"])
    ds.set(0x0020, 0x000D, record["study_uid"])
    ds.set(0x0020, 0x000E, record["series_uid"])
    if record["laterality"]:
        ds.set(0x0020, 0x0062, record["laterality"])
    ds.set(0x0028, 0x0002, 1)
    ds.set(0x0028, 0x0004, "MONOCHROME2")
    ds.set(0x0028, 0x0010, record["rows"])
    ds.set(0x0028, 0x0011, record["columns"])
    ds.set(0x0028, 0x0030, list(record["pixel_spacing"]))
    ds.set(0x0028, 0x0100, record["bits_allocated"])
    ds.set(0x0028, 0x0101, record["bits_allocated"])
    ds.set(0x0028, 0x0102, record["bits_allocated"] - 1)
    ds.set(0x0028, 0x0103, 0)
    # token payload standing in for real pixel data
    ds.set(0x7FE0, 0x0010, rng.randbytes(2 * rng.randrange(128, 1024)), vr="OW")
    return ds


def generate_corpus(n: int, seed: int, out_dir: str) -> list[dict]:
    """Write n DICOM files plus manifest.xml; returns the records."""
    os.makedirs(out_dir, exist_ok=True)
    records = generate_records(n, seed)
    rng = random.Random(seed + 1)
    for record in records:
        ds = dataset_for_record(record, rng)
        path = os.path.join(out_dir, f"{record['sop_uid']}.dcm")
        with open(path, "wb") as fh:
            fh.write(serialize_file(ds, EXPLICIT_VR_LE))
        record["file"] = f"{record['sop_uid']}.dcm"
    _write_manifest(records, n, seed, os.path.join(out_dir, "manifest.xml"))
    return records


def _write_manifest(records: list[dict], n: int, seed: int, path: str) -> None:
    root = ET.Element("Manifest", count=str(n), seed=str(seed))
    for record in records:
        node = ET.SubElement(root, "Record", file=record["file"])
        for name in RECORD_FIELDS:
            value = record[name]
            if value is None:
                continue
            if name == "pixel_spacing":
                ET.SubElement(node, name).text = "\\".join(value)
            else:
                ET.SubElement(node, name).text = str(value)
    tree = ET.ElementTree(root)
    ET.indent(tree)
    tree.write(path, encoding="utf-8", xml_declaration=True)


def load_manifest(path: str) -> list[dict]:
    root = ET.parse(path).getroot()
    records = []
    for node in root:
        record = {name: None for name in RECORD_FIELDS}
        record["file"] = node.get("file")
        for child in node:
            if child.tag == "pixel_spacing":
                record["pixel_spacing"] = tuple((child.text or "").split("\\"))
            elif child.tag in _INT_FIELDS:
                record[child.tag] = int(child.text)
            else:
                record[child.tag] = child.text
        records.append(record)
    return records


def lfn_for(site_id: str, pseudo: str, record: dict) -> str:
    return f"/mg/{site_id}/{pseudo}/{record['study_uid']}/{record['sop_uid']}.dcm"


def ground_truth(records: list[dict], key: bytes, site_of: dict[str, str]) -> list[dict]:
    """Map raw records to query-attribute dicts as they look after ingest.

    ``site_of`` maps each record's SOP UID to the site that ingested it;
    records whose SOP UID is missing from the map are skipped.
    """
    out = []
    for r in records:
        site = site_of.get(r["sop_uid"])
        if site is None:
            continue
        pseudo = pseudonym_for(key, r["patient_id"])
        out.append({
            "Patient.PatientId": pseudo,
            "Patient.Sex": r["sex"],
            "Patient.BirthYear": int(r["birth_date"][:4]) if r["birth_date"] else None,
            "Study.StudyUid": r["study_uid"],
            "Study.StudyDate": da_to_iso(r["study_date"]),
            "Study.Description": r["study_description"],
            "Series.SeriesUid": r["series_uid"],
            "Series.Modality": r["modality"],
            "Series.Laterality": r["laterality"],
            "Series.ViewCode": r["view_code"],
            "Image.SopUid": r["sop_uid"],
            "Image.Lfn": lfn_for(site, pseudo, r),
            "Image.Rows": r["rows"],
            "Image.Columns": r["columns"],
            "Image.BitsAllocated": r["bits_allocated"],
        })
    return out
