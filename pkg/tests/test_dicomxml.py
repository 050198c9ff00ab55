import random
import xml.etree.ElementTree as ET

import pytest

from genutil import random_dataset
from mgrid.dicomio import DataElement, DicomDataset, Tag
from mgrid.dicomxml import (
    BadTagAttribute,
    BadVrAttribute,
    ValueParseError,
    dataset_to_xml,
    dataset_to_xml_bytes,
    xml_bytes_to_dataset,
    xml_to_dataset,
)


def test_rows_element_rendering():
    ds = DicomDataset()
    ds.set(0x0028, 0x0010, 1024)
    node = dataset_to_xml(ds)[0]
    assert ET.tostring(node, encoding="unicode") == \
        '<element tag="00280010" vr="US" keyword="Rows">1024</element>'


def test_empty_dataset():
    root = dataset_to_xml(DicomDataset())
    assert root.tag == "dicom"
    assert len(root) == 0
    assert xml_to_dataset(ET.fromstring("<dicom/>")) == DicomDataset()


def test_elements_in_tag_order():
    ds = DicomDataset()
    ds.set(0x0028, 0x0010, 1024)
    ds.set(0x0010, 0x0020, "P123")
    root = dataset_to_xml(ds)
    assert [n.get("tag") for n in root] == ["00100020", "00280010"]


def test_pixel_data_rendered_as_length_only():
    ds = DicomDataset()
    ds.put(DataElement(Tag(0x7FE0, 0x0010), "OW", b"\x00" * 64))
    node = dataset_to_xml(ds)[0]
    assert node.get("length") == "64"
    assert node.text is None


def test_patient_id_parses_back():
    ds = xml_bytes_to_dataset(
        b'<dicom><element tag="00100020" vr="LO">P123</element></dicom>')
    assert ds.first(0x0010, 0x0020) == "P123"


def test_round_trip_pixel_free_datasets():
    rng = random.Random(5)
    for _ in range(50):
        ds = random_dataset(rng)
        again = xml_bytes_to_dataset(dataset_to_xml_bytes(ds))
        assert again == ds


def test_bad_tag_attribute():
    with pytest.raises(BadTagAttribute):
        xml_bytes_to_dataset(b'<dicom><element tag="nope" vr="LO">x</element></dicom>')
    with pytest.raises(BadTagAttribute):
        xml_bytes_to_dataset(b'<dicom><element tag="0010002g" vr="LO">x</element></dicom>')


def test_bad_vr_attribute():
    with pytest.raises(BadVrAttribute):
        xml_bytes_to_dataset(b'<dicom><element tag="00100020" vr="QQ">x</element></dicom>')


def test_value_parse_error():
    with pytest.raises(ValueParseError):
        xml_bytes_to_dataset(b'<dicom><element tag="00280010" vr="US">abc</element></dicom>')
    with pytest.raises(ValueParseError):
        xml_bytes_to_dataset(b"<dicom><other/></dicom>")
    with pytest.raises(ValueParseError):
        xml_bytes_to_dataset(b"not xml")


def test_sequence_items_nested():
    item = DicomDataset()
    item.set(0x0008, 0x1150, "1.2.3")
    ds = DicomDataset()
    ds.put(DataElement(Tag(0x0008, 0x1140), "SQ", [item]))
    root = dataset_to_xml(ds)
    sq = root[0]
    assert sq.get("vr") == "SQ"
    assert sq[0].tag == "item"
    assert sq[0][0].get("tag") == "00081150"
    assert xml_to_dataset(root) == ds
