"""Generic XML rendering of DICOM datasets and its inverse.

Root element is ``dicom``; each data element becomes an ``element`` node
with attributes ``tag`` (8 uppercase hex digits), ``vr`` and ``keyword``
(when the tag is in the dictionary).  Sequence items become nested
``item`` nodes.  Pixel data is rendered as an empty node carrying only a
``length`` attribute, so the XML form is lossless for everything except
the pixel payload.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET

from mgrid.dicomdict import keyword_for_tag
from mgrid.dicomio import (
    BYTES_VRS,
    INT_VRS,
    DataElement,
    DicomDataset,
    DicomError,
    SUPPORTED_VRS,
    Tag,
)

PIXEL_DATA_TAG = Tag(0x7FE0, 0x0010)


class XmlRepError(DicomError):
    """Base class for XML representation failures."""


class BadTagAttribute(XmlRepError):
    pass


class BadVrAttribute(XmlRepError):
    pass


class ValueParseError(XmlRepError):
    pass


def _element_node(el: DataElement) -> ET.Element:
    node = ET.Element("element", tag=str(el.tag), vr=el.vr)
    keyword = keyword_for_tag(el.tag.group, el.tag.element)
    if keyword:
        node.set("keyword", keyword)
    if el.tag == PIXEL_DATA_TAG:
        node.set("length", str(len(el.value)))
        return node
    if el.vr == "SQ":
        for item_ds in el.value:
            item = ET.SubElement(node, "item")
            for child in item_ds:
                item.append(_element_node(child))
        return node
    if el.vr in BYTES_VRS:
        node.text = el.value.hex()
    else:
        node.text = "\\".join(str(v) for v in el.value)
    return node


def dataset_to_xml(ds: DicomDataset) -> ET.Element:
    root = ET.Element("dicom")
    for el in ds:
        root.append(_element_node(el))
    return root


def dataset_to_xml_bytes(ds: DicomDataset) -> bytes:
    return ET.tostring(dataset_to_xml(ds), encoding="utf-8",
                       xml_declaration=True)


def _parse_element_node(node: ET.Element) -> DataElement:
    tag_text = node.get("tag")
    if tag_text is None:
        raise BadTagAttribute("element node without tag attribute")
    try:
        tag = Tag.from_hex(tag_text)
    except ValueError:
        raise BadTagAttribute(f"bad tag attribute {tag_text!r}")
    if tag_text != tag_text.upper():
        raise BadTagAttribute(f"tag attribute must be uppercase hex: {tag_text!r}")
    vr = node.get("vr")
    if vr not in SUPPORTED_VRS:
        raise BadVrAttribute(f"bad vr attribute {vr!r}")
    if vr == "SQ":
        items = []
        for item in node:
            if item.tag != "item":
                raise ValueParseError(f"unexpected node {item.tag!r} in SQ element")
            items.append(DicomDataset([_parse_element_node(c) for c in item]))
        return DataElement(tag, vr, items)
    if len(node):
        raise ValueParseError(f"unexpected children under non-SQ element {tag}")
    text = node.text or ""
    if tag == PIXEL_DATA_TAG:
        raise ValueParseError("pixel data cannot be reconstructed from XML")
    if vr in BYTES_VRS:
        try:
            return DataElement(tag, vr, bytes.fromhex(text))
        except ValueError:
            raise ValueParseError(f"bad hex payload for {tag}")
    if vr in INT_VRS:
        try:
            value = [int(v) for v in text.split("\\")] if text else []
        except ValueError:
            raise ValueParseError(f"non-integer text for {vr} element {tag}")
        return DataElement(tag, vr, value)
    return DataElement(tag, vr, text.split("\\") if text else [])


def xml_to_dataset(root: ET.Element) -> DicomDataset:
    if root.tag != "dicom":
        raise ValueParseError(f"root element must be 'dicom', got {root.tag!r}")
    ds = DicomDataset()
    for node in root:
        if node.tag != "element":
            raise ValueParseError(f"unexpected node {node.tag!r} under root")
        ds.put(_parse_element_node(node))
    return ds


def xml_bytes_to_dataset(data: bytes) -> DicomDataset:
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        raise ValueParseError(f"malformed XML: {exc}")
    return xml_to_dataset(root)
