"""Regenerates the golden PDU trace files in this directory.

Deliberately self-contained: every byte is assembled with struct from
the published PDU/PDV/DIMSE layouts, with no imports from the package
under test, so the traces stay an independent check on the codec.
Run from this directory:  python3 make_goldens.py
"""

import struct

APP_CONTEXT = b"1.2.840.10008.3.1.1.1"
SECONDARY_CAPTURE = b"1.2.840.10008.5.1.4.1.1.7"
EXPLICIT_LE = b"1.2.840.10008.1.2.1"
IMPLICIT_LE = b"1.2.840.10008.1.2"
IMPL_CLASS = b"1.2.826.0.1.3680043.10.1462.1"
IMPL_VERSION = b"MGRID_0_1"

SOP_INSTANCE = b"1.2.826.0.1.3680043.9.7430.1.1"


def item(item_type, payload):
    return struct.pack(">BBH", item_type, 0, len(payload)) + payload


def pdu(pdu_type, body):
    return struct.pack(">BBI", pdu_type, 0, len(body)) + body


def associate_header(called, calling):
    return (struct.pack(">HH", 1, 0)
            + called.ljust(16) + calling.ljust(16) + bytes(32))


def user_information(max_pdu):
    return item(0x50, item(0x51, struct.pack(">I", max_pdu))
                + item(0x52, IMPL_CLASS) + item(0x55, IMPL_VERSION))


def a_associate_rq():
    ctx = item(0x20, bytes([1, 0, 0, 0])
               + item(0x30, SECONDARY_CAPTURE)
               + item(0x40, EXPLICIT_LE) + item(0x40, IMPLICIT_LE))
    body = (associate_header(b"MGRID", b"MGRID_SCU")
            + item(0x10, APP_CONTEXT) + ctx + user_information(16384))
    return pdu(0x01, body)


def a_associate_ac():
    ctx = item(0x21, bytes([1, 0, 0, 0]) + item(0x40, EXPLICIT_LE))
    body = (associate_header(b"MGRID", b"MGRID_SCU")
            + item(0x10, APP_CONTEXT) + ctx + user_information(16384))
    return pdu(0x02, body)


def implicit_element(group, element, value):
    return struct.pack("<HHI", group, element, len(value)) + value


def even_uid(uid):
    return uid if len(uid) % 2 == 0 else uid + b"\x00"


def us(value):
    return struct.pack("<H", value)


def c_store_rq_pdata():
    elements = (
        implicit_element(0x0000, 0x0002, even_uid(SECONDARY_CAPTURE))
        + implicit_element(0x0000, 0x0100, us(0x0001))   # C-STORE-RQ
        + implicit_element(0x0000, 0x0110, us(1))        # message id
        + implicit_element(0x0000, 0x0700, us(0))        # priority
        + implicit_element(0x0000, 0x0800, us(0))        # data set follows
        + implicit_element(0x0000, 0x1000, even_uid(SOP_INSTANCE)))
    command = implicit_element(0x0000, 0x0000,
                               struct.pack("<I", len(elements))) + elements
    # one PDV: length, context id 1, control header 0x03 (command + last)
    pdv = struct.pack(">IBB", len(command) + 2, 1, 0x03) + command
    return pdu(0x04, pdv)


def main():
    for name, data in [
        ("a_associate_rq.bin", a_associate_rq()),
        ("a_associate_ac.bin", a_associate_ac()),
        ("p_data_c_store_rq.bin", c_store_rq_pdata()),
        ("a_release_rq.bin", pdu(0x05, bytes(4))),
        ("a_release_rp.bin", pdu(0x06, bytes(4))),
        ("a_abort.bin", pdu(0x07, bytes([0, 0, 2, 0]))),
    ]:
        with open(name, "wb") as fh:
            fh.write(data)
        print(f"{name}: {len(data)} bytes")


if __name__ == "__main__":
    main()
