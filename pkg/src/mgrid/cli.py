"""Command-line front door: node daemon, DICOM SCU, API client, corpus.

Exit codes: 0 success, 2 configuration/usage error, 3 association
rejected or server unreachable, 4 store/protocol failure, 5 wrong
token.  stdout carries only payload; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import signal
import sys
import threading
import xml.etree.ElementTree as ET

from .catalogue import NotFound
from .corpus import generate_corpus
from .dicomio import DicomError, parse_file
from .fq import FqError, parse_fq, serialize_fq
from .node import (
    AuthError,
    BindError,
    ConfigError,
    NodeError,
    client_add,
    client_get,
    client_query,
    load_config,
    serve,
)
from .upperlayer import (
    STATUS_SUCCESS,
    AssociationAborted,
    AssociationRejected,
    StoreScu,
    UpperLayerError,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ASSOCIATION = 3
EXIT_STORE = 4
EXIT_AUTH = 5


def _err(message: str) -> None:
    print(message, file=sys.stderr)


def cmd_serve(args) -> int:
    try:
        config = load_config(args.config)
        node = serve(config)
    except (ConfigError, BindError) as exc:
        _err(f"error: {exc}")
        return EXIT_CONFIG
    done = threading.Event()

    def shutdown(signum, frame):
        done.set()

    signal.signal(signal.SIGINT, shutdown)
    signal.signal(signal.SIGTERM, shutdown)
    _err(f"serving site {config.site_id}"
         f" (dicom={config.dicom_port} api={config.api_port}"
         f" peer={config.peer_port})")
    done.wait()
    node.stop()
    return EXIT_OK


def cmd_store(args) -> int:
    datasets = []
    for path in args.files:
        try:
            with open(path, "rb") as fh:
                datasets.append((path, parse_file(fh.read())))
        except (OSError, DicomError) as exc:
            _err(f"error: cannot read DICOM file {path}: {exc}")
            return EXIT_STORE
    try:
        scu = StoreScu(args.host, args.port)
        scu.associate()
    except (AssociationRejected, AssociationAborted, OSError) as exc:
        _err(f"error: cannot associate with {args.host}:{args.port}: {exc}")
        return EXIT_ASSOCIATION
    failures = 0
    try:
        for path, ds in datasets:
            try:
                sop_uid, status = scu.store(ds)
            except UpperLayerError as exc:
                _err(f"error: store failed for {path}: {exc}")
                failures += 1
                continue
            if status == STATUS_SUCCESS:
                print(sop_uid)
            else:
                _err(f"error: store of {path} returned"
                     f" status 0x{status:04x}")
                failures += 1
    finally:
        scu.close()
    return EXIT_STORE if failures else EXIT_OK


def cmd_add(args) -> int:
    try:
        lfn, pseudonym = client_add(args.host, args.port, args.token,
                                    args.sop_uid)
    except AuthError as exc:
        _err(f"error: {exc}")
        return EXIT_AUTH
    except OSError as exc:
        _err(f"error: cannot reach {args.host}:{args.port}: {exc}")
        return EXIT_ASSOCIATION
    except NodeError as exc:
        _err(f"error: {exc}")
        return EXIT_STORE
    print(lfn)
    print(pseudonym)
    return EXIT_OK


def cmd_query(args) -> int:
    try:
        with open(args.file, "rb") as fh:
            fq_xml = fh.read()
    except OSError as exc:
        _err(f"error: {exc}")
        return EXIT_CONFIG
    if args.no_data:
        try:
            fq = parse_fq(fq_xml)
        except FqError as exc:
            _err(f"error: bad query: {exc}")
            return EXIT_STORE
        fq.no_data = True
        fq_xml = serialize_fq(fq)
    try:
        document = client_query(args.host, args.port, args.token, fq_xml,
                                format=args.format)
    except AuthError as exc:
        _err(f"error: {exc}")
        return EXIT_AUTH
    except OSError as exc:
        _err(f"error: cannot reach {args.host}:{args.port}: {exc}")
        return EXIT_ASSOCIATION
    except NodeError as exc:
        _err(f"error: {exc}")
        return EXIT_STORE
    try:
        root_tag = ET.fromstring(document).tag
    except ET.ParseError:
        root_tag = ""
    if root_tag == "Error":
        _err(document.decode("utf-8", "replace"))
        return EXIT_STORE
    sys.stdout.buffer.write(document)
    sys.stdout.buffer.write(b"\n")
    return EXIT_OK


def cmd_get(args) -> int:
    try:
        data = client_get(args.host, args.port, args.token, args.lfn)
    except AuthError as exc:
        _err(f"error: {exc}")
        return EXIT_AUTH
    except NotFound as exc:
        _err(f"error: {exc}")
        return EXIT_STORE
    except OSError as exc:
        _err(f"error: cannot reach {args.host}:{args.port}: {exc}")
        return EXIT_ASSOCIATION
    except NodeError as exc:
        _err(f"error: {exc}")
        return EXIT_STORE
    try:
        with open(args.out, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        _err(f"error: cannot write {args.out}: {exc}")
        return EXIT_CONFIG
    return EXIT_OK


def cmd_gen_corpus(args) -> int:
    if args.n < 1:
        _err("error: --n must be at least 1")
        return EXIT_CONFIG
    generate_corpus(args.n, args.seed, args.out)
    print(args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mgrid", description="federated mammogram metadata node")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the node daemon")
    p.add_argument("--config", help="config file (or set MG_CONFIG)")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("store", help="send DICOM files to a node (SCU)")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, required=True)
    p.add_argument("files", nargs="+")
    p.set_defaults(func=cmd_store)

    p = sub.add_parser("add", help="pseudonymize and file a staged image")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, required=True)
    p.add_argument("--sop-uid", required=True)
    p.add_argument("--token", required=True)
    p.set_defaults(func=cmd_add)

    p = sub.add_parser("query", help="run a formal query")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, required=True)
    p.add_argument("--file", required=True, help="formal query XML file")
    p.add_argument("--format", default="fq-xml",
                   choices=["fq-xml", "rowset-xml"])
    p.add_argument("--no-data", action="store_true",
                   help="return LFNs without metadata rows")
    p.add_argument("--token", required=True)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("get", help="fetch a file by logical file name")
    p.add_argument("lfn")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--token", required=True)
    p.set_defaults(func=cmd_get)

    p = sub.add_parser("gen-corpus", help="generate a synthetic test corpus")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_corpus)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
