import random
import socket
import xml.etree.ElementTree as ET

import pytest

from mgrid import wire
from mgrid.anonymize import pseudonym_for
from mgrid.catalogue import NotFound
from mgrid.corpus import dataset_for_record, generate_records
from mgrid.dicomio import parse_file
from mgrid.federation import parse_wrapped
from mgrid.fq import Constraint, FormalQuery, serialize_fq
from mgrid.node import (
    AuthError,
    BindError,
    ConfigError,
    Node,
    NodeConfig,
    NotStaged,
    PeerRef,
    client_add,
    client_get,
    client_query,
    load_config,
    parse_config,
    render_config,
    serve,
)
from mgrid.upperlayer import StoreScu

KEY = b"\x42" * 32
TOKEN = "sesame"


def free_ports(n):
    socks = [socket.create_server(("127.0.0.1", 0)) for _ in range(n)]
    ports = [s.getsockname()[1] for s in socks]
    for s in socks:
        s.close()
    return ports


def make_config(tmp_path, site_id="a", peers=(), **overrides):
    dicom, api, peer = free_ports(3)
    values = dict(site_id=site_id, data_dir=str(tmp_path / site_id),
                  dicom_port=dicom, api_port=api, peer_port=peer,
                  shared_token=TOKEN, pseudonym_key=KEY, peers=list(peers))
    values.update(overrides)
    return NodeConfig(**values)


@pytest.fixture
def node(tmp_path):
    with serve(make_config(tmp_path)) as n:
        yield n


def store_one(node, seed=80):
    record = generate_records(1, seed=seed)[0]
    ds = dataset_for_record(record, random.Random(seed))
    with StoreScu("127.0.0.1", node.config.dicom_port) as scu:
        sop_uid, status = scu.store(ds)
    assert status == 0
    return record, ds, sop_uid


def query_lfns(node, fq):
    doc = client_query("127.0.0.1", node.config.api_port, TOKEN,
                       serialize_fq(fq))
    _, rows = parse_wrapped(doc)
    return [lfn for lfn, _ in rows]


ALL_IMAGES = FormalQuery([Constraint("Series.Modality", "MG")])


class TestConfig:
    def test_round_trip(self, tmp_path):
        config = make_config(tmp_path, peers=[PeerRef("b", "127.0.0.1", 9102)])
        assert parse_config(render_config(config)) == config

    def test_missing_key(self):
        with pytest.raises(ConfigError, match="site_id"):
            parse_config("data_dir = /tmp/x\n")

    def test_duplicate_ports(self, tmp_path):
        with pytest.raises(ConfigError, match="distinct"):
            make_config(tmp_path, api_port=1234, peer_port=1234).validate()

    def test_bad_peer_spec(self):
        with pytest.raises(ConfigError, match="peer"):
            parse_config("peers = nonsense\nsite_id = a\n")

    def test_env_override(self, tmp_path, monkeypatch):
        config = make_config(tmp_path)
        path = tmp_path / "node.conf"
        path.write_text(render_config(config))
        monkeypatch.setenv("MG_CONFIG", str(path))
        assert load_config("/does/not/exist") == config

    def test_missing_file(self):
        with pytest.raises(ConfigError):
            load_config("/does/not/exist")


class TestLifecycle:
    def test_start_stop_idempotent(self, tmp_path):
        n = serve(make_config(tmp_path))
        n.stop()
        n.stop()

    def test_port_collision_names_port(self, tmp_path, node):
        config = make_config(tmp_path, site_id="clash",
                             dicom_port=node.config.dicom_port)
        with pytest.raises(BindError, match=str(node.config.dicom_port)):
            Node(config).start()

    def test_restart_recovers_state(self, tmp_path):
        config = make_config(tmp_path)
        with serve(config) as n:
            _, _, sop_uid = store_one(n)
            lfn, _ = client_add("127.0.0.1", config.api_port, TOKEN, sop_uid)
        with serve(config) as n:
            assert query_lfns(n, ALL_IMAGES) == [lfn]
            assert n.catalogue.all_lfns() == [lfn]


class TestAcquisition:
    def test_store_then_add_workflow(self, node):
        record, _, sop_uid = store_one(node)
        # staged but not added: invisible everywhere
        assert sop_uid in node.staged_uids()
        assert query_lfns(node, ALL_IMAGES) == []
        assert node.catalogue.all_lfns() == []
        lfn, pseudonym = client_add("127.0.0.1", node.config.api_port,
                                    TOKEN, sop_uid)
        assert pseudonym == pseudonym_for(KEY, record["patient_id"])
        assert lfn == (f"/mg/a/{pseudonym}/{record['study_uid']}"
                       f"/{sop_uid}.dcm")
        assert query_lfns(node, ALL_IMAGES) == [lfn]

    def test_fetched_bytes_are_pseudonymized(self, node):
        record, _, sop_uid = store_one(node, seed=81)
        lfn, pseudonym = client_add("127.0.0.1", node.config.api_port,
                                    TOKEN, sop_uid)
        data = client_get("127.0.0.1", node.config.api_port, TOKEN, lfn)
        assert record["patient_id"].encode() not in data
        ds = parse_file(data)
        assert ds.first(0x0010, 0x0020).strip() == pseudonym

    def test_add_with_wrong_token_leaves_staging(self, node):
        _, _, sop_uid = store_one(node, seed=82)
        with pytest.raises(AuthError):
            client_add("127.0.0.1", node.config.api_port, "wrong", sop_uid)
        assert sop_uid in node.staged_uids()
        client_add("127.0.0.1", node.config.api_port, TOKEN, sop_uid)

    def test_add_twice_is_not_staged(self, node):
        _, _, sop_uid = store_one(node, seed=83)
        client_add("127.0.0.1", node.config.api_port, TOKEN, sop_uid)
        with pytest.raises(NotStaged):
            client_add("127.0.0.1", node.config.api_port, TOKEN, sop_uid)

    def test_audit_artifact_written(self, node):
        _, _, sop_uid = store_one(node, seed=84)
        lfn, _ = client_add("127.0.0.1", node.config.api_port, TOKEN, sop_uid)
        entry = node.catalogue.entry(lfn)
        with open(entry.physical_path + ".xml", "rb") as fh:
            root = ET.fromstring(fh.read())
        assert root.tag == "dicom"

    def test_staging_ttl_eviction(self, tmp_path):
        with serve(make_config(tmp_path, site_id="ttl",
                               staging_ttl=0.0)) as n:
            _, _, sop_uid = store_one(n, seed=85)
            with pytest.raises(NotStaged):
                client_add("127.0.0.1", n.config.api_port, TOKEN, sop_uid)


class TestQueryApi:
    def test_empty_federation_document(self, node):
        doc = client_query("127.0.0.1", node.config.api_port, TOKEN,
                           serialize_fq(ALL_IMAGES))
        complete, rows = parse_wrapped(doc)
        assert complete and rows == []

    def test_wrong_token(self, node):
        with pytest.raises(AuthError):
            client_query("127.0.0.1", node.config.api_port, "wrong",
                         serialize_fq(ALL_IMAGES))

    def test_malformed_fq_keeps_connection_usable(self, node):
        sock = socket.create_connection(("127.0.0.1", node.config.api_port),
                                        timeout=5)
        rid = bytes(16)
        bad = (b'<QueryRequest token="sesame" format="fq-xml">'
               b"<Query><Bogus/></Query></QueryRequest>")
        wire.write_frame(sock, wire.MSG_QUERY_REQUEST, rid, bad)
        msg_type, _, payload = wire.read_frame(sock)
        assert msg_type == wire.MSG_QUERY_RESPONSE
        root = ET.fromstring(payload)
        assert root.tag == "Error" and root.get("code") == "XmlError"
        good = (b'<QueryRequest token="sesame" format="fq-xml">'
                + serialize_fq(ALL_IMAGES).split(b"?>")[-1]
                + b"</QueryRequest>")
        wire.write_frame(sock, wire.MSG_QUERY_REQUEST, rid, good)
        msg_type, _, payload = wire.read_frame(sock)
        assert msg_type == wire.MSG_QUERY_RESPONSE
        assert ET.fromstring(payload).tag == "QueryResult"
        sock.close()

    def test_rowset_format(self, node):
        _, _, sop_uid = store_one(node, seed=86)
        lfn, _ = client_add("127.0.0.1", node.config.api_port, TOKEN, sop_uid)
        doc = client_query("127.0.0.1", node.config.api_port, TOKEN,
                           serialize_fq(ALL_IMAGES), format="rowset-xml")
        complete, rows = parse_wrapped(doc)
        assert complete and rows[0][0] == lfn


def two_nodes(tmp_path):
    config_a = make_config(tmp_path, site_id="a")
    config_b = make_config(tmp_path, site_id="b")
    config_a.peers = [PeerRef("b", "127.0.0.1", config_b.peer_port)]
    config_b.peers = [PeerRef("a", "127.0.0.1", config_a.peer_port)]
    return serve(config_a), serve(config_b)


class TestFederationOverTcp:
    def test_query_reaches_peer_data(self, tmp_path):
        a, b = two_nodes(tmp_path)
        try:
            _, _, sop_uid = store_one(b, seed=87)
            lfn, _ = client_add("127.0.0.1", b.config.api_port, TOKEN, sop_uid)
            assert query_lfns(a, ALL_IMAGES) == [lfn]
        finally:
            a.stop()
            b.stop()

    def test_get_routes_to_owner(self, tmp_path):
        a, b = two_nodes(tmp_path)
        try:
            _, _, sop_uid = store_one(b, seed=88)
            lfn, _ = client_add("127.0.0.1", b.config.api_port, TOKEN, sop_uid)
            via_a = client_get("127.0.0.1", a.config.api_port, TOKEN, lfn)
            direct = client_get("127.0.0.1", b.config.api_port, TOKEN, lfn)
            assert via_a == direct
        finally:
            a.stop()
            b.stop()

    def test_unknown_lfn_anywhere(self, tmp_path):
        a, b = two_nodes(tmp_path)
        try:
            with pytest.raises(NotFound):
                client_get("127.0.0.1", a.config.api_port, TOKEN,
                           "/mg/b/x/1/missing.dcm")
        finally:
            a.stop()
            b.stop()

    def test_peer_endpoint_rejects_bad_token(self, node):
        sock = socket.create_connection(("127.0.0.1", node.config.peer_port),
                                        timeout=5)
        payload = (b'<PeerEnvelope token="wrong"><FederatedQuery ttl="1">'
                   b"</FederatedQuery></PeerEnvelope>")
        wire.write_frame(sock, wire.MSG_FEDERATED_QUERY, bytes(16), payload)
        msg_type, _, data = wire.read_frame(sock)
        assert msg_type == wire.MSG_ERROR
        assert ET.fromstring(data).get("code") == "AuthError"
        sock.close()
