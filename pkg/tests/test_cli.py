import filecmp
import os
import socket

import pytest

from mgrid.cli import main
from mgrid.corpus import load_manifest
from mgrid.dicomio import parse_file
from mgrid.federation import parse_wrapped
from mgrid.fq import Constraint, FormalQuery, serialize_fq
from mgrid.node import render_config, serve
from test_node import TOKEN, free_ports, make_config


@pytest.fixture
def node(tmp_path):
    with serve(make_config(tmp_path)) as n:
        yield n


@pytest.fixture
def corpus(tmp_path):
    out = tmp_path / "corpus"
    assert main(["gen-corpus", "--n", "5", "--seed", "7",
                 "--out", str(out)]) == 0
    return out


def query_file(tmp_path, fq=None):
    fq = fq or FormalQuery([Constraint("Series.Modality", "MG")])
    path = tmp_path / "query.xml"
    path.write_bytes(serialize_fq(fq))
    return str(path)


class TestGenCorpus:
    def test_deterministic(self, tmp_path, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["gen-corpus", "--n", "10", "--seed", "3",
                     "--out", str(a)]) == 0
        assert main(["gen-corpus", "--n", "10", "--seed", "3",
                     "--out", str(b)]) == 0
        match, mismatch, errors = filecmp.cmpfiles(
            a, b, os.listdir(a), shallow=False)
        assert not mismatch and not errors
        assert capsys.readouterr().out.splitlines() == [str(a), str(b)]

    def test_single_file(self, tmp_path):
        out = tmp_path / "one"
        assert main(["gen-corpus", "--n", "1", "--seed", "9",
                     "--out", str(out)]) == 0
        records = load_manifest(str(out / "manifest.xml"))
        assert len(records) == 1
        files = [f for f in os.listdir(out) if f.endswith(".dcm")]
        assert len(files) == 1
        parse_file((out / files[0]).read_bytes())

    def test_zero_rejected(self, tmp_path):
        assert main(["gen-corpus", "--n", "0",
                     "--out", str(tmp_path / "x")]) == 2


class TestServeErrors:
    def test_missing_config(self):
        assert main(["serve", "--config", "/does/not/exist"]) == 2

    def test_bad_port(self, tmp_path, monkeypatch):
        monkeypatch.delenv("MG_CONFIG", raising=False)
        config = make_config(tmp_path)
        config.api_port = 70000
        path = tmp_path / "bad.conf"
        path.write_text(render_config(config))
        assert main(["serve", "--config", str(path)]) == 2


class TestStore:
    def test_store_prints_sop_uids(self, node, corpus, capsys):
        files = sorted(str(corpus / f) for f in os.listdir(corpus)
                       if f.endswith(".dcm"))[:3]
        code = main(["store", "--port", str(node.config.dicom_port)] + files)
        assert code == 0
        printed = capsys.readouterr().out.splitlines()
        assert sorted(printed) == sorted(
            r["sop_uid"] for r in load_manifest(str(corpus / "manifest.xml"))
            if any(r["sop_uid"] in f for f in files))
        assert set(printed) <= set(node.staged_uids())

    def test_server_down(self, corpus, tmp_path):
        port = free_ports(1)[0]
        files = [str(corpus / f) for f in os.listdir(corpus)
                 if f.endswith(".dcm")][:1]
        assert main(["store", "--port", str(port)] + files) == 3

    def test_non_dicom_input(self, node, tmp_path, capsys):
        bad = tmp_path / "not_dicom.bin"
        bad.write_bytes(b"junk")
        code = main(["store", "--port", str(node.config.dicom_port),
                     str(bad)])
        assert code == 4
        assert "not_dicom.bin" in capsys.readouterr().err


class TestPipeline:
    def add_all(self, node, capsys):
        lfns = []
        for sop_uid in node.staged_uids():
            assert main(["add", "--port", str(node.config.api_port),
                         "--sop-uid", sop_uid, "--token", TOKEN]) == 0
            lfns.append(capsys.readouterr().out.splitlines()[0])
        return lfns

    def test_store_add_query_get(self, node, corpus, tmp_path, capsys):
        files = sorted(str(corpus / f) for f in os.listdir(corpus)
                       if f.endswith(".dcm"))
        assert main(["store", "--port",
                     str(node.config.dicom_port)] + files) == 0
        capsys.readouterr()
        lfns = self.add_all(node, capsys)
        assert main(["query", "--port", str(node.config.api_port),
                     "--file", query_file(tmp_path), "--token", TOKEN]) == 0
        _, rows = parse_wrapped(capsys.readouterr().out.encode())
        assert sorted(lfn for lfn, _ in rows) == sorted(lfns)
        out = tmp_path / "fetched.dcm"
        assert main(["get", lfns[0], "--port", str(node.config.api_port),
                     "--out", str(out), "--token", TOKEN]) == 0
        assert out.read_bytes() == node.catalogue.get_file(lfns[0])

    def test_query_no_data(self, node, corpus, tmp_path, capsys):
        files = [str(corpus / f) for f in os.listdir(corpus)
                 if f.endswith(".dcm")][:2]
        assert main(["store", "--port",
                     str(node.config.dicom_port)] + files) == 0
        capsys.readouterr()
        self.add_all(node, capsys)
        assert main(["query", "--port", str(node.config.api_port),
                     "--file", query_file(tmp_path), "--no-data",
                     "--token", TOKEN]) == 0
        _, rows = parse_wrapped(capsys.readouterr().out.encode())
        assert rows and all(meta is None for _, meta in rows)

    def test_malformed_query_file(self, node, tmp_path, capsys):
        path = tmp_path / "bad.xml"
        path.write_bytes(b"<Query><Bogus/></Query>")
        assert main(["query", "--port", str(node.config.api_port),
                     "--file", str(path), "--token", TOKEN]) == 4
        captured = capsys.readouterr()
        assert captured.out == ""
        assert "Error" in captured.err

    def test_wrong_token_everywhere(self, node, corpus, tmp_path):
        assert main(["add", "--port", str(node.config.api_port),
                     "--sop-uid", "1.2.3", "--token", "wrong"]) == 5
        assert main(["query", "--port", str(node.config.api_port),
                     "--file", query_file(tmp_path),
                     "--token", "wrong"]) == 5
        assert main(["get", "/mg/a/x/1/y.dcm",
                     "--port", str(node.config.api_port),
                     "--out", str(tmp_path / "o"), "--token", "wrong"]) == 5

    def test_add_unstaged(self, node):
        assert main(["add", "--port", str(node.config.api_port),
                     "--sop-uid", "1.2.3.4", "--token", TOKEN]) == 4

    def test_get_unknown_lfn(self, node, tmp_path):
        assert main(["get", "/mg/a/x/1/missing.dcm",
                     "--port", str(node.config.api_port),
                     "--out", str(tmp_path / "o"), "--token", TOKEN]) == 4
