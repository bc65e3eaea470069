"""The emitted bytes must match the primary's normative layouts."""

import struct

import numpy as np

from resadapt_exporter.formats import write_bank, write_labels, write_manifest


def test_bank_header_and_size(tmp_path):
    path = tmp_path / "b.emb"
    write_bank(np.zeros((2, 3), np.float32), path)
    data = path.read_bytes()
    assert len(data) == 16 + 24
    magic, version, rows, dim = struct.unpack_from("<4sIII", data)
    assert (magic, version, rows, dim) == (b"EMB1", 1, 2, 3)


def test_bank_payload_little_endian(tmp_path):
    path = tmp_path / "b.emb"
    write_bank(np.array([[1.0]], np.float32), path)
    assert path.read_bytes()[16:] == struct.pack("<f", 1.0)


def test_labels_layout(tmp_path):
    path = tmp_path / "l.lbl"
    write_labels([], path)
    assert path.stat().st_size == 12
    write_labels([0, 1, 2], path)
    data = path.read_bytes()
    magic, version, count = struct.unpack_from("<4sII", data)
    assert (magic, version, count) == (b"LBL1", 1, 3)
    assert data[12:].hex() == "000000000100000002000000"


def test_manifest_deterministic_bytes(tmp_path):
    doc = {"b": 1, "a": [3, 2], "nested": {"z": 0, "y": 1}}
    p1, p2 = tmp_path / "m1.json", tmp_path / "m2.json"
    write_manifest(doc, p1)
    write_manifest({"nested": {"y": 1, "z": 0}, "a": [3, 2], "b": 1}, p2)
    assert p1.read_bytes() == p2.read_bytes()
