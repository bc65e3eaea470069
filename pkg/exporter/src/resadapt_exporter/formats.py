"""Writers for the resadapt on-disk contract.

Bank: "EMB1", u32 version=1, u32 rows, u32 dim, rows*dim float32, all
little-endian.  Labels: "LBL1", u32 version=1, u32 count, count u32.
Manifest: JSON with sorted keys.  These layouts are normative on the
primary side; the exporter only has to emit the same bytes.
"""

import json
import struct
from pathlib import Path

import numpy as np

_BANK_HEADER = struct.Struct("<4sIII")
_LABEL_HEADER = struct.Struct("<4sII")


def write_bank(matrix, path) -> None:
    m = np.ascontiguousarray(matrix, dtype=np.float32)
    if m.ndim != 2:
        raise ValueError(f"bank must be 2-d, got shape {m.shape}")
    with open(path, "wb") as fh:
        fh.write(_BANK_HEADER.pack(b"EMB1", 1, m.shape[0], m.shape[1]))
        fh.write(m.astype("<f4").tobytes())


def write_labels(labels, path) -> None:
    arr = np.asarray(labels, dtype=np.int64)
    with open(path, "wb") as fh:
        fh.write(_LABEL_HEADER.pack(b"LBL1", 1, arr.size))
        fh.write(arr.astype("<u4").tobytes())


def write_manifest(doc: dict, path) -> None:
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text())
