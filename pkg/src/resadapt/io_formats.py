"""Bit-exact persistence: embedding banks, label files, residual tables,
disentangled-residual containers, and the JSON dataset manifest.

Bank layout (EMB1): magic "EMB1", u32 version=1, u32 rows, u32 dim, then
rows*dim float32 values, row-major.  All integers and floats are
little-endian regardless of platform.  Label layout (LBL1): magic "LBL1",
u32 version=1, u32 count, then count u32 labels.  Residual files reuse the
EMB1 payload.  A disentangled residual is a directory holding shared.emb,
one specific_<domain>.emb per domain, and an index.json tying domain
names to files.

These layouts are the external contract: exporters only have to emit
these bytes to interoperate.
"""

import json
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .classifier import ClassAnchorSet, render_prompt
from .core import as_matrix
from .dg import DisentangledResidual
from .errors import (
    BadMagic,
    ManifestInvalid,
    MissingDomainTable,
    NonFinitePayload,
    SizeMismatch,
    TruncatedFile,
    UnsupportedVersion,
)
from .selftrain import TaskResidual

BANK_MAGIC = b"EMB1"
LABEL_MAGIC = b"LBL1"
FORMAT_VERSION = 1

_BANK_HEADER = struct.Struct("<4sIII")
_LABEL_HEADER = struct.Struct("<4sII")


def write_bank(matrix, path) -> None:
    """Write a float32 matrix as an EMB1 file."""
    m = as_matrix(matrix)
    rows, dim = m.shape
    payload = np.ascontiguousarray(m, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(_BANK_HEADER.pack(BANK_MAGIC, FORMAT_VERSION, rows, dim))
        fh.write(payload)


def read_bank(path) -> np.ndarray:
    """Read an EMB1 file back into a (rows, dim) float32 matrix."""
    data = Path(path).read_bytes()
    if len(data) < _BANK_HEADER.size:
        raise TruncatedFile(f"{path}: {len(data)} bytes is shorter than the header")
    magic, version, rows, dim = _BANK_HEADER.unpack_from(data)
    if magic != BANK_MAGIC:
        raise BadMagic(f"{path}: magic {magic!r}, expected {BANK_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"{path}: version {version}, expected {FORMAT_VERSION}")
    if dim < 1:
        raise SizeMismatch(f"{path}: dim must be >= 1, header says {dim}")
    expected = rows * dim * 4
    actual = len(data) - _BANK_HEADER.size
    if actual < expected:
        raise TruncatedFile(f"{path}: payload {actual} bytes, header promises {expected}")
    if actual > expected:
        raise SizeMismatch(f"{path}: payload {actual} bytes, header promises {expected}")
    arr = np.frombuffer(data, dtype="<f4", offset=_BANK_HEADER.size)
    arr = arr.reshape(rows, dim).astype(np.float32, copy=True)
    if not np.all(np.isfinite(arr)):
        raise NonFinitePayload(f"{path}: payload contains non-finite values")
    return arr


def write_labels(labels, path) -> None:
    """Write class indices as an LBL1 file (u32 little-endian each)."""
    arr = np.asarray(labels, dtype=np.int64)
    if arr.ndim != 1:
        raise SizeMismatch(f"labels must be 1-d, got shape {arr.shape}")
    if arr.size and (arr.min() < 0 or arr.max() >= 2 ** 32):
        raise SizeMismatch("labels must fit in an unsigned 32-bit integer")
    with open(path, "wb") as fh:
        fh.write(_LABEL_HEADER.pack(LABEL_MAGIC, FORMAT_VERSION, arr.size))
        fh.write(arr.astype("<u4").tobytes())


def read_labels(path) -> np.ndarray:
    """Read an LBL1 file into an (n,) int64 array."""
    data = Path(path).read_bytes()
    if len(data) < _LABEL_HEADER.size:
        raise TruncatedFile(f"{path}: {len(data)} bytes is shorter than the header")
    magic, version, count = _LABEL_HEADER.unpack_from(data)
    if magic != LABEL_MAGIC:
        raise BadMagic(f"{path}: magic {magic!r}, expected {LABEL_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"{path}: version {version}, expected {FORMAT_VERSION}")
    expected = count * 4
    actual = len(data) - _LABEL_HEADER.size
    if actual < expected:
        raise TruncatedFile(f"{path}: payload {actual} bytes, header promises {expected}")
    if actual > expected:
        raise SizeMismatch(f"{path}: payload {actual} bytes, header promises {expected}")
    arr = np.frombuffer(data, dtype="<u4", offset=_LABEL_HEADER.size)
    return arr.astype(np.int64)


def write_residual(residual: TaskResidual, path) -> None:
    write_bank(residual.values, path)


def read_residual(path) -> TaskResidual:
    return TaskResidual(read_bank(path))


_SLUG_RE = re.compile(r"[^A-Za-z0-9_-]+")


def _slug(name: str, taken: set) -> str:
    s = _SLUG_RE.sub("_", name) or "domain"
    base, i = s, 1
    while s in taken:
        s = f"{base}_{i}"
        i += 1
    taken.add(s)
    return s


DG_INDEX_NAME = "index.json"
DG_SHARED_NAME = "shared.emb"


def write_dg_residual(res: DisentangledResidual, dirpath) -> None:
    """Persist a disentangled residual as a directory container."""
    root = Path(dirpath)
    root.mkdir(parents=True, exist_ok=True)
    write_bank(res.shared, root / DG_SHARED_NAME)
    taken = set()
    entries = []
    for name, table in zip(res.domain_names, res.specific):
        fname = f"specific_{_slug(name, taken)}.emb"
        write_bank(table, root / fname)
        entries.append({"name": name, "file": fname})
    index = {"shared": DG_SHARED_NAME, "domains": entries}
    (root / DG_INDEX_NAME).write_text(
        json.dumps(index, sort_keys=True, indent=2) + "\n")


def _read_dg_index(dirpath):
    root = Path(dirpath)
    index_path = root / DG_INDEX_NAME
    if not index_path.is_file():
        raise ManifestInvalid(f"{dirpath}: no {DG_INDEX_NAME} in residual container")
    try:
        index = json.loads(index_path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestInvalid(f"{index_path}: not valid JSON: {exc}") from exc
    if "shared" not in index or "domains" not in index:
        raise ManifestInvalid(f"{index_path}: index needs 'shared' and 'domains'")
    return root, index


def read_dg_shared(dirpath) -> TaskResidual:
    """Load just the shared table; specific files may be absent or deleted."""
    root, index = _read_dg_index(dirpath)
    return TaskResidual(read_bank(root / index["shared"]))


def read_dg_residual(dirpath) -> DisentangledResidual:
    """Load the full container; a listed-but-missing table is an error."""
    root, index = _read_dg_index(dirpath)
    shared = read_bank(root / index["shared"])
    names, tables = [], []
    for entry in index["domains"]:
        table_path = root / entry["file"]
        if not table_path.is_file():
            raise MissingDomainTable(
                f"{dirpath}: domain {entry['name']!r} listed but {entry['file']} missing")
        names.append(entry["name"])
        tables.append(read_bank(table_path))
    return DisentangledResidual(shared, tables, names)


@dataclass
class SplitEntry:
    name: str
    bank_path: Path
    labels_path: Path | None
    domain_name: str


@dataclass
class Manifest:
    """Parsed dataset manifest with paths resolved against its directory."""

    class_names: list
    prompt_template: str
    domain_description: str | None
    anchor_paths: dict
    splits: list
    base_dir: Path

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def split(self, name: str) -> SplitEntry:
        for s in self.splits:
            if s.name == name:
                return s
        known = ", ".join(s.name for s in self.splits)
        raise ManifestInvalid(f"no split named {name!r} (have: {known})")

    def anchor_set(self, domain_prior: bool = False) -> ClassAnchorSet:
        key = "domain_prior" if domain_prior else "plain"
        if key not in self.anchor_paths:
            raise ManifestInvalid(
                f"manifest has no {key!r} anchor bank under 'anchors'")
        desc = None
        if domain_prior:
            if not self.domain_description:
                raise ManifestInvalid(
                    "domain-prior anchors need 'domain_description' in the manifest")
            desc = self.domain_description
        bank = read_bank(self.anchor_paths[key])
        if bank.shape[0] != self.num_classes:
            raise ManifestInvalid(
                f"anchor bank {self.anchor_paths[key]} has {bank.shape[0]} rows "
                f"for {self.num_classes} classes")
        return ClassAnchorSet.from_prompts(
            self.class_names, bank, self.prompt_template, desc)

    def load_split(self, name: str):
        """Load one split's bank and labels (labels may be None)."""
        entry = self.split(name)
        bank = read_bank(entry.bank_path)
        labels = None
        if entry.labels_path is not None:
            labels = read_labels(entry.labels_path)
            if labels.shape[0] != bank.shape[0]:
                raise ManifestInvalid(
                    f"split {name!r}: {labels.shape[0]} labels for {bank.shape[0]} rows")
            if labels.size and labels.max() >= self.num_classes:
                raise ManifestInvalid(
                    f"split {name!r}: label {int(labels.max())} outside "
                    f"[0, {self.num_classes})")
        return bank, labels, entry


def load_manifest(path) -> Manifest:
    """Parse and validate a manifest; referenced paths must resolve now."""
    p = Path(path)
    if not p.is_file():
        raise ManifestInvalid(f"manifest not found: {path}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestInvalid(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ManifestInvalid(f"{path}: manifest must be a JSON object")

    class_names = doc.get("class_names")
    if not isinstance(class_names, list) or not class_names:
        raise ManifestInvalid(f"{path}: 'class_names' must be a non-empty list")
    if len(set(class_names)) != len(class_names):
        raise ManifestInvalid(f"{path}: class names must be unique")

    template = doc.get("prompt_template")
    if not isinstance(template, str):
        raise ManifestInvalid(f"{path}: 'prompt_template' must be a string")
    domain_description = doc.get("domain_description")
    try:
        render_prompt(template, str(class_names[0]), domain_description)
    except Exception as exc:
        raise ManifestInvalid(f"{path}: bad prompt template: {exc}") from exc

    base = p.parent
    anchors = doc.get("anchors")
    if not isinstance(anchors, dict) or "plain" not in anchors:
        raise ManifestInvalid(f"{path}: 'anchors' must map at least 'plain' to a file")
    anchor_paths = {}
    for key, rel in anchors.items():
        ap = base / rel
        if not ap.is_file():
            raise ManifestInvalid(f"{path}: anchor bank {key!r} not found at {ap}")
        anchor_paths[key] = ap

    raw_splits = doc.get("splits")
    if not isinstance(raw_splits, list) or not raw_splits:
        raise ManifestInvalid(f"{path}: 'splits' must be a non-empty list")
    splits = []
    seen = set()
    for raw in raw_splits:
        try:
            name = raw["name"]
            bank_rel = raw["bank_path"]
            domain_name = raw["domain_name"]
        except (TypeError, KeyError) as exc:
            raise ManifestInvalid(
                f"{path}: each split needs name, bank_path, domain_name") from exc
        if name in seen:
            raise ManifestInvalid(f"{path}: duplicate split name {name!r}")
        seen.add(name)
        bank_path = base / bank_rel
        if not bank_path.is_file():
            raise ManifestInvalid(f"{path}: split {name!r} bank not found at {bank_path}")
        labels_path = None
        if raw.get("labels_path"):
            labels_path = base / raw["labels_path"]
            if not labels_path.is_file():
                raise ManifestInvalid(
                    f"{path}: split {name!r} labels not found at {labels_path}")
        splits.append(SplitEntry(str(name), bank_path, labels_path, str(domain_name)))

    return Manifest([str(c) for c in class_names], template,
                    domain_description if domain_description is None else str(domain_description),
                    anchor_paths, splits, base)


def write_manifest(doc: dict, path) -> None:
    """Serialize a manifest document deterministically (sorted keys)."""
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
