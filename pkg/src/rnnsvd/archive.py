"""Single-file model archives with bit-exact round trips.

Layout: 4-byte magic, little-endian u32 format version, little-endian u64
header length, canonical JSON header (sorted keys, no whitespace), then
the tensor payload as concatenated little-endian float64 in row-major
order. Tensors are stored sorted by name; the header records name, shape
and element offset of each. Version mismatches are rejected, never
coerced.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .cells import DenseLayer, Embedding, MgruLayer, RnnLayer
from .network import SequenceModel

MAGIC = b"RSVA"
FORMAT_VERSION = 1


class ArchiveError(ValueError):
    pass


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def config_digest(obj) -> str:
    """Stable sha256 of any JSON-serializable configuration object."""
    return hashlib.sha256(_canonical_json(obj)).hexdigest()


def _arch_descriptor(model: SequenceModel) -> dict:
    cell = model.cell
    mgru = isinstance(cell, MgruLayer)
    return {
        "cell_kind": "mgru" if mgru else "rnn",
        "head": model.head,
        "hidden": cell.hidden,
        "input_dim": cell.input_dim,
        "output_dim": model.output.w.shape[0],
        "activation": cell.input_activation if mgru else cell.activation,
        "output_activation": model.output.activation,
        "vocab_size": None if model.embedding is None else model.embedding.table.shape[0],
    }


def save_model(path, model: SequenceModel, meta: Optional[dict] = None,
               vocab: Optional[list[str]] = None) -> None:
    tensors = dict(model.params())
    names = sorted(tensors)
    entries = []
    offset = 0
    payload = bytearray()
    for name in names:
        arr = np.ascontiguousarray(tensors[name], dtype=np.float64)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset,
                        "count": int(arr.size)})
        payload += arr.astype("<f8").tobytes()
        offset += arr.size
    header = {
        "arch": _arch_descriptor(model),
        "meta": meta or {},
        "vocab": vocab,
        "tensors": entries,
    }
    blob = _canonical_json(header)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(bytes(payload))


def load_model(path):
    """Returns (model, meta, vocab). Raises ArchiveError on bad files."""
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise ArchiveError(f"not a model archive: {path}")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != FORMAT_VERSION:
        raise ArchiveError(f"archive format version {version} not supported "
                           f"(expected {FORMAT_VERSION})")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    if len(raw) < 16 + hlen:
        raise ArchiveError(f"truncated archive header: {path}")
    header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    body = raw[16 + hlen:]
    tensors = {}
    for ent in header["tensors"]:
        start = ent["offset"] * 8
        stop = start + ent["count"] * 8
        if stop > len(body):
            raise ArchiveError(f"truncated tensor payload for {ent['name']!r}: {path}")
        arr = np.frombuffer(body[start:stop], dtype="<f8").astype(np.float64)
        tensors[ent["name"]] = arr.reshape(ent["shape"]).copy()
    arch = header["arch"]
    model = _build_model(arch, tensors)
    return model, header["meta"], header["vocab"]


def _build_model(arch: dict, tensors: dict) -> SequenceModel:
    try:
        if arch["cell_kind"] == "mgru":
            cell: RnnLayer | MgruLayer = MgruLayer(
                wf=tensors["wf"], wr=tensors["wr"], bias=tensors["b"],
                input_activation=arch["activation"])
        elif arch["cell_kind"] == "rnn":
            cell = RnnLayer(w=tensors["w"], wr=tensors["wr"], bias=tensors["b"],
                            activation=arch["activation"])
        else:
            raise ArchiveError(f"unknown cell kind {arch['cell_kind']!r}")
        output = DenseLayer(w=tensors["wo"], bias=tensors["bo"],
                            activation=arch["output_activation"])
        embedding = None
        if arch.get("vocab_size") is not None:
            embedding = Embedding(table=tensors["emb"])
        return SequenceModel(cell=cell, output=output, head=arch["head"],
                             embedding=embedding)
    except KeyError as e:
        raise ArchiveError(f"archive missing tensor or field: {e}") from e
