"""Weight archives and atomic artifact writes.

A weight archive is a pair of files sharing a stem: `<stem>.json` holds a
manifest (format version, model kind, a free-form meta dict, and one entry
per array with name, shape, dtype, byte offset and byte length) and
`<stem>.bin` holds the arrays back to back as little-endian float64. The
split keeps the metadata greppable while the blob stays compact, and the
round trip is bitwise exact.

Every write in this module goes through a temp file in the target
directory followed by os.replace, so an interrupted run never leaves a
half-written artifact behind.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError

FORMAT_VERSION = 1
_DTYPE = "<f8"


def atomic_write_bytes(path: Path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path: Path, obj) -> None:
    """Deterministic JSON: sorted keys, fixed indentation, trailing newline."""
    atomic_write_text(path, json.dumps(obj, sort_keys=True, indent=2) + "\n")


def read_json(path: Path):
    with open(path) as fh:
        return json.load(fh)


@dataclass
class WeightArchive:
    """Named float64 arrays plus the metadata needed to rebuild a model."""

    kind: str
    entries: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    def save(self, stem: Path) -> None:
        stem = Path(stem)
        manifest = {"format_version": FORMAT_VERSION, "kind": self.kind,
                    "meta": self.meta, "entries": []}
        chunks = []
        offset = 0
        for name, arr in self.entries.items():
            arr = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
            raw = arr.astype(_DTYPE, copy=False).tobytes()
            manifest["entries"].append({
                "name": name,
                "shape": list(arr.shape),
                "dtype": _DTYPE,
                "offset": offset,
                "nbytes": len(raw),
            })
            chunks.append(raw)
            offset += len(raw)
        stem.parent.mkdir(parents=True, exist_ok=True)
        atomic_write_bytes(stem.with_suffix(".bin"), b"".join(chunks))
        write_json(stem.with_suffix(".json"), manifest)

    @classmethod
    def load(cls, stem: Path) -> "WeightArchive":
        stem = Path(stem)
        manifest = read_json(stem.with_suffix(".json"))
        if manifest.get("format_version") != FORMAT_VERSION:
            raise ContractError(
                f"unsupported archive format {manifest.get('format_version')!r} "
                f"in {stem.with_suffix('.json')}")
        blob = stem.with_suffix(".bin").read_bytes()
        entries: dict[str, np.ndarray] = {}
        cursor = 0
        for e in manifest["entries"]:
            off, nb = int(e["offset"]), int(e["nbytes"])
            if e["dtype"] != _DTYPE:
                raise ContractError(f"entry {e['name']!r} has dtype {e['dtype']!r}, "
                                    f"expected {_DTYPE!r}")
            if off != cursor or off + nb > len(blob):
                raise ContractError(
                    f"entry {e['name']!r} at offset {off} overlaps or overruns "
                    f"the blob ({len(blob)} bytes)")
            shape = tuple(int(s) for s in e["shape"])
            if int(np.prod(shape)) * 8 != nb:
                raise ContractError(
                    f"entry {e['name']!r} shape {shape} disagrees with "
                    f"byte length {nb}")
            entries[e["name"]] = np.frombuffer(
                blob, dtype=_DTYPE, count=nb // 8, offset=off
            ).reshape(shape).copy()
            cursor = off + nb
        if cursor != len(blob):
            raise ContractError(
                f"blob has {len(blob) - cursor} trailing bytes not covered "
                f"by the manifest")
        return cls(manifest["kind"], entries, manifest.get("meta", {}))


def save_model(stem: Path, model, kind: str) -> None:
    """Archive anything exposing state_dict() and meta()."""
    WeightArchive(kind, dict(model.state_dict()), model.meta()).save(stem)


def load_classifier(stem: Path):
    from .classifier import Classifier
    from .rng import Rng

    arc = WeightArchive.load(stem)
    if arc.kind != "classifier":
        raise ContractError(f"archive {stem} holds {arc.kind!r}, expected classifier")
    clf = Classifier.from_meta(arc.meta, Rng(0, "load"))
    clf.load_state_dict(arc.entries)
    return clf


def load_pce(stem: Path, cfg=None):
    from .pce import Pce, PceConfig
    from .rng import Rng

    arc = WeightArchive.load(stem)
    if arc.kind != "pce":
        raise ContractError(f"archive {stem} holds {arc.kind!r}, expected pce")
    pce = Pce.from_meta(arc.meta, cfg if cfg is not None else PceConfig(), Rng(0, "load"))
    pce.load_state_dict(arc.entries)
    return pce


__all__ = [
    "FORMAT_VERSION",
    "WeightArchive",
    "atomic_write_bytes",
    "atomic_write_text",
    "write_json",
    "read_json",
    "save_model",
    "load_classifier",
    "load_pce",
]
