"""STCK checkpoint files.

Layout (little-endian)::

    b"STCK" | version u8 | metadata length u32 | metadata JSON (sorted keys)
    then per tensor, in metadata order:
        name length u32 | name utf-8 | rank u32 | extents u32 * rank | payload

The metadata records the run config, the seed, and per-parameter owner tag,
frozen flag, reinit flag, init scheme and dtype. Encoding is deterministic so
save -> load -> save reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import LoadError
from .params import OWNERS, ParameterStore

MAGIC = b"STCK"
VERSION = 1
_DTYPES = {"float32": "<f4", "float64": "<f8"}


def checkpoint_bytes(store: ParameterStore, metadata: dict | None = None) -> bytes:
    meta = dict(metadata or {})
    meta["params"] = [
        {"name": n, "owner": p.owner, "frozen": p.frozen, "reinit": p.reinit, "init": p.init,
         "dtype": p.dtype.name}
        for n, p in store.items()
    ]
    header = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out = [MAGIC, struct.pack("<BI", VERSION, len(header)), header]
    for name, p in store.items():
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)) + raw)
        out.append(struct.pack(f"<I{p.ndim}I", p.ndim, *p.shape))
        out.append(np.ascontiguousarray(p.data, dtype=_DTYPES[p.dtype.name]).tobytes())
    return b"".join(out)


def save_checkpoint(store: ParameterStore, path, metadata: dict | None = None) -> None:
    Path(path).write_bytes(checkpoint_bytes(store, metadata))


class _Reader:
    def __init__(self, blob: bytes, source: str):
        self.blob, self.pos, self.source = blob, 0, source

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise LoadError(f"{self.source}: truncated checkpoint while reading {what}")
        chunk = self.blob[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def checkpoint_from_bytes(blob: bytes, source: str = "<bytes>") -> tuple[ParameterStore, dict]:
    r = _Reader(blob, source)
    magic = blob[:4]
    if magic != MAGIC:
        raise LoadError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    r.pos = 4
    version = r.take(1, "version")[0]
    if version != VERSION:
        raise LoadError(f"{source}: unsupported checkpoint version {version}, expected {VERSION}")
    try:
        meta = json.loads(r.take(r.u32("metadata length"), "metadata").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise LoadError(f"{source}: corrupt metadata ({exc})") from None
    entries = meta.pop("params", None)
    if not isinstance(entries, list):
        raise LoadError(f"{source}: metadata lacks the parameter table")
    names = [e.get("name") for e in entries]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise LoadError(f"{source}: duplicate parameter names {dupes}")
    store = ParameterStore()
    for entry in entries:
        name = r.take(r.u32("name length"), "name").decode("utf-8")
        if name != entry["name"]:
            raise LoadError(f"{source}: tensor record {name!r} out of order (expected {entry['name']!r})")
        if entry["owner"] not in OWNERS or entry["dtype"] not in _DTYPES:
            raise LoadError(f"{source}: bad owner or dtype for {name!r}")
        rank = r.u32(f"rank of {name}")
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank, f"shape of {name}"))
        dtype = np.dtype(_DTYPES[entry["dtype"]])
        count = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(r.take(count * dtype.itemsize, f"payload of {name}"), dtype=dtype)
        p = store.add(name, data.reshape(shape).astype(entry["dtype"]), entry["owner"],
                      init=entry.get("init", "zeros"), reinit=bool(entry.get("reinit", False)))
        p.frozen = bool(entry["frozen"])
    if r.pos != len(blob):
        raise LoadError(f"{source}: {len(blob) - r.pos} trailing bytes after the last tensor")
    return store, meta


def load_checkpoint(path) -> tuple[ParameterStore, dict]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise LoadError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    return checkpoint_from_bytes(blob, str(path))


def copy_into(target: ParameterStore, source: ParameterStore, origin: str = "checkpoint") -> None:
    """Copy every tensor of ``source`` into ``target``; names and shapes must agree exactly."""
    missing = sorted(set(target) - set(source))
    extra = sorted(set(source) - set(target))
    wrong = sorted(n for n in set(target) & set(source) if target[n].shape != source[n].shape)
    if missing or extra or wrong:
        parts = []
        if missing:
            parts.append(f"missing from {origin}: {missing}")
        if extra:
            parts.append(f"unknown to the model: {extra}")
        if wrong:
            parts.append("shape mismatch: " + ", ".join(
                f"{n} {source[n].shape} vs model {target[n].shape}" for n in wrong))
        raise LoadError(f"{origin} does not fit the model; " + "; ".join(parts))
    for name, p in source.items():
        dst = target[name]
        dst.data = p.data.astype(dst.dtype, copy=True)
        dst.frozen = p.frozen
        dst.owner = p.owner
        dst.reinit = p.reinit


def save_model(model, path, extra: dict | None = None) -> None:
    meta = {"format": "stprompt", "config": model.cfg.to_dict(), "seed": model.cfg.seed}
    if extra:
        meta["extra"] = extra
    save_checkpoint(model.store, path, meta)


def load_model(path, cfg: RunConfig | None = None):
    """Rebuild a :class:`~stprompt.training.Model` from a checkpoint.

    With ``cfg`` the architecture comes from ``cfg`` and must match the stored
    tensors; otherwise the stored config is used.
    """
    from .training import build_model

    store, meta = load_checkpoint(path)
    if cfg is None:
        if "config" not in meta:
            raise LoadError(f"{path}: checkpoint carries no run config")
        cfg = RunConfig.from_dict(meta["config"])
    model = build_model(cfg)
    copy_into(model.store, store, str(path))
    return model, meta
