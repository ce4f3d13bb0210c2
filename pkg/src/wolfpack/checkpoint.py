"""Checkpoint container: a JSON manifest plus one blob of little-endian arrays.

File layout: 4-byte magic ``WLF1``, a little-endian uint32 manifest length,
the manifest JSON (UTF-8, canonical key order), then the parameter blob. The
manifest carries a sha256 of the blob and, per entry, the owning store, the
parameter name, dtype, shape and byte offset. Loading verifies the checksum
and every shape before any state is handed back.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .nn import ParamStore

MAGIC = b"WLF1"


class CheckpointError(Exception):
    pass


def save_checkpoint(path, stores: dict[str, ParamStore], meta: dict | None = None,
                    dtype: str = "<f8") -> None:
    if dtype not in ("<f8", "<f4"):
        raise CheckpointError(f"unsupported dtype {dtype!r}")
    entries = []
    chunks = []
    offset = 0
    for store_name, store in stores.items():
        for name in store.names():
            arr = np.ascontiguousarray(store.value(name), dtype=np.dtype(dtype))
            raw = arr.tobytes()
            entries.append({
                "store": store_name,
                "name": name,
                "dtype": dtype,
                "shape": list(arr.shape),
                "offset": offset,
            })
            chunks.append(raw)
            offset += len(raw)
    blob = b"".join(chunks)
    manifest = {
        "format": "WLF1",
        "meta": meta or {},
        "blob_bytes": len(blob),
        "checksum": hashlib.sha256(blob).hexdigest(),
        "entries": entries,
    }
    manifest_bytes = json.dumps(manifest, sort_keys=True,
                                separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(manifest_bytes)))
        fh.write(manifest_bytes)
        fh.write(blob)


def load_checkpoint(path) -> tuple[dict[str, ParamStore], dict]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise CheckpointError("not a WLF1 checkpoint")
    (mlen,) = struct.unpack("<I", raw[4:8])
    if len(raw) < 8 + mlen:
        raise CheckpointError("truncated checkpoint manifest")
    try:
        manifest = json.loads(raw[8:8 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint manifest: {exc}") from exc
    if manifest.get("format") != "WLF1":
        raise CheckpointError("bad format tag in manifest")
    blob = raw[8 + mlen:]
    if len(blob) != manifest["blob_bytes"]:
        raise CheckpointError(
            f"truncated checkpoint blob: {len(blob)} != {manifest['blob_bytes']}"
        )
    if hashlib.sha256(blob).hexdigest() != manifest["checksum"]:
        raise CheckpointError("checkpoint checksum mismatch")

    stores: dict[str, ParamStore] = {}
    for entry in manifest["entries"]:
        dt = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        stop = start + count * dt.itemsize
        if stop > len(blob):
            raise CheckpointError(f"entry {entry['name']} runs past blob end")
        arr = np.frombuffer(blob[start:stop], dtype=dt).reshape(shape)
        store = stores.setdefault(entry["store"], ParamStore())
        store.add(entry["name"], arr.astype(np.float64))
    return stores, manifest.get("meta", {})


def check_compatible(stores: dict[str, ParamStore],
                     templates: dict[str, ParamStore]) -> None:
    """Validate that loaded stores match the expected names and shapes."""
    for store_name, template in templates.items():
        if store_name not in stores:
            raise CheckpointError(f"checkpoint is missing store {store_name!r}")
        loaded = stores[store_name]
        expected = set(template.names())
        got = set(loaded.names())
        if expected != got:
            missing = sorted(expected - got)
            extra = sorted(got - expected)
            raise CheckpointError(
                f"store {store_name!r} name mismatch; missing={missing} extra={extra}"
            )
        for name in template.names():
            if loaded.value(name).shape != template.value(name).shape:
                raise CheckpointError(
                    f"shape mismatch for {store_name}.{name}: "
                    f"{loaded.value(name).shape} != {template.value(name).shape}"
                )
