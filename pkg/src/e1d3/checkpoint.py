"""Single-file binary checkpoints.

Layout::

    b"E1D3CKPT"              8-byte magic
    uint32 LE                format version
    uint64 LE                header length H
    H bytes                  UTF-8 JSON header (spec, metadata, array table)
    float64 LE arrays        in header order, C-contiguous
    32 bytes                 sha256 of everything above

Float arrays are written verbatim, so a save/load round trip is bit-exact.
"""
import hashlib
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError, IoFailure
from .network import NetworkSpec, NetworkState
from .optim import OptimizerState

MAGIC = b"E1D3CKPT"
VERSION = 1
_DIGEST = 32


@dataclass
class Checkpoint:
    spec: NetworkSpec
    state: NetworkState
    optimizer: OptimizerState | None = None
    meta: dict = field(default_factory=dict)


def _encode(spec, state, optimizer, meta):
    arrays = [("param", k, v) for k, v in state.params.items()]
    if optimizer is not None:
        arrays += [("velocity", k, v) for k, v in optimizer.velocity.items()]
    table, blobs, offset = [], [], 0
    for group, name, arr in arrays:
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        table.append({"group": group, "name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(data)
        offset += len(data)
    header = {
        "spec": spec.to_dict(),
        "rng_seed": int(state.rng_seed),
        "optimizer": None if optimizer is None else {"epoch": optimizer.epoch, "step": optimizer.step},
        "meta": meta or {},
        "arrays": table,
    }
    hdr = json.dumps(header, sort_keys=True).encode("utf-8")
    body = MAGIC + struct.pack("<IQ", VERSION, len(hdr)) + hdr + b"".join(blobs)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(path, spec, state, optimizer=None, meta=None):
    payload = _encode(spec, state, optimizer, meta)
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def load_checkpoint(path):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read checkpoint {path}: {exc}") from exc
    fixed = len(MAGIC) + 12
    if len(raw) < fixed + _DIGEST or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    body, digest = raw[:-_DIGEST], raw[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (corrupt or truncated)")
    version, hlen = struct.unpack_from("<IQ", raw, len(MAGIC))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(body[fixed : fixed + hlen].decode("utf-8"))
    data = body[fixed + hlen :]

    params, velocity = {}, {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=entry["offset"])
        arr = arr.astype(np.float64).reshape(shape)
        (params if entry["group"] == "param" else velocity)[entry["name"]] = arr

    spec = NetworkSpec.from_dict(header["spec"])
    state = NetworkState(params, {k: np.zeros_like(v) for k, v in params.items()}, header["rng_seed"])
    opt = None
    if header["optimizer"] is not None:
        opt = OptimizerState(velocity, header["optimizer"]["epoch"], header["optimizer"]["step"])
    return Checkpoint(spec, state, opt, header["meta"])
