"""Binary model container (``.bcmp``).

Layout, all integers little-endian::

    0   4  magic  b"BCMP"
    4   2  major version (u16)
    6   2  minor version (u16)
    8   8  header length H (u64)
    16  8  payload length P (u64)
    24  H  header, UTF-8 JSON
    24+H P payload: float64 LE blocks, back to back
    .. 8   checksum: 8-byte BLAKE2b digest of every preceding byte

The header lists each block's name, layer, shape and byte offset inside the
payload, together with the architecture, prior, optional masks and
quantization rows, and a free-form ``config`` record.
"""

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ChecksumError, ModelMagicError, ModelParseError, VersionError
from .model import BayesNet

MAGIC = b"BCMP"
VERSION = (1, 0)
PREFIX = struct.Struct("<4sHHQQ")
CHECKSUM_BYTES = 8
DEFAULT_MAX_BYTES = 1 << 30


def checksum(data):
    return hashlib.blake2b(data, digest_size=CHECKSUM_BYTES).digest()


@dataclass
class ModelFile:
    model: BayesNet
    masks: list = None
    quant: list = None
    config: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    version: tuple = VERSION


def _blocks(model, masks):
    for i, layer in enumerate(model.layers):
        for name in layer.param_names:
            yield f"{i}/{name}", getattr(layer, name).data
    for i, m in enumerate(masks or []):
        yield f"{i}/mask", np.asarray(m, dtype=np.float64)


def dumps(model, masks=None, quant=None, config=None, extra=None):
    entries, chunks, offset = [], [], 0
    for name, arr in _blocks(model, masks):
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = {
        "arch": model.arch,
        "prior": model.prior,
        "tau0": model.tau0,
        "blocks": entries,
        "has_masks": masks is not None,
        "quant": quant,
        "config": config or {},
        "extra": extra or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(chunks)
    body = PREFIX.pack(MAGIC, VERSION[0], VERSION[1], len(hbytes), len(payload)) + hbytes + payload
    return body + checksum(body)


def save(path, model, masks=None, quant=None, config=None, extra=None):
    data = dumps(model, masks, quant, config, extra)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _check_prefix(prefix, file_size, max_bytes):
    if len(prefix) < PREFIX.size:
        raise ModelParseError("file shorter than the fixed prefix")
    magic, major, minor, hlen, plen = PREFIX.unpack(prefix)
    if magic != MAGIC:
        raise ModelMagicError(f"bad magic {magic!r}")
    if major != VERSION[0]:
        raise VersionError(f"format version {major}.{minor} is not supported (expected {VERSION[0]}.x)")
    if hlen + plen > max_bytes:
        raise ModelParseError(f"declared size {hlen + plen} exceeds the {max_bytes}-byte cap")
    if file_size is not None and file_size != PREFIX.size + hlen + plen + CHECKSUM_BYTES:
        raise ModelParseError("file length does not match the declared sizes (truncated or padded)")
    return (major, minor), hlen, plen


def loads(data, max_bytes=DEFAULT_MAX_BYTES):
    version, hlen, plen = _check_prefix(data[:PREFIX.size], len(data), max_bytes)
    body, digest = data[:-CHECKSUM_BYTES], data[-CHECKSUM_BYTES:]
    if checksum(body) != digest:
        raise ChecksumError("checksum mismatch")
    try:
        header = json.loads(body[PREFIX.size:PREFIX.size + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelParseError(f"unreadable header: {exc}") from None
    payload = body[PREFIX.size + hlen:]
    return _build(header, payload, version)


def load(path, max_bytes=DEFAULT_MAX_BYTES):
    with open(path, "rb") as fh:
        size = os.fstat(fh.fileno()).st_size
        _check_prefix(fh.read(PREFIX.size), size, max_bytes)
        fh.seek(0)
        data = fh.read(size)
    return loads(data, max_bytes)


def _build(header, payload, version):
    try:
        model = BayesNet(header["arch"], header["prior"], tau0=header["tau0"])
        n_layers = len(model.layers)
        masks = [None] * n_layers if header["has_masks"] else None
        for entry in header["blocks"]:
            start, nbytes = entry["offset"], entry["nbytes"]
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            if start < 0 or start + nbytes > len(payload) or nbytes != 8 * count:
                raise ModelParseError(f"block {entry['name']} lies outside the payload")
            arr = np.frombuffer(payload, dtype="<f8", count=count, offset=start).reshape(entry["shape"])
            layer_idx, name = entry["name"].split("/", 1)
            layer_idx = int(layer_idx)
            if name == "mask":
                masks[layer_idx] = arr.astype(bool)
            else:
                model.layers[layer_idx].set_params({name: arr.astype(np.float64)})
    except ModelParseError:
        raise
    except (KeyError, ValueError, IndexError, TypeError) as exc:
        raise ModelParseError(f"malformed model file: {exc}") from None
    if masks is not None and any(m is None for m in masks):
        raise ModelParseError("mask blocks missing for some layers")
    return ModelFile(model, masks, header.get("quant"), header.get("config", {}), header.get("extra", {}), version)
