"""Binary "MAUG" checkpoint container shared by the generator and the classifier.

Layout (all integers little-endian)::

    b"MAUG"  u32 version
    str kind                          # "genlm" | "classifier"
    u32 min_freq, u32 n_tokens, str token * n_tokens
    str hyperparameters               # JSON object
    u32 n_tensors
    directory: (str name, u32 ndim, u64 dim * ndim) * n_tensors
    payload:   float64 data of each tensor, in directory order

where ``str`` is a u32 byte length followed by UTF-8 bytes.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from pathlib import Path

import numpy as np

from .classifier import ClassifierConfig, ClassifierModel
from .corpus import Vocabulary
from .genlm import GeneratorConfig, GeneratorModel
from .tensor import parameter

MAGIC = b"MAUG"
VERSION = 1
_KINDS = {
    GeneratorModel.kind: (GeneratorModel, GeneratorConfig),
    ClassifierModel.kind: (ClassifierModel, ClassifierConfig),
}


class CheckpointError(ValueError):
    pass


def _put_str(buf: io.BytesIO, s: str) -> None:
    raw = s.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)


def _get(buf: io.BytesIO, fmt: str):
    size = struct.calcsize(fmt)
    raw = buf.read(size)
    if len(raw) != size:
        raise CheckpointError("truncated checkpoint")
    return struct.unpack(fmt, raw)


def _get_str(buf: io.BytesIO) -> str:
    (n,) = _get(buf, "<I")
    raw = buf.read(n)
    if len(raw) != n:
        raise CheckpointError("truncated checkpoint")
    return raw.decode("utf-8")


def dumps(model) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    _put_str(buf, model.kind)
    buf.write(struct.pack("<II", model.vocab.min_freq, len(model.vocab)))
    for tok in model.vocab.itos:
        _put_str(buf, tok)
    _put_str(buf, json.dumps(model.hyperparameters(), sort_keys=True))
    buf.write(struct.pack("<I", len(model.params)))
    for name, t in model.params.items():
        _put_str(buf, name)
        buf.write(struct.pack("<I", t.data.ndim))
        buf.write(struct.pack(f"<{t.data.ndim}Q", *t.data.shape))
    for t in model.params.values():
        buf.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    return buf.getvalue()


def loads(raw: bytes):
    buf = io.BytesIO(raw)
    if buf.read(4) != MAGIC:
        raise CheckpointError("not a MAUG checkpoint (bad magic)")
    (version,) = _get(buf, "<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    kind = _get_str(buf)
    if kind not in _KINDS:
        raise CheckpointError(f"unknown model kind {kind!r}")
    model_cls, config_cls = _KINDS[kind]
    min_freq, n_tokens = _get(buf, "<II")
    vocab = Vocabulary([_get_str(buf) for _ in range(n_tokens)], min_freq=min_freq)
    config = config_cls(**json.loads(_get_str(buf)))
    (n_tensors,) = _get(buf, "<I")
    directory = []
    for _ in range(n_tensors):
        name = _get_str(buf)
        (ndim,) = _get(buf, "<I")
        directory.append((name, _get(buf, f"<{ndim}Q")))
    params = {}
    for name, shape in directory:
        count = int(np.prod(shape, dtype=np.int64))
        data = buf.read(8 * count)
        if len(data) != 8 * count:
            raise CheckpointError(f"truncated payload for tensor {name!r}")
        params[name] = parameter(np.frombuffer(data, dtype="<f8").reshape(shape).astype(np.float64))
    return model_cls(vocab, config, params)


def save_checkpoint(model, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(model))
    tmp.replace(path)


def load_checkpoint(path):
    return loads(Path(path).read_bytes())


def param_hash(model) -> str:
    """SHA-256 over parameter names, shapes and float64 bytes."""
    h = hashlib.sha256()
    for name, t in model.params.items():
        h.update(name.encode())
        h.update(repr(t.data.shape).encode())
        h.update(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    return h.hexdigest()
