"""Binary checkpoints for GCN weights and deletion operators.

Layout (all integers little-endian)::

    b"GNND"  u16 version  u8 kind
    kind-specific header
        model:    u8 has_head
        operator: u8 mode  u8 activation  u32 num_layers
    u32 n_matrices, then (u32 rows, u32 cols) per matrix
    float64 data, row-major, matrix after matrix
    operator only: u32 num_nodes  u32 n_masks, then one packed bitmap per mask

A model's classification head, when present, is stored as the last matrix.
Bitmaps pack node ``i`` into bit ``i % 8`` of byte ``i // 8``.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .deletion import ACTIVATIONS, MODES, DeletionOperator
from .errors import CheckpointError
from .model import GnnModel

MAGIC = b"GNND"
VERSION = 1
KIND_MODEL = 0
KIND_OPERATOR = 1


def _pack_matrices(mats: list[np.ndarray]) -> bytes:
    out = [struct.pack("<I", len(mats))]
    out += [struct.pack("<II", *m.shape) for m in mats]
    out += [np.ascontiguousarray(m, dtype="<f8").tobytes() for m in mats]
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def matrices(self) -> list[np.ndarray]:
        (count,) = self.unpack("<I")
        dims = [self.unpack("<II") for _ in range(count)]
        return [np.frombuffer(self.take(8 * r * c), dtype="<f8").reshape(r, c).astype(np.float64)
                for r, c in dims]


def _header(kind: int) -> bytes:
    return MAGIC + struct.pack("<HB", VERSION, kind)


def _open(path, kind: int) -> _Reader:
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, got = r.unpack("<HB")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    if got != kind:
        raise CheckpointError(f"{path}: checkpoint holds kind {got}, expected {kind}")
    return r


def save_model(model: GnnModel, path) -> None:
    mats = list(model.layer_weights)
    has_head = model.cls_head is not None
    if has_head:
        mats.append(model.cls_head)
    Path(path).write_bytes(_header(KIND_MODEL) + struct.pack("<B", has_head) + _pack_matrices(mats))


def load_model(path) -> GnnModel:
    r = _open(path, KIND_MODEL)
    (has_head,) = r.unpack("<B")
    mats = r.matrices()
    head = mats.pop() if has_head else None
    return GnnModel(mats, cls_head=head)


def save_operator(op: DeletionOperator, path) -> None:
    meta = struct.pack("<BBI", MODES.index(op.mode), ACTIVATIONS.index(op.activation),
                       op.num_layers)
    masks = [struct.pack("<II", op.num_nodes, len(op.masks))]
    masks += [np.packbits(m, bitorder="little").tobytes() for m in op.masks]
    Path(path).write_bytes(_header(KIND_OPERATOR) + meta + _pack_matrices(op.w_d) + b"".join(masks))


def load_operator(path) -> DeletionOperator:
    r = _open(path, KIND_OPERATOR)
    mode, act, num_layers = r.unpack("<BBI")
    if mode >= len(MODES) or act >= len(ACTIVATIONS):
        raise CheckpointError(f"{path}: unknown operator mode or activation code")
    w_d = r.matrices()
    n, n_masks = r.unpack("<II")
    width = (n + 7) // 8
    masks = [np.unpackbits(np.frombuffer(r.take(width), dtype=np.uint8), count=n,
                           bitorder="little").astype(bool) for _ in range(n_masks)]
    return DeletionOperator(w_d, masks, num_layers, MODES[mode], ACTIVATIONS[act])
