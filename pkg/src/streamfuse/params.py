"""Named, component-partitioned trainable parameters with a freeze mask.

Checkpoint container: little-endian binary, one record per parameter
(name, component tag, trainable flag, shape, float64 values), written in
sorted-name order so identical stores serialize to identical bytes.
"""

from __future__ import annotations

import hashlib
import os
import struct
import tempfile

import numpy as np

from .autodiff import Tensor

CKPT_MAGIC = b"CKP1"
CKPT_VERSION = 1

COMPONENTS = ("encoder", "frame_att", "han", "decoder", "ctc", "lm")


class CheckpointError(ValueError):
    pass


class ParameterStore:
    """name -> Tensor, with the component tag encoded as the name's first segment."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def __contains__(self, name):
        return name in self._params

    def __getitem__(self, name) -> Tensor:
        return self._params[name]

    def __len__(self):
        return len(self._params)

    @staticmethod
    def component_of(name: str) -> str:
        comp = name.split("/", 1)[0]
        if comp not in COMPONENTS:
            raise ValueError(f"parameter {name!r} has unknown component tag {comp!r}")
        return comp

    def create(self, name: str, values: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter {name!r}")
        self.component_of(name)
        t = Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def names(self, component: str | None = None):
        for name in sorted(self._params):
            if component is None or self.component_of(name) == component:
                yield name

    def tensors(self, component=None, trainable_only=False):
        for name in self.names(component):
            t = self._params[name]
            if trainable_only and not t.requires_grad:
                continue
            yield name, t

    def components(self) -> set[str]:
        return {self.component_of(n) for n in self._params}

    def set_trainable(self, component: str, flag: bool):
        hit = False
        for name in self.names(component):
            self._params[name].requires_grad = flag
            hit = True
        if not hit:
            raise KeyError(f"no parameters in component {component!r}")

    def count(self, component=None, trainable_only=False) -> int:
        return sum(t.values.size for _, t in self.tensors(component, trainable_only))

    def zero_grads(self):
        for t in self._params.values():
            t.grad = None

    def copy_values_from(self, other: "ParameterStore", mapping: dict[str, str]):
        """Assign other[src] into self[dst] for every dst -> src pair."""
        for dst, src in mapping.items():
            if src not in other._params:
                raise KeyError(f"source checkpoint lacks parameter {src!r}")
            src_t = other._params[src]
            dst_t = self._params[dst]
            if src_t.values.shape != dst_t.values.shape:
                raise ValueError(
                    f"shape mismatch copying {src!r} {src_t.values.shape} -> {dst!r} {dst_t.values.shape}"
                )
            dst_t.values = src_t.values.copy()

    def snapshot(self) -> dict[str, bytes]:
        """Raw little-endian bytes per parameter; basis of the freeze contract."""
        return {n: t.values.astype("<f8").tobytes() for n, t in self._params.items()}

    def restore(self, snap: dict[str, bytes]):
        for name, raw in snap.items():
            t = self._params[name]
            t.values = np.frombuffer(raw, dtype="<f8").reshape(t.values.shape).copy()

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self._params):
            t = self._params[name]
            h.update(name.encode())
            h.update(np.asarray(t.values.shape, dtype="<u4").tobytes())
            h.update(t.values.astype("<f8").tobytes())
        return h.hexdigest()

    # -- checkpoint codec -------------------------------------------------

    def save(self, path):
        blob = bytearray()
        blob += CKPT_MAGIC
        blob += struct.pack("<II", CKPT_VERSION, len(self._params))
        for name in sorted(self._params):
            t = self._params[name]
            nb = name.encode("utf-8")
            cb = self.component_of(name).encode("utf-8")
            blob += struct.pack("<I", len(nb)) + nb
            blob += struct.pack("<I", len(cb)) + cb
            blob += struct.pack("<B", 1 if t.requires_grad else 0)
            blob += struct.pack("<I", t.values.ndim)
            blob += struct.pack(f"<{t.values.ndim}I", *t.values.shape)
            blob += t.values.astype("<f8").tobytes()
        _atomic_write(path, bytes(blob))

    @classmethod
    def load(cls, path) -> "ParameterStore":
        with open(path, "rb") as f:
            data = f.read()
        if data[:4] != CKPT_MAGIC:
            raise CheckpointError(f"{path}: bad magic {data[:4]!r}")
        version, count = struct.unpack_from("<II", data, 4)
        if version != CKPT_VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        store = cls()
        off = 12
        try:
            for _ in range(count):
                (nlen,) = struct.unpack_from("<I", data, off)
                off += 4
                name = data[off : off + nlen].decode("utf-8")
                off += nlen
                (clen,) = struct.unpack_from("<I", data, off)
                off += 4
                comp = data[off : off + clen].decode("utf-8")
                off += clen
                (trainable,) = struct.unpack_from("<B", data, off)
                off += 1
                (ndim,) = struct.unpack_from("<I", data, off)
                off += 4
                shape = struct.unpack_from(f"<{ndim}I", data, off)
                off += 4 * ndim
                size = int(np.prod(shape)) if ndim else 1
                raw = data[off : off + 8 * size]
                if len(raw) != 8 * size:
                    raise CheckpointError(f"{path}: truncated payload for {name!r}")
                off += 8 * size
                if comp != ParameterStore.component_of(name):
                    raise CheckpointError(f"{path}: component tag {comp!r} disagrees with name {name!r}")
                t = store.create(name, np.frombuffer(raw, dtype="<f8").reshape(shape).copy())
                t.requires_grad = bool(trainable)
        except struct.error as e:
            raise CheckpointError(f"{path}: truncated checkpoint ({e})") from None
        if off != len(data):
            raise CheckpointError(f"{path}: {len(data) - off} trailing bytes")
        return store


def _atomic_write(path, blob: bytes):
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-ckpt-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
