"""Named parameter store with Adam state and a binary checkpoint format.

Checkpoint layout: the magic "RFCKPT1", then one record per array:
u16 name length, UTF-8 name, u8 rank, u32 dims (rank of them), little-endian
f64 payload.  Adam moments and step counters are stored as ordinary records
under "<name>.m1", "<name>.m2", and "<name>.step".
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ShapeError
from .autodiff import Tape, Tensor

CKPT_MAGIC = b"RFCKPT1"


class AdamState:
    __slots__ = ("m1", "m2", "step")

    def __init__(self, shape):
        self.m1 = np.zeros(shape)
        self.m2 = np.zeros(shape)
        self.step = 0


class ParamStore:
    """Uniquely named float64 parameter arrays plus per-parameter Adam state."""

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)
        self.params: dict[str, np.ndarray] = {}
        self.adam: dict[str, AdamState] = {}

    def add(self, name: str, values: np.ndarray) -> np.ndarray:
        if name in self.params:
            raise ShapeError(f"duplicate parameter name {name!r}")
        arr = np.asarray(values, dtype=np.float64)
        self.params[name] = arr
        self.adam[name] = AdamState(arr.shape)
        return arr

    def add_linear(self, name: str, fan_in: int, fan_out: int, zero: bool = False):
        """Weight (fan_in, fan_out) and bias (fan_out,) pair under name.W / name.b.

        Weights draw from uniform +-sqrt(6 / (fan_in + fan_out)); biases are
        zero.  zero=True zeroes the weight too (used for output layers so an
        untrained head predicts the neutral value).
        """
        if zero:
            w = np.zeros((fan_in, fan_out))
        else:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = self.rng.uniform(-limit, limit, size=(fan_in, fan_out))
        self.add(f"{name}.W", w)
        self.add(f"{name}.b", np.zeros(fan_out))

    def names(self, prefix: str | None = None) -> list[str]:
        if prefix is None:
            return list(self.params)
        return [n for n in self.params if n.startswith(prefix)]

    def inject(self, tape: Tape, names=None) -> dict[str, Tensor]:
        """Record parameters as tape leaves; returns name -> Tensor."""
        if names is None:
            names = self.params.keys()
        return {n: tape.leaf(self.params[n], op=f"param:{n}") for n in names}

    @staticmethod
    def collect_grads(tape: Tape, tensors: dict[str, Tensor], grads) -> dict[str, np.ndarray]:
        """Gradient per injected parameter; zeros for unreachable ones."""
        out = {}
        for name, t in tensors.items():
            g = grads[t.node]
            out[name] = np.zeros_like(t.values) if g is None else g
        return out

    def adam_step(self, grads: dict[str, np.ndarray], lr: float,
                  betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                  names=None):
        """Standard bias-corrected Adam update, in place."""
        b1, b2 = betas
        if names is None:
            names = list(self.params)
        for name in names:
            if name not in grads:
                raise ShapeError(f"missing gradient for parameter {name!r}")
            g = grads[name]
            p = self.params[name]
            if g.shape != p.shape:
                raise ShapeError(f"gradient shape {g.shape} != param shape {p.shape} for {name!r}")
            st = self.adam[name]
            st.step += 1
            st.m1 *= b1
            st.m1 += (1 - b1) * g
            st.m2 *= b2
            st.m2 += (1 - b2) * (g * g)
            denom = np.sqrt(st.m2 / (1 - b2 ** st.step))
            denom += eps
            p -= (lr / (1 - b1 ** st.step)) * st.m1 / denom

    # -- checkpoint io ------------------------------------------------------

    def _records(self) -> dict[str, np.ndarray]:
        recs: dict[str, np.ndarray] = {}
        for name, p in self.params.items():
            recs[name] = p
            st = self.adam[name]
            recs[f"{name}.m1"] = st.m1
            recs[f"{name}.m2"] = st.m2
            recs[f"{name}.step"] = np.array(float(st.step))
        return recs

    def save(self, path: str | Path):
        chunks = [CKPT_MAGIC]
        for name, arr in self._records().items():
            nb = name.encode("utf-8")
            a = np.asarray(arr, dtype=np.float64)  # keeps 0-d rank
            chunks.append(struct.pack("<H", len(nb)))
            chunks.append(nb)
            chunks.append(struct.pack("<B", a.ndim))
            chunks.append(struct.pack(f"<{a.ndim}I", *a.shape))
            chunks.append(a.astype("<f8").tobytes())
        Path(path).write_bytes(b"".join(chunks))

    @classmethod
    def load(cls, path: str | Path) -> "ParamStore":
        data = Path(path).read_bytes()
        if data[: len(CKPT_MAGIC)] != CKPT_MAGIC:
            raise ShapeError(f"{path}: bad checkpoint magic")
        pos = len(CKPT_MAGIC)
        recs: dict[str, np.ndarray] = {}
        while pos < len(data):
            (nlen,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", data, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(dims)
            pos += 8 * count
            recs[name] = arr.astype(np.float64)
        store = cls()
        for name, arr in recs.items():
            if name.endswith((".m1", ".m2", ".step")):
                continue
            store.add(name, arr)
        for name in store.params:
            st = store.adam[name]
            if f"{name}.m1" in recs:
                st.m1 = recs[f"{name}.m1"].reshape(st.m1.shape)
            if f"{name}.m2" in recs:
                st.m2 = recs[f"{name}.m2"].reshape(st.m2.shape)
            if f"{name}.step" in recs:
                st.step = int(recs[f"{name}.step"])
        return store
