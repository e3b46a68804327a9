"""Named parameters, RMSProp, and the binary checkpoint container."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterator, Mapping

import numpy as np

from .autograd import ShapeMismatch, Tensor

RMS_RHO = 0.9
RMS_EPS = 1e-8


class ParameterSet:
    """Ordered map of parameter path -> leaf Tensor, plus RMSProp accumulators."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._sq: dict[str, np.ndarray] = {}

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def accumulator(self, name: str) -> np.ndarray:
        return self._sq[name]

    def num_parameters(self, prefix: str = "") -> int:
        return sum(t.data.size for n, t in self._params.items() if n.startswith(prefix))

    def add(self, name: str, value, accumulator=None) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(value, requires_grad=True)
        self._params[name] = t
        if accumulator is None:
            self._sq[name] = np.zeros_like(t.data)
        else:
            acc = np.array(accumulator, dtype=np.float64)
            if acc.shape != t.data.shape:
                raise ShapeMismatch(f"accumulator for {name}: {acc.shape} vs {t.data.shape}")
            self._sq[name] = acc
        return t

    def matrix(self, name: str, shape: tuple[int, ...], rng: np.random.Generator) -> Tensor:
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); weights are laid out (in, out)."""
        bound = 1.0 / np.sqrt(shape[0])
        return self.add(name, rng.uniform(-bound, bound, size=shape))

    def bias(self, name: str, size: int) -> Tensor:
        return self.add(name, np.zeros(size))

    def copy(self) -> "ParameterSet":
        out = ParameterSet()
        for n, t in self._params.items():
            out.add(n, t.data.copy(), self._sq[n].copy())
        return out

    def grads_by_name(self, grads: list[np.ndarray]) -> dict[str, np.ndarray]:
        return dict(zip(self._params, grads))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for n, t in self._params.items():
            h.update(n.encode())
            h.update(t.data.tobytes())
        return h.hexdigest()


def rmsprop_step(
    params: ParameterSet,
    grads: Mapping[str, np.ndarray],
    lr: float,
    rho: float = RMS_RHO,
    eps: float = RMS_EPS,
    clip: float | None = None,
) -> ParameterSet:
    """One RMSProp update; returns a new ParameterSet (the input is untouched).

    ``s <- rho*s + (1-rho)*g^2``, ``theta <- theta - lr*g/(sqrt(s)+eps)``.
    Parameters missing from ``grads`` get g = 0.  ``clip`` bounds the global
    gradient norm when set.
    """
    for n, g in grads.items():
        if n not in params:
            raise KeyError(f"gradient for unknown parameter {n!r}")
        if np.shape(g) != params[n].data.shape:
            raise ShapeMismatch(f"{n}: grad {np.shape(g)} vs param {params[n].data.shape}")
    factor = 1.0
    if clip is not None:
        norm = np.sqrt(sum(float(np.sum(np.square(g))) for g in grads.values()))
        if norm > clip:
            factor = clip / norm
    out = ParameterSet()
    for n, t in params.items():
        g = grads.get(n)
        s = params.accumulator(n)
        if g is None:
            out.add(n, t.data.copy(), rho * s)
            continue
        g = np.asarray(g, dtype=np.float64) * factor
        s_new = rho * s + (1.0 - rho) * g * g
        out.add(n, t.data - lr * g / (np.sqrt(s_new) + eps), s_new)
    return out


# --------------------------------------------------------------------------
# checkpoint container
#
# Little-endian throughout:
#   8 bytes   magic  b"SYNNAVCK"
#   uint32    format_version
#   uint64    header length H
#   H bytes   UTF-8 JSON header (sorted keys, compact separators)
#   uint32    entry count N
#   N entries:
#     uint16  name length L, then L bytes UTF-8 name
#     uint8   ndim D, then D x uint64 extents
#     prod(extents) x float64 payload, row-major
# Every parameter contributes two entries: "<name>" and "<name>@rms".

MAGIC = b"SYNNAVCK"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


@dataclass
class Checkpoint:
    header: dict
    params: ParameterSet


def config_hash(config: Mapping) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _write_entry(f: BinaryIO, name: str, arr: np.ndarray) -> None:
    nb = name.encode("utf-8")
    f.write(struct.pack("<H", len(nb)))
    f.write(nb)
    f.write(struct.pack("<B", arr.ndim))
    for d in arr.shape:
        f.write(struct.pack("<Q", d))
    f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_exact(f: BinaryIO, n: int) -> bytes:
    b = f.read(n)
    if len(b) != n:
        raise CheckpointError("truncated checkpoint")
    return b


def _read_entry(f: BinaryIO) -> tuple[str, np.ndarray]:
    (ln,) = struct.unpack("<H", _read_exact(f, 2))
    name = _read_exact(f, ln).decode("utf-8")
    (nd,) = struct.unpack("<B", _read_exact(f, 1))
    shape = tuple(struct.unpack("<Q", _read_exact(f, 8))[0] for _ in range(nd))
    count = int(np.prod(shape)) if shape else 1
    arr = np.frombuffer(_read_exact(f, 8 * count), dtype="<f8").astype(np.float64).reshape(shape)
    return name, arr


def save_checkpoint(path, params: ParameterSet, header: Mapping) -> None:
    hdr = dict(header)
    hdr["format_version"] = FORMAT_VERSION
    blob = json.dumps(hdr, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", 2 * len(params)))
        for name, t in params.items():
            _write_entry(f, name, t.data)
            _write_entry(f, name + "@rms", params.accumulator(name))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        if _read_exact(f, 8) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(f, 4))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        (hlen,) = struct.unpack("<Q", _read_exact(f, 8))
        header = json.loads(_read_exact(f, hlen).decode("utf-8"))
        (count,) = struct.unpack("<I", _read_exact(f, 4))
        entries = [_read_entry(f) for _ in range(count)]
        if f.read(1):
            raise CheckpointError(f"{path}: trailing bytes")
    values = {n: a for n, a in entries if not n.endswith("@rms")}
    accs = {n[: -len("@rms")]: a for n, a in entries if n.endswith("@rms")}
    params = ParameterSet()
    for n, a in values.items():
        params.add(n, a, accs.get(n))
    return Checkpoint(header, params)
