"""Bit-exact model serialization and storage accounting.

Layout (all little-endian, arrays contiguous in layer order):

    magic "GFOR" | version u16 | N_root u32 | N_internal u32 | N_leaf u32
    | D_R u16 | D_I u16
    | cov net dims u16 x4 (in, hidden, hidden-layer count, out)
    | rgb net dims u16 x4
    | root features        binary16, N_R * D_R
    | internal features    binary16, N_I * D_I
    | internal parents     u32
    | leaf mu              binary32, N_L * 3
    | leaf log_gamma_s     binary32
    | leaf alpha_raw       binary32
    | leaf parents         u32
    | cov net weights      binary16, per layer W (out*in) then b
    | rgb net weights      binary16, same

Features and network weights quantize to half (round-to-nearest-even);
leaf attributes stay single precision. Passing ``decoders=None`` writes
zero network dims and no network payload, so an empty forest serializes
to exactly the fixed-size header.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .decoder import Decoders
from .errors import FormatError
from .forest import POINTER_DTYPE, Forest
from .mlp import Mlp

MAGIC = b"GFOR"
VERSION = 1
_HEADER = struct.Struct("<4sHIIIHH8H")
HEADER_SIZE = _HEADER.size

# flat-baseline accounting: an uncompressed Gaussian costs 59 float32 values
FLAT_FLOATS_PER_GAUSSIAN = 59


def _mlp_dims(mlp: Mlp) -> tuple[int, int, int, int]:
    return mlp.input_dim, mlp.hidden_dim, mlp.n_hidden, mlp.output_dim


def _half(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f2").tobytes()


def _mlp_payload(mlp: Mlp) -> bytes:
    parts = []
    for w, b in zip(mlp.weights, mlp.biases):
        parts.append(_half(w))
        parts.append(_half(b))
    return b"".join(parts)


def save_model(forest: Forest, decoders: Decoders | None = None) -> bytes:
    d_r, d_i = forest.dims
    cov_dims = _mlp_dims(decoders.cov) if decoders else (0, 0, 0, 0)
    rgb_dims = _mlp_dims(decoders.rgb) if decoders else (0, 0, 0, 0)
    parts = [_HEADER.pack(MAGIC, VERSION, forest.n_roots, forest.n_internals,
                          forest.n_leaves, d_r, d_i, *cov_dims, *rgb_dims)]
    parts.append(_half(forest.root_f))
    parts.append(_half(forest.internal_f))
    parts.append(np.ascontiguousarray(forest.internal_parent, dtype="<u4").tobytes())
    parts.append(np.ascontiguousarray(forest.leaf_mu, dtype="<f4").tobytes())
    parts.append(np.ascontiguousarray(forest.leaf_log_gamma, dtype="<f4").tobytes())
    parts.append(np.ascontiguousarray(forest.leaf_alpha_raw, dtype="<f4").tobytes())
    parts.append(np.ascontiguousarray(forest.leaf_parent, dtype="<u4").tobytes())
    if decoders is not None:
        parts.append(_mlp_payload(decoders.cov))
        parts.append(_mlp_payload(decoders.rgb))
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes, offset: int):
        self.data = data
        self.offset = offset

    def take(self, dtype, count: int, what: str) -> np.ndarray:
        dtype = np.dtype(dtype)
        need = dtype.itemsize * count
        if len(self.data) - self.offset < need:
            raise FormatError(
                f"truncated file: {what} needs {need} bytes, "
                f"{len(self.data) - self.offset} left")
        out = np.frombuffer(self.data, dtype=dtype, count=count, offset=self.offset)
        self.offset += need
        return out


def _read_mlp(reader: _Reader, dims, what: str) -> Mlp:
    d_in, hidden, n_hidden, d_out = dims
    mlp = Mlp(d_in, d_out, hidden_dim=hidden, n_hidden=n_hidden)
    for i, w in enumerate(mlp.weights):
        mlp.weights[i] = reader.take("<f2", w.size, f"{what} W{i}") \
            .astype(np.float64).reshape(w.shape)
        mlp.biases[i] = reader.take("<f2", w.shape[0], f"{what} b{i}") \
            .astype(np.float64)
    return mlp


def load_model(data: bytes) -> tuple[Forest, Decoders | None]:
    if len(data) < HEADER_SIZE:
        raise FormatError(f"file too short for header ({len(data)} bytes)")
    magic, version, n_r, n_i, n_l, d_r, d_i, *mlp_dims = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    cov_dims, rgb_dims = tuple(mlp_dims[:4]), tuple(mlp_dims[4:])

    r = _Reader(data, HEADER_SIZE)
    forest = Forest(
        root_f=r.take("<f2", n_r * d_r, "root features").astype(np.float64)
            .reshape(n_r, d_r),
        internal_f=r.take("<f2", n_i * d_i, "internal features").astype(np.float64)
            .reshape(n_i, d_i),
        internal_parent=r.take("<u4", n_i, "internal parents").astype(POINTER_DTYPE),
        leaf_mu=r.take("<f4", n_l * 3, "leaf mu").astype(np.float64).reshape(n_l, 3),
        leaf_log_gamma=r.take("<f4", n_l, "leaf log_gamma").astype(np.float64),
        leaf_alpha_raw=r.take("<f4", n_l, "leaf alpha_raw").astype(np.float64),
        leaf_parent=r.take("<u4", n_l, "leaf parents").astype(POINTER_DTYPE),
    )
    decoders = None
    if any(cov_dims) or any(rgb_dims):
        decoders = Decoders(cov=_read_mlp(r, cov_dims, "cov net"),
                            rgb=_read_mlp(r, rgb_dims, "rgb net"))
    if r.offset != len(data):
        raise FormatError(f"{len(data) - r.offset} trailing bytes after payload")
    return forest, decoders


@dataclass
class SizeReport:
    """Serialized sizes plus the float32-equivalent accounting."""

    bytes_root: int
    bytes_internal: int
    bytes_leaf: int
    bytes_mlp: int
    bytes_header: int
    total_bytes: int
    # float32-equivalent parameter counts (half-precision entries count 1/2)
    eq_leaf: float           # 6 per leaf: mu(3) + gamma + alpha + pointer
    eq_nonleaf: float        # pointer-exclusive: (N_I D_I + N_R D_R) / 2
    eq_total: float
    flat_bytes: int          # baseline: 59 float32 per leaf
    ratio_serialized: float  # flat bytes / serialized forest bytes
    ratio_equivalent: float  # 59 N / total equivalents

    def rows(self):
        return [
            ("root features (half)", self.bytes_root),
            ("internal features + pointers", self.bytes_internal),
            ("leaf attributes + pointers", self.bytes_leaf),
            ("decoder networks (half)", self.bytes_mlp),
            ("header", self.bytes_header),
            ("total", self.total_bytes),
        ]


def equivalent_ratio(eq_per_leaf: float) -> float:
    """Compression vs the 59-float flat baseline for a given per-leaf cost."""
    return FLAT_FLOATS_PER_GAUSSIAN / eq_per_leaf


def size_report(forest: Forest, decoders: Decoders | None = None) -> SizeReport:
    d_r, d_i = forest.dims
    n_r, n_i, n_l = forest.n_roots, forest.n_internals, forest.n_leaves
    bytes_root = 2 * n_r * d_r
    bytes_internal = 2 * n_i * d_i + 4 * n_i
    bytes_leaf = 4 * 5 * n_l + 4 * n_l
    bytes_mlp = 0
    if decoders is not None:
        bytes_mlp = 2 * (decoders.cov.n_params() + decoders.rgb.n_params())
    total = HEADER_SIZE + bytes_root + bytes_internal + bytes_leaf + bytes_mlp

    eq_leaf = 6.0 * n_l
    eq_nonleaf = (n_i * d_i + n_r * d_r) / 2.0
    eq_total = eq_leaf + eq_nonleaf
    flat_bytes = FLAT_FLOATS_PER_GAUSSIAN * 4 * n_l
    forest_bytes = bytes_root + bytes_internal + bytes_leaf
    return SizeReport(
        bytes_root=bytes_root,
        bytes_internal=bytes_internal,
        bytes_leaf=bytes_leaf,
        bytes_mlp=bytes_mlp,
        bytes_header=HEADER_SIZE,
        total_bytes=total,
        eq_leaf=eq_leaf,
        eq_nonleaf=eq_nonleaf,
        eq_total=eq_total,
        flat_bytes=flat_bytes,
        ratio_serialized=flat_bytes / forest_bytes if forest_bytes else 0.0,
        ratio_equivalent=(FLAT_FLOATS_PER_GAUSSIAN * n_l / eq_total)
            if eq_total else 0.0,
    )
