"""Video tensor ingestion, preprocessing, and synthetic sequence generation.

Two on-disk containers are understood. The native one is a minimal
self-describing binary (magic ``MMV1RAW0``) holding one tensor; the second
is the common .npy container, version 1.0 only, C-order only, so that
published datasets can be read directly. Pixels are stored either as u8
(divided by 255 on load) or as floats already in [0, 1].

Downscaling is plain bilinear decimation with pixel centers aligned:
output pixel (i, j) samples the input at ((i+0.5)f - 0.5, (j+0.5)f - 0.5).
For even factors that is the mean of the central 2x2 pixels of each block.
No anti-aliasing filter is applied.
"""

from __future__ import annotations

import ast
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, FormatError, ParameterError

__all__ = [
    "RAW_MAGIC",
    "RAW_VERSION",
    "VideoDataset",
    "Splits",
    "SyntheticSpec",
    "write_raw",
    "read_raw",
    "read_npy",
    "load_video_tensor",
    "bilinear_downscale",
    "make_splits",
    "vectorize",
    "unvectorize",
    "generate_synthetic",
    "synthetic_batch",
]

RAW_MAGIC = b"MMV1RAW0"
RAW_VERSION = 1
_DTYPE_CODES = {0: np.dtype("u1"), 1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODE_OF_DTYPE = {np.dtype("u1"): 0, np.dtype("<f4"): 1, np.dtype("<f8"): 2}

_NPY_MAGIC = b"\x93NUMPY"
_NPY_DESCRS = {"|u1": np.dtype("u1"), "<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}


# ---------------------------------------------------------------------------
# raw container

def write_raw(path, arr):
    """Write one tensor as magic, version (u32), dtype code (u8), rank (u8),
    shape (u32 each), C-order payload; everything little-endian."""
    arr = np.asarray(arr)
    dtype = arr.dtype.newbyteorder("<") if arr.dtype.kind == "f" else arr.dtype
    if dtype not in _CODE_OF_DTYPE:
        raise ParameterError(f"unsupported dtype {arr.dtype}; use u8, f32, or f64")
    if arr.ndim > 255:
        raise ParameterError(f"rank {arr.ndim} does not fit the header")
    chunks = [
        RAW_MAGIC,
        struct.pack("<I", RAW_VERSION),
        struct.pack("<BB", _CODE_OF_DTYPE[dtype], arr.ndim),
        struct.pack(f"<{arr.ndim}I", *arr.shape),
        arr.astype(dtype, copy=False).tobytes(order="C"),
    ]
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def read_raw(path):
    """Read a tensor written by write_raw; bit-exact round trip."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != RAW_MAGIC:
        raise FormatError(f"bad magic at offset 0: {blob[:8]!r}")
    offset = 8

    def take(count, what):
        nonlocal offset
        if offset + count > len(blob):
            raise FormatError(f"truncated {what} at offset {offset}")
        piece = blob[offset:offset + count]
        offset += count
        return piece

    (version,) = struct.unpack("<I", take(4, "version"))
    if version != RAW_VERSION:
        raise FormatError(f"unsupported version {version}")
    code, rank = struct.unpack("<BB", take(2, "dtype/rank"))
    if code not in _DTYPE_CODES:
        raise FormatError(f"unknown dtype code {code}")
    shape = struct.unpack(f"<{rank}I", take(4 * rank, "shape"))
    dtype = _DTYPE_CODES[code]
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    payload = take(count * dtype.itemsize, "payload")
    if offset != len(blob):
        raise FormatError(f"{len(blob) - offset} trailing bytes at offset {offset}")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


# ---------------------------------------------------------------------------
# npy container (read-only, version 1.0, C-order)

def read_npy(path):
    """Strict .npy reader: version 1.0, dtypes u1/f4/f8, C order only."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:6] != _NPY_MAGIC:
        raise FormatError(f"bad magic at offset 0: {blob[:6]!r}")
    if len(blob) < 10:
        raise FormatError("truncated header")
    major, minor = blob[6], blob[7]
    if (major, minor) != (1, 0):
        raise FormatError(f"unsupported version {major}.{minor}; only 1.0 is accepted")
    (header_len,) = struct.unpack("<H", blob[8:10])
    end = 10 + header_len
    if len(blob) < end:
        raise FormatError(f"truncated header at offset 10 (need {header_len} bytes)")
    try:
        header = ast.literal_eval(blob[10:end].decode("latin1").strip())
    except (ValueError, SyntaxError) as exc:
        raise FormatError(f"unparseable header: {exc}") from exc
    if not isinstance(header, dict) or set(header) != {"descr", "fortran_order", "shape"}:
        raise FormatError(f"header must have descr/fortran_order/shape, got {header!r}")
    if header["fortran_order"]:
        raise FormatError("fortran_order=True is not accepted; store the array in C order")
    descr = header["descr"]
    if descr not in _NPY_DESCRS:
        raise FormatError(f"unsupported descr {descr!r}; accepted: {sorted(_NPY_DESCRS)}")
    shape = header["shape"]
    if not isinstance(shape, tuple) or not all(isinstance(v, int) and v >= 0 for v in shape):
        raise FormatError(f"bad shape {shape!r}")
    dtype = _NPY_DESCRS[descr]
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    payload = blob[end:]
    if len(payload) != count * dtype.itemsize:
        raise FormatError(
            f"payload holds {len(payload)} bytes, shape {shape} needs {count * dtype.itemsize}"
        )
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


# ---------------------------------------------------------------------------
# datasets

@dataclass
class Splits:
    """Disjoint index arrays partitioning a dataset."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


@dataclass
class VideoDataset:
    """Pixel tensor (num_sequences, T, H, W) with values in [0, 1]."""

    tensor: np.ndarray
    splits: Splits | None = None

    def __post_init__(self):
        self.tensor = np.asarray(self.tensor, dtype=np.float64)
        if self.tensor.ndim != 4:
            raise DimensionError(f"tensor must be (N, T, H, W), got {self.tensor.shape}")
        if self.tensor.size and (self.tensor.min() < 0.0 or self.tensor.max() > 1.0):
            raise FormatError("pixel values must lie in [0, 1]")

    @property
    def num_sequences(self):
        return self.tensor.shape[0]

    @property
    def num_frames(self):
        return self.tensor.shape[1]

    @property
    def frame_shape(self):
        return self.tensor.shape[2:]


def load_video_tensor(path, format=None):
    """Load a video tensor from either container into a VideoDataset.

    format is "raw_v1" or "npy_v1"; unset, it is inferred from the file
    extension (.npy and everything else). Rank-3 input (T, H, W) is read
    as a single sequence; u8 pixels are divided by 255.
    """
    if format is None:
        format = "npy_v1" if str(path).endswith(".npy") else "raw_v1"
    if format == "raw_v1":
        arr = read_raw(path)
    elif format == "npy_v1":
        arr = read_npy(path)
    else:
        raise ParameterError(f"unknown format {format!r}")
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise FormatError(f"video tensor must be rank 3 or 4, got shape {arr.shape}")
    if arr.dtype == np.dtype("u1"):
        tensor = arr.astype(np.float64) / 255.0
    else:
        tensor = arr.astype(np.float64)
    return VideoDataset(tensor=tensor)


# ---------------------------------------------------------------------------
# preprocessing

def _decimation_weights(size, factor):
    out = size // factor
    W = np.zeros((out, size))
    for i in range(out):
        p = (i + 0.5) * factor - 0.5
        i0 = int(np.floor(p))
        w = p - i0
        W[i, i0] += 1.0 - w
        W[i, min(i0 + 1, size - 1)] += w
    return W


def bilinear_downscale(frame, factor):
    """Decimate the trailing two axes by an integer factor.

    Accepts a single (H, W) frame or any (..., H, W) stack; H and W must be
    divisible by the factor.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if int(factor) != factor or factor < 1:
        raise ParameterError(f"factor must be a positive integer, got {factor!r}")
    factor = int(factor)
    if frame.ndim < 2:
        raise DimensionError(f"need at least 2 axes, got shape {frame.shape}")
    H, W = frame.shape[-2:]
    if H % factor or W % factor:
        raise DimensionError(f"{H}x{W} is not divisible by {factor}")
    if factor == 1:
        return frame.copy()
    Wr = _decimation_weights(H, factor)
    Wc = _decimation_weights(W, factor)
    return Wr @ frame @ Wc.T


def make_splits(num_sequences, sizes, seed):
    """Seeded permutation of range(num_sequences), partitioned in order
    into train/val/test of the given sizes."""
    a, b, c = (int(v) for v in sizes)
    if min(a, b, c) < 0 or a + b + c > num_sequences:
        raise ParameterError(
            f"split sizes {sizes} do not fit {num_sequences} sequences"
        )
    perm = np.random.default_rng(seed).permutation(num_sequences)
    return Splits(train=perm[:a], val=perm[a:a + b], test=perm[a + b:a + b + c])


def vectorize(dataset):
    """Row-major flatten of each frame: (N, T, H, W) -> signals (N, H*W, T)."""
    tensor = dataset.tensor if isinstance(dataset, VideoDataset) else np.asarray(dataset)
    if tensor.ndim != 4:
        raise DimensionError(f"expected (N, T, H, W), got {tensor.shape}")
    N, T, H, W = tensor.shape
    return np.ascontiguousarray(tensor.reshape(N, T, H * W).transpose(0, 2, 1))


def unvectorize(signals, frame_shape):
    """Inverse of vectorize: (N, n, T) -> (N, T, H, W) with n = H*W."""
    signals = np.asarray(signals)
    H, W = frame_shape
    if signals.ndim != 3 or signals.shape[1] != H * W:
        raise DimensionError(f"expected (N, {H * W}, T), got {signals.shape}")
    N, _, T = signals.shape
    return np.ascontiguousarray(signals.transpose(0, 2, 1).reshape(N, T, H, W))


# ---------------------------------------------------------------------------
# synthetic sequences

@dataclass
class SyntheticSpec:
    """Shape and sparsity of generated code sequences.

    s0 counts the nonzeros of the first code; innovation_sparsity counts
    the nonzeros of h_t - G h_{t-1} for every later frame. Amplitudes are
    drawn uniformly from amplitude_range with random sign, so the bounds
    must be positive for the counts to be exact.
    """

    n: int
    d: int
    m: int
    T: int
    s0: int
    innovation_sparsity: int
    amplitude_range: tuple = (0.5, 1.5)
    seed: int = 0

    def __post_init__(self):
        for name in ("n", "d", "m", "T"):
            if int(getattr(self, name)) != getattr(self, name) or getattr(self, name) < 1:
                raise ParameterError(f"{name} must be a positive integer")
        for name in ("s0", "innovation_sparsity"):
            value = getattr(self, name)
            if int(value) != value or not 0 <= value <= self.d:
                raise ParameterError(f"{name} must be an integer in [0, {self.d}], got {value!r}")
        lo, hi = self.amplitude_range
        if not 0.0 < lo <= hi:
            raise ParameterError(f"amplitude_range must satisfy 0 < lo <= hi, got {self.amplitude_range!r}")


def _sparse_draw(rng, d, count, lo, hi):
    e = np.zeros(d)
    if count:
        idx = rng.choice(d, size=count, replace=False)
        amps = rng.uniform(lo, hi, count) * rng.choice([-1.0, 1.0], count)
        e[idx] = amps
    return e


def generate_synthetic(spec, G, D, rng=None):
    """One sequence following the sparse linear dynamics exactly.

    h_1 has spec.s0 nonzeros; h_t = G h_{t-1} + e_t with e_t having exactly
    spec.innovation_sparsity nonzeros; s_t = D h_t. Returns (signals (n, T),
    codes (d, T)); deterministic in spec.seed when rng is not supplied.
    """
    G = np.asarray(G, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    if G.shape != (spec.d, spec.d):
        raise DimensionError(f"G must be {spec.d}x{spec.d}, got {G.shape}")
    if D.shape != (spec.n, spec.d):
        raise DimensionError(f"D must be {spec.n}x{spec.d}, got {D.shape}")
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    lo, hi = spec.amplitude_range
    h = np.zeros((spec.d, spec.T))
    h[:, 0] = _sparse_draw(rng, spec.d, spec.s0, lo, hi)
    for t in range(1, spec.T):
        h[:, t] = G @ h[:, t - 1] + _sparse_draw(rng, spec.d, spec.innovation_sparsity, lo, hi)
    return D @ h, h


def synthetic_batch(spec, G, D, num_sequences):
    """Stack of independent sequences, child-seeded per sequence so any
    prefix of the batch is reproducible on its own.

    Returns (signals (N, n, T), codes (N, d, T)).
    """
    if int(num_sequences) != num_sequences or num_sequences < 1:
        raise ParameterError(f"num_sequences must be a positive integer, got {num_sequences!r}")
    signals = np.zeros((num_sequences, spec.n, spec.T))
    codes = np.zeros((num_sequences, spec.d, spec.T))
    for i in range(int(num_sequences)):
        rng = np.random.default_rng((spec.seed, 0x0DA7A, i))
        signals[i], codes[i] = generate_synthetic(spec, G, D, rng=rng)
    return signals, codes
