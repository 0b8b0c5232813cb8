"""Residual vector quantizer and its bit-exact index serialization.

V codebooks of K prototypes each quantize successive residuals of the
backbone features.  The edge transmits only the selected indices; the cloud
reconstructs the quantized features from synchronized codebooks.  Codebook
sizes are restricted to powers of two so log2(K)-bit packing is exact.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

FRAME_MAGIC = b"AMTK"
FRAME_VERSION = 1


class ProtocolError(ValueError):
    """Wire-format rejection with a stable error code."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def capacity(k: int, v: int) -> int:
    """Distinct quantization patterns representable by V layers of size K."""
    if k < 1 or v < 1:
        raise ValueError("capacity requires K, V >= 1")
    out = k**v
    if out >= 2**63:
        raise OverflowError(f"capacity {k}^{v} exceeds 2^63")
    return out


@dataclass
class RvqEncoding:
    """Result of residual encoding.

    indices are 1-based (1..K), shaped (V, ...positions).  quantized is the
    prototype sum B; residual is what remains after the last layer.
    """

    indices: np.ndarray
    quantized: np.ndarray
    residual: np.ndarray
    layer_residuals: list[np.ndarray]  # r^(v) entering each layer
    layer_contributions: list[np.ndarray]  # b^(v), zeros for dropped layers
    dropped: np.ndarray  # (V,) bool


class RvqCodebooks:
    """V codebooks of K prototypes of dimension d, trainable."""

    def __init__(
        self,
        n_layers: int,
        codebook_size: int,
        dim: int,
        rng: np.random.Generator | None = None,
        commitment_cost: float = 0.5,
        dropout_prob: float = 0.2,
        squared_norms: bool = False,
        encoder_pull: float = 1.0,
    ):
        if codebook_size < 2:
            raise ValueError("codebook size must be >= 2")
        if codebook_size & (codebook_size - 1):
            raise ValueError("codebook size must be a power of two")
        if n_layers < 1:
            raise ValueError("need at least one RVQ layer")
        rng = rng or np.random.default_rng(0)
        self.n_layers = n_layers
        self.codebook_size = codebook_size
        self.dim = dim
        self.commitment_cost = commitment_cost
        self.dropout_prob = dropout_prob
        self.squared_norms = squared_norms
        self.encoder_pull = encoder_pull
        self.codebooks = Tensor(
            rng.normal(0, 0.5, (n_layers, codebook_size, dim)), requires_grad=True
        )
        self._initialized = False

    @property
    def bits_per_index(self) -> int:
        return int(np.log2(self.codebook_size))

    def parameters(self, prefix="rvq"):
        return {f"{prefix}.codebooks": self.codebooks}

    def init_from_data(self, z: np.ndarray, rng: np.random.Generator):
        """Seed each codebook from residualized rows of a data batch."""
        flat = z.reshape(-1, self.dim).copy()
        k = self.codebook_size
        for v in range(self.n_layers):
            rows = flat[rng.choice(flat.shape[0], size=k, replace=flat.shape[0] < k)]
            rows = rows + 0.01 * rng.normal(size=rows.shape)
            self.codebooks.data[v] = rows
            idx = nearest_prototype(flat, self.codebooks.data[v])
            flat = flat - self.codebooks.data[v][idx]
        self._initialized = True


def nearest_prototype(x: np.ndarray, codebook: np.ndarray) -> np.ndarray:
    """0-based index of the squared-Euclidean nearest prototype per row.

    Ties break toward the lowest index (argmin semantics).
    """
    d2 = ((x[..., None, :] - codebook) ** 2).sum(axis=-1)
    return d2.argmin(axis=-1)


def quantize_layer(x: np.ndarray, codebook: np.ndarray) -> tuple[int, np.ndarray]:
    """Single-vector nearest-prototype lookup; returns (1-based index, prototype)."""
    idx = int(nearest_prototype(np.asarray(x), codebook))
    return idx + 1, codebook[idx]


def rvq_encode(
    z: np.ndarray,
    quantizer: RvqCodebooks,
    dropout_mask: np.ndarray | None = None,
) -> RvqEncoding:
    """Progressively quantize z (..., d) through all layers.

    Dropped layers contribute zero and pass their residual through unchanged;
    their index slots are recorded as 1 but carry no signal.
    """
    z = np.asarray(z, dtype=np.float64)
    books = quantizer.codebooks.data
    v_layers = quantizer.n_layers
    if dropout_mask is None:
        dropout_mask = np.zeros(v_layers, dtype=bool)
    residual = z.copy()
    quantized = np.zeros_like(z)
    indices = np.zeros((v_layers,) + z.shape[:-1], dtype=np.int64)
    layer_residuals = []
    layer_contributions = []
    for v in range(v_layers):
        layer_residuals.append(residual.copy())
        if dropout_mask[v]:
            contribution = np.zeros_like(z)
            indices[v] = 1
        else:
            idx = nearest_prototype(residual, books[v])
            contribution = books[v][idx]
            indices[v] = idx + 1
            residual = residual - contribution
        layer_contributions.append(contribution)
        quantized += contribution
    return RvqEncoding(
        indices=indices,
        quantized=quantized,
        residual=residual,
        layer_residuals=layer_residuals,
        layer_contributions=layer_contributions,
        dropped=dropout_mask.copy(),
    )


def rvq_decode(indices: np.ndarray, quantizer: RvqCodebooks) -> np.ndarray:
    """Sum the addressed prototypes; bit-identical to the encoder-side B."""
    indices = np.asarray(indices)
    books = quantizer.codebooks.data
    if indices.shape[0] != quantizer.n_layers:
        raise ProtocolError(
            "geometry-mismatch",
            f"{indices.shape[0]} index layers, expected {quantizer.n_layers}",
        )
    if indices.min() < 1 or indices.max() > quantizer.codebook_size:
        raise ProtocolError(
            "index-range",
            f"index outside 1..{quantizer.codebook_size}",
        )
    out = np.zeros(indices.shape[1:] + (quantizer.dim,))
    for v in range(quantizer.n_layers):
        out += books[v][indices[v] - 1]
    return out


def rvq_loss(z: Tensor, encoding: RvqEncoding, quantizer: RvqCodebooks) -> Tensor:
    """Codebook-learning loss.

    First term pulls the encoder output toward the (stopped) selected
    prototypes; second term, weighted by the commitment cost, pulls the
    prototypes toward the (stopped) residuals.  Norms are unsquared by
    default, with a squared variant behind ``squared_norms``.
    Summed over layers and positions; batched inputs are averaged over the
    leading axis.

    ``encoder_pull`` scales only the gradient the first term sends into the
    encoder (the loss value is unchanged).  At full strength that term's
    unsquared norm pushes features onto prototypes with constant-magnitude
    gradients, which can drown the task gradient; small models train with a
    reduced or zero pull and rely on the straight-through path instead.
    """
    beta = quantizer.commitment_cost
    pull = quantizer.encoder_pull
    if pull != 1.0:
        z = z * pull + T.stop_gradient(z) * (1.0 - pull)
    batched = z.ndim == 3
    total = None
    for v in range(quantizer.n_layers):
        if encoding.dropped[v]:
            continue
        b_const = encoding.layer_contributions[v]
        r_const = encoding.layer_residuals[v]
        # residual as a function of the encoder path only; the offset is the
        # (constant) negated sum of earlier prototype contributions
        prefix = r_const - encoding.layer_residuals[0]
        r = z + prefix
        # gather prototypes differentiably for the codebook term
        idx = encoding.indices[v] - 1
        flat_idx = v * quantizer.codebook_size + idx
        books_flat = quantizer.codebooks.reshape(
            quantizer.n_layers * quantizer.codebook_size, quantizer.dim
        )
        b = T.embedding(books_flat, flat_idx)
        if quantizer.squared_norms:
            t1 = T.tsum(T.square(r - b_const), axis=-1)
            t2 = T.tsum(T.square(T.stop_gradient(r) - b), axis=-1)
        else:
            t1 = T.l2norm(r - b_const)
            t2 = T.l2norm(T.stop_gradient(r) - b)
        term = T.tsum(t1 + beta * t2)
        total = term if total is None else total + term
    if total is None:
        total = Tensor(0.0)
    if batched:
        total = total * (1.0 / z.shape[0])
    return total


def straight_through(z: Tensor, quantized: np.ndarray) -> Tensor:
    """Forward the quantized values; pass upstream gradient to z unchanged."""
    if z.shape != quantized.shape:
        raise T.ShapeError(
            f"straight_through: shapes differ, {z.shape} vs {quantized.shape}"
        )
    return Tensor.from_op(quantized.copy(), (z,), lambda g: (g,), "straight_through")


# -- TokenFrame wire format ----------------------------------------------------------


def _pack_layer(indices0: np.ndarray, bits: int) -> bytes:
    """Pack 0-based indices big-endian within bytes, padded to a byte boundary."""
    bit_rows = (indices0[:, None] >> np.arange(bits - 1, -1, -1)) & 1
    return np.packbits(bit_rows.astype(np.uint8).ravel()).tobytes()


def _unpack_layer(payload: bytes, length: int, bits: int) -> np.ndarray:
    raw = np.unpackbits(np.frombuffer(payload, dtype=np.uint8))
    need = length * bits
    if raw.size < need:
        raise ProtocolError("payload-length", "packed layer too short")
    rows = raw[:need].reshape(length, bits).astype(np.int64)
    return rows @ (1 << np.arange(bits - 1, -1, -1))


def serialize_indices(indices: np.ndarray, codebook_size: int) -> bytes:
    """Build a TokenFrame from 1-based indices shaped (V, l)."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.ndim != 2:
        raise ValueError(f"expected (V, l) indices, got shape {indices.shape}")
    if codebook_size & (codebook_size - 1) or codebook_size < 2:
        raise ValueError("codebook size must be a power of two >= 2")
    if indices.min() < 1 or indices.max() > codebook_size:
        raise ValueError(f"index outside 1..{codebook_size}")
    v, length = indices.shape
    bits = int(np.log2(codebook_size))
    payload = b"".join(_pack_layer(indices[i] - 1, bits) for i in range(v))
    header = FRAME_MAGIC + struct.pack("<HIBB", FRAME_VERSION, length, v, bits)
    return header + payload + struct.pack("<I", zlib.crc32(payload))


HEADER_SIZE = 12  # magic + version + length + V + bits


def frame_payload_size(length: int, n_layers: int, bits: int) -> int:
    per_layer = (length * bits + 7) // 8
    return per_layer * n_layers


def parse_frame_header(header: bytes) -> tuple[int, int, int]:
    """Validate the fixed-size header; returns (l, V, bits per index)."""
    if len(header) < HEADER_SIZE:
        raise ProtocolError("truncated", "frame header incomplete")
    if header[:4] != FRAME_MAGIC:
        raise ProtocolError("bad-magic", f"expected {FRAME_MAGIC!r}, got {header[:4]!r}")
    version, length, v, bits = struct.unpack_from("<HIBB", header, 4)
    if version != FRAME_VERSION:
        raise ProtocolError("bad-version", f"unsupported frame version {version}")
    return length, v, bits


def deserialize_indices(frame: bytes) -> np.ndarray:
    """Recover 1-based (V, l) indices from a TokenFrame."""
    length, v, bits = parse_frame_header(frame[:HEADER_SIZE])
    psize = frame_payload_size(length, v, bits)
    if len(frame) != HEADER_SIZE + psize + 4:
        raise ProtocolError(
            "payload-length",
            f"frame is {len(frame)} bytes, expected {HEADER_SIZE + psize + 4}",
        )
    payload = frame[HEADER_SIZE : HEADER_SIZE + psize]
    (crc,) = struct.unpack_from("<I", frame, HEADER_SIZE + psize)
    if crc != zlib.crc32(payload):
        raise ProtocolError("crc", "payload CRC mismatch")
    per_layer = psize // v
    out = np.empty((v, length), dtype=np.int64)
    for i in range(v):
        out[i] = _unpack_layer(payload[i * per_layer : (i + 1) * per_layer], length, bits) + 1
    return out
