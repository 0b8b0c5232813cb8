"""Split runtime: edge emits token frames, cloud replies with predictions.

The transport is any reliable ordered byte stream; an in-process loopback
and a TCP socket pair are provided.  Prediction records are a u64 sequence
number plus one class id byte per query (255 = "no person", 254 = the frame
could not be decoded).  All header integers are little-endian.
"""

from __future__ import annotations

import socket
import struct
import threading
from dataclasses import dataclass

import numpy as np

from .matching import NO_PERSON
from .metrics import standardize
from .model import ActivityModel
from .rvq import (
    HEADER_SIZE,
    ProtocolError,
    deserialize_indices,
    frame_payload_size,
    parse_frame_header,
    rvq_decode,
    rvq_encode,
    serialize_indices,
)

NO_PERSON_WIRE = 255
ERROR_WIRE = 254


@dataclass
class BandwidthReport:
    bits_quantized: int
    bits_unquantized: int

    @property
    def reduction(self) -> float:
        return 1.0 - self.bits_quantized / self.bits_unquantized

    def __str__(self):
        return (
            f"{self.bits_quantized} vs {self.bits_unquantized} bits per sample, "
            f"reduction {100 * self.reduction:.4f}% (~{100 * self.reduction:.1f}%)"
        )


def bandwidth_report(seq_len: int, d: int, n_layers: int, codebook_size: int,
                     float_bits: int = 32) -> BandwidthReport:
    if codebook_size & (codebook_size - 1) or codebook_size < 2:
        raise ValueError("codebook size must be a power of two")
    bits = int(np.log2(codebook_size))
    return BandwidthReport(
        bits_quantized=seq_len * n_layers * bits,
        bits_unquantized=seq_len * d * float_bits,
    )


class EdgeRuntime:
    """Backbone + quantizer side; only discrete indices leave this object."""

    def __init__(self, model: ActivityModel):
        self.model = model
        model.set_training(False)

    def process(self, amplitude: np.ndarray) -> bytes:
        z = self.model.features(np.asarray(amplitude)[None]).data[0]
        encoding = rvq_encode(z, self.model.quantizer)
        return serialize_indices(encoding.indices, self.model.quantizer.codebook_size)


class CloudRuntime:
    """Codebook reconstruction + transformer side."""

    def __init__(self, model: ActivityModel):
        self.model = model
        model.set_training(False)

    def check_geometry(self, length: int, v: int, bits: int):
        q = self.model.quantizer
        if (
            length != self.model.seq_len
            or v != q.n_layers
            or bits != q.bits_per_index
        ):
            raise ProtocolError(
                "geometry-mismatch",
                f"frame geometry (l={length}, V={v}, bits={bits}) does not match "
                f"deployment (l={self.model.seq_len}, V={q.n_layers}, "
                f"bits={q.bits_per_index})",
            )

    def logits(self, frame: bytes) -> np.ndarray:
        length, v, bits = parse_frame_header(frame[:HEADER_SIZE])
        self.check_geometry(length, v, bits)
        indices = deserialize_indices(frame)
        feats = rvq_decode(indices, self.model.quantizer)
        return self.model._cloud_forward(feats)

    def process(self, frame: bytes) -> tuple[list[int], np.ndarray]:
        """(per-query class ids with empties, standardized counts)."""
        ids = self.model.logits_to_ids(self.logits(frame))
        return ids, standardize(ids, self.model.cfg.n_act)


def loopback_run(edge: EdgeRuntime, cloud: CloudRuntime, samples):
    """Drive edge -> cloud in process; returns (predictions, byte count)."""
    preds = []
    total_bytes = 0
    for s in samples:
        amp = s.amplitude if hasattr(s, "amplitude") else s
        frame = edge.process(amp)
        total_bytes += len(frame)
        preds.append(cloud.process(frame))
    return preds, total_bytes


# -- socket transport -------------------------------------------------------------


def _recv_exact(conn: socket.socket, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = conn.recv(n - len(buf))
        if not chunk:
            if buf:
                raise ConnectionError(
                    f"stream closed mid-frame ({len(buf)}/{n} bytes received)"
                )
            raise EOFError
        buf += chunk
    return buf


def encode_prediction_record(seq: int, ids: list[int]) -> bytes:
    body = bytes(NO_PERSON_WIRE if c == NO_PERSON else c for c in ids)
    return struct.pack("<Q", seq) + body


def decode_prediction_record(buf: bytes, n_queries: int) -> tuple[int, list[int]]:
    (seq,) = struct.unpack_from("<Q", buf, 0)
    ids = [NO_PERSON if b == NO_PERSON_WIRE else b for b in buf[8 : 8 + n_queries]]
    return seq, ids


class CloudServer:
    """Serves predictions to any number of edge connections concurrently."""

    def __init__(self, model: ActivityModel, host: str = "127.0.0.1", port: int = 0,
                 log=None):
        self.cloud = CloudRuntime(model)
        self.n_queries = model.cfg.n_queries
        self.log = log or (lambda msg: None)
        self.sock = socket.create_server((host, port))
        self.address = self.sock.getsockname()
        self.bytes_in = 0
        self.frames_ok = 0
        self.frames_bad = 0
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self._accept_thread: threading.Thread | None = None

    def start(self):
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()
        return self

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                conn, peer = self.sock.accept()
            except OSError:
                break
            t = threading.Thread(target=self._serve_conn, args=(conn, peer), daemon=True)
            t.start()
            self._threads.append(t)

    def _serve_conn(self, conn: socket.socket, peer):
        seq = 0
        try:
            with conn:
                while True:
                    try:
                        header = _recv_exact(conn, HEADER_SIZE)
                    except EOFError:
                        break
                    try:
                        length, v, bits = parse_frame_header(header)
                        rest = _recv_exact(conn, frame_payload_size(length, v, bits) + 4)
                        ids, _counts = self.cloud.process(header + rest)
                        with self._lock:
                            self.frames_ok += 1
                            self.bytes_in += len(header) + len(rest)
                    except ProtocolError as e:
                        self.log(f"protocol error from {peer}: {e.code}: {e}")
                        with self._lock:
                            self.frames_bad += 1
                        ids = [ERROR_WIRE] * self.n_queries
                        conn.sendall(struct.pack("<Q", seq) + bytes(ids))
                        seq += 1
                        continue
                    conn.sendall(encode_prediction_record(seq, ids))
                    seq += 1
        except ConnectionError as e:
            self.log(f"connection {peer} dropped: {e}")

    def stop(self):
        self._stop.set()
        try:
            self.sock.close()
        except OSError:
            pass
        for t in self._threads:
            t.join(timeout=2)


class EdgeClient:
    """Streams one frame per sample and collects prediction records."""

    def __init__(self, model: ActivityModel, address):
        self.edge = EdgeRuntime(model)
        self.n_queries = model.cfg.n_queries
        self.address = address
        self.bytes_out = 0

    def run(self, samples) -> list[tuple[int, list[int]]]:
        out = []
        with socket.create_connection(self.address) as conn:
            for s in samples:
                amp = s.amplitude if hasattr(s, "amplitude") else s
                frame = self.edge.process(amp)
                conn.sendall(frame)
                self.bytes_out += len(frame)
                rec = _recv_exact(conn, 8 + self.n_queries)
                out.append(decode_prediction_record(rec, self.n_queries))
        return out
