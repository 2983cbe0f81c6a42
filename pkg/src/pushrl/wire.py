"""Binary message protocol for the coordinator/worker training loop.

Frame layout: magic "NPG1" (4 bytes) | message type (1 byte) | iteration
(u32 LE) | payload length in bytes (u64 LE) | payload.  Payloads are
concatenated float64 LE values in the field order documented on each
message class.  Report size is independent of how many rollouts a worker
performs.
"""

from __future__ import annotations

import socket
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConnectionLost

MAGIC = b"NPG1"
HELLO = 1
BROADCAST = 2
REPORT = 3
SHUTDOWN = 4

_HEADER = struct.Struct("<4sBIQ")

THETA_DIM = 108
VALUE_DIM = 37
OBS_DIM = 16
F_TRI_LEN = THETA_DIM * (THETA_DIM + 1) // 2      # 5886
NEQ_TRI_LEN = VALUE_DIM * (VALUE_DIM + 1) // 2    # 703

_TRIU_T = np.triu_indices(THETA_DIM)
_TRIU_V = np.triu_indices(VALUE_DIM)


def pack_triangle(M: np.ndarray) -> np.ndarray:
    """Upper triangle, row-major."""
    d = M.shape[0]
    idx = _TRIU_T if d == THETA_DIM else (_TRIU_V if d == VALUE_DIM else np.triu_indices(d))
    return np.ascontiguousarray(M[idx])


def unpack_triangle(tri: np.ndarray, d: int) -> np.ndarray:
    idx = _TRIU_T if d == THETA_DIM else (_TRIU_V if d == VALUE_DIM else np.triu_indices(d))
    M = np.zeros((d, d))
    M[idx] = tri
    M.T[idx] = tri
    return M


def encode_frame(msg_type: int, iteration: int, payload: np.ndarray) -> bytes:
    data = np.ascontiguousarray(payload, dtype="<f8").tobytes()
    return _HEADER.pack(MAGIC, msg_type, iteration, len(data)) + data


def decode_frame(buf: bytes) -> tuple[int, int, np.ndarray]:
    if len(buf) < _HEADER.size:
        raise ValueError("frame shorter than header")
    magic, msg_type, iteration, n = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if len(buf) != _HEADER.size + n:
        raise ValueError(f"frame length mismatch: header says {n} payload bytes")
    payload = np.frombuffer(buf, dtype="<f8", offset=_HEADER.size).copy()
    return msg_type, iteration, payload


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    got = 0
    while got < n:
        chunk = sock.recv(n - got)
        if not chunk:
            raise ConnectionLost("peer closed the connection")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def read_frame(sock: socket.socket) -> tuple[int, int, np.ndarray]:
    head = _recv_exact(sock, _HEADER.size)
    magic, msg_type, iteration, n = _HEADER.unpack(head)
    if magic != MAGIC:
        raise ConnectionLost(f"bad magic {magic!r}")
    data = _recv_exact(sock, n) if n else b""
    payload = np.frombuffer(data, dtype="<f8").copy()
    return msg_type, iteration, payload


def send_frame(sock: socket.socket, frame: bytes) -> None:
    try:
        sock.sendall(frame)
    except OSError as e:
        raise ConnectionLost(str(e)) from e


@dataclass
class Hello:
    """Payload order: worker_id, config_hash."""

    worker_id: int
    config_hash: float

    def encode(self) -> bytes:
        return encode_frame(HELLO, 0, np.array([float(self.worker_id), self.config_hash]))

    @staticmethod
    def from_payload(payload: np.ndarray) -> "Hello":
        return Hello(worker_id=int(payload[0]), config_hash=float(payload[1]))


@dataclass
class PolicyBroadcast:
    """Payload order: config_hash, theta (108), value weights (37),
    whitening mean (16), whitening std (16)."""

    iteration: int
    config_hash: float
    theta: np.ndarray
    value_weights: np.ndarray
    whiten_mean: np.ndarray
    whiten_std: np.ndarray

    SIZE = 1 + THETA_DIM + VALUE_DIM + 2 * OBS_DIM

    def encode(self) -> bytes:
        payload = np.concatenate(
            [[self.config_hash], self.theta, self.value_weights, self.whiten_mean, self.whiten_std]
        )
        assert payload.shape[0] == self.SIZE
        return encode_frame(BROADCAST, self.iteration, payload)

    @staticmethod
    def from_payload(iteration: int, payload: np.ndarray) -> "PolicyBroadcast":
        if payload.shape[0] != PolicyBroadcast.SIZE:
            raise ValueError(f"broadcast payload must have {PolicyBroadcast.SIZE} floats")
        o = 1
        theta = payload[o : o + THETA_DIM]
        o += THETA_DIM
        vw = payload[o : o + VALUE_DIM]
        o += VALUE_DIM
        wm = payload[o : o + OBS_DIM]
        o += OBS_DIM
        ws = payload[o : o + OBS_DIM]
        return PolicyBroadcast(
            iteration=iteration,
            config_hash=float(payload[0]),
            theta=theta.copy(),
            value_weights=vw.copy(),
            whiten_mean=wm.copy(),
            whiten_std=ws.copy(),
        )


@dataclass
class FisherReport:
    """Per-worker sufficient statistics for one iteration.

    Payload order: worker_id, sample_count, trajectory_count, return_sum,
    adv_sum, adv_sqsum, g_sum (108), score_sum (108), F_sum upper
    triangle (5886), value X'X upper triangle (703), value X'y (37),
    value count.  All sums are unnormalized and grid-snapped so that
    summation over workers is exact in float64.
    """

    iteration: int
    worker_id: int
    sample_count: int
    trajectory_count: int
    return_sum: float
    adv_sum: float
    adv_sqsum: float
    g_sum: np.ndarray
    score_sum: np.ndarray
    f_tri: np.ndarray
    neq_xtx_tri: np.ndarray
    neq_xty: np.ndarray
    neq_count: int

    SIZE = 6 + THETA_DIM + THETA_DIM + F_TRI_LEN + NEQ_TRI_LEN + VALUE_DIM + 1

    def encode(self) -> bytes:
        payload = np.concatenate(
            [
                [
                    float(self.worker_id),
                    float(self.sample_count),
                    float(self.trajectory_count),
                    self.return_sum,
                    self.adv_sum,
                    self.adv_sqsum,
                ],
                self.g_sum,
                self.score_sum,
                self.f_tri,
                self.neq_xtx_tri,
                self.neq_xty,
                [float(self.neq_count)],
            ]
        )
        assert payload.shape[0] == self.SIZE
        return encode_frame(REPORT, self.iteration, payload)

    @staticmethod
    def from_payload(iteration: int, payload: np.ndarray) -> "FisherReport":
        if payload.shape[0] != FisherReport.SIZE:
            raise ValueError(f"report payload must have {FisherReport.SIZE} floats")
        o = 6
        g = payload[o : o + THETA_DIM]
        o += THETA_DIM
        sc = payload[o : o + THETA_DIM]
        o += THETA_DIM
        ftri = payload[o : o + F_TRI_LEN]
        o += F_TRI_LEN
        xtx = payload[o : o + NEQ_TRI_LEN]
        o += NEQ_TRI_LEN
        xty = payload[o : o + VALUE_DIM]
        o += VALUE_DIM
        return FisherReport(
            iteration=iteration,
            worker_id=int(payload[0]),
            sample_count=int(payload[1]),
            trajectory_count=int(payload[2]),
            return_sum=float(payload[3]),
            adv_sum=float(payload[4]),
            adv_sqsum=float(payload[5]),
            g_sum=g.copy(),
            score_sum=sc.copy(),
            f_tri=ftri.copy(),
            neq_xtx_tri=xtx.copy(),
            neq_xty=xty.copy(),
            neq_count=int(payload[o]),
        )


def shutdown_frame(iteration: int = 0) -> bytes:
    return encode_frame(SHUTDOWN, iteration, np.empty(0))
