"""Synchronous coordinator/worker training loop with exact aggregation.

Reproducibility scheme: every trajectory is seeded by its global index
(base_seed + index * 2^32 + iteration), and every per-trajectory
contribution to the report sums is rounded to a fixed power-of-two grid
before accumulation.  Sums of grid multiples are exact in float64 (until
~2^33 grid units), so aggregation is associative: any partition of the
same trajectory set over any number of workers yields bit-identical
aggregated gradients, Fisher matrices, and hence policies.
"""

from __future__ import annotations

import os
import queue
import socket
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from . import npg, value as value_mod, wire
from .config import RunConfig
from .env import PushEnv, Trajectory, sample_model
from .errors import ConfigError, ConnectionLost, IterationMismatch, WorkerTimeout
from .errors import DegenerateGradient
from .policy import PolicyParams, apply_update, flatten, make_task_policy, remap_whitening, save_policy, score_matrix, unflatten
from .value import NormalEquations, ValueParams, accumulate_neq, fit, gae, value_series, whitening_from_neq

GRID = 2.0**-20
GRID_NEQ = 2.0**-16


def snap(x, grid: float = GRID):
    """Round to the nearest multiple of a power-of-two grid (exactly)."""
    return np.rint(x / grid) * grid


def trajectory_seed(base_seed: int, global_index: int, iteration: int) -> int:
    return (base_seed + global_index * 2**32 + iteration) % 2**64


def build_report(
    trajs: list[Trajectory],
    pol: PolicyParams,
    vp: ValueParams,
    cfg: RunConfig,
    iteration: int,
    worker_id: int,
) -> wire.FisherReport:
    """Grid-snapped sufficient statistics of one worker's trajectories."""
    d = pol.dim
    horizon = cfg.env.horizon
    gamma, lam = cfg.npg.gamma, cfg.npg.lam
    g_sum = np.zeros(d)
    score_sum = np.zeros(d)
    f_tri = np.zeros(wire.F_TRI_LEN)
    xtx_tri = np.zeros(wire.NEQ_TRI_LEN)
    xty = np.zeros(wire.VALUE_DIM)
    neq_count = 0
    sample_count = 0
    ret_sum = 0.0
    adv_sum = 0.0
    adv_sqsum = 0.0
    for traj in trajs:
        T = traj.actions.shape[0]
        ret_sum += snap(float(np.sum(traj.rewards)) / horizon)
        if T == 0:
            continue
        S = score_matrix(traj.observations[:T], traj.actions, pol)
        vals = value_series(vp, traj.observations, 0, horizon)
        adv = gae(traj.rewards, vals, gamma, lam)
        g_sum += snap(S.T @ adv)
        score_sum += snap(S.sum(axis=0))
        f_tri += snap(wire.pack_triangle(S.T @ S))
        neq = accumulate_neq(traj.observations, traj.rewards, gamma, horizon)
        xtx_tri += snap(wire.pack_triangle(neq.xtx), GRID_NEQ)
        xty += snap(neq.xty, GRID_NEQ)
        neq_count += neq.count
        adv_sum += snap(float(adv.sum()))
        adv_sqsum += snap(float(np.dot(adv, adv)))
        sample_count += T
    return wire.FisherReport(
        iteration=iteration,
        worker_id=worker_id,
        sample_count=sample_count,
        trajectory_count=len(trajs),
        return_sum=ret_sum,
        adv_sum=adv_sum,
        adv_sqsum=adv_sqsum,
        g_sum=g_sum,
        score_sum=score_sum,
        f_tri=f_tri,
        neq_xtx_tri=xtx_tri,
        neq_xty=xty,
        neq_count=neq_count,
    )


class TrainingWorker:
    """Rollout worker: holds the restart pool between iterations."""

    def __init__(self, cfg: RunConfig, worker_id: int):
        self.cfg = cfg
        self.worker_id = worker_id
        self.env = PushEnv(cfg.model, cfg.env)
        self.pool: list[Trajectory] | None = None
        self.offset = worker_id * cfg.dist.rollouts_per_worker
        self._hash = cfg.config_hash()

    def round(self, bc: wire.PolicyBroadcast) -> wire.FisherReport:
        if bc.config_hash != self._hash:
            raise ConfigError(
                f"worker {self.worker_id}: broadcast config hash {bc.config_hash} "
                f"does not match local config {self._hash}"
            )
        cfg = self.cfg
        like = make_task_policy(cfg.log_std_init)
        like.whiten_mean = bc.whiten_mean.copy()
        like.whiten_std = bc.whiten_std.copy()
        pol = unflatten(bc.theta, like)
        vp = ValueParams(bc.value_weights.copy(), cfg.value_ridge)
        trajs = []
        for j in range(cfg.dist.rollouts_per_worker):
            seed = trajectory_seed(cfg.dist.base_seed, self.offset + j, bc.iteration)
            rng = np.random.default_rng(seed)
            model = sample_model(cfg.model, cfg.env.ensemble, rng)
            trajs.append(self.env.rollout(pol, model, cfg.env.horizon, rng, pool=self.pool))
        report = build_report(trajs, pol, vp, cfg, bc.iteration, self.worker_id)
        self.pool = trajs
        return report


@dataclass
class AggregateResult:
    g: np.ndarray               # advantage-weighted score mean (pre-standardization)
    score_mean: np.ndarray
    F: np.ndarray               # undamped averaged Fisher
    value_neq: NormalEquations
    mean_return: float
    sample_count: int
    trajectory_count: int
    adv_mean: float
    adv_std: float


def aggregate(reports: list[wire.FisherReport]) -> AggregateResult:
    """Weighted average of worker sums, in worker-id order."""
    if not reports:
        raise ValueError("at least one report required")
    its = {r.iteration for r in reports}
    if len(its) != 1:
        raise IterationMismatch(f"reports span iterations {sorted(its)}")
    ids = [r.worker_id for r in reports]
    if len(set(ids)) != len(ids):
        raise IterationMismatch(f"duplicate worker ids in reports: {sorted(ids)}")
    reports = sorted(reports, key=lambda r: r.worker_id)
    d = wire.THETA_DIM
    g = np.zeros(d)
    sc = np.zeros(d)
    ftri = np.zeros(wire.F_TRI_LEN)
    xtx = np.zeros(wire.NEQ_TRI_LEN)
    xty = np.zeros(wire.VALUE_DIM)
    n = 0
    ntraj = 0
    nneq = 0
    ret_sum = 0.0
    adv_sum = 0.0
    adv_sq = 0.0
    for r in reports:
        g += r.g_sum
        sc += r.score_sum
        ftri += r.f_tri
        xtx += r.neq_xtx_tri
        xty += r.neq_xty
        n += r.sample_count
        ntraj += r.trajectory_count
        nneq += r.neq_count
        ret_sum += r.return_sum
        adv_sum += r.adv_sum
        adv_sq += r.adv_sqsum
    if n <= 0:
        raise ValueError("aggregated sample count must be positive")
    m = adv_sum / n
    var = adv_sq / n - m * m
    s = float(np.sqrt(var)) if var > 0 else 0.0
    return AggregateResult(
        g=g / n,
        score_mean=sc / n,
        F=wire.unpack_triangle(ftri, d) / n,
        value_neq=NormalEquations(wire.unpack_triangle(xtx, wire.VALUE_DIM), xty.copy(), nneq),
        mean_return=ret_sum / ntraj,
        sample_count=n,
        trajectory_count=ntraj,
        adv_mean=m,
        adv_std=s,
    )


def standardized_gradient(agg: AggregateResult) -> np.ndarray:
    """Gradient with batch-standardized advantages, reconstructed exactly
    from the aggregated sums: (E[s*A] - mean(A) E[s]) / std(A)."""
    s = agg.adv_std if agg.adv_std > 1e-12 else 1.0
    return (agg.g - agg.adv_mean * agg.score_mean) / s


@dataclass
class IterationRow:
    iteration: int
    mean_return: float
    grad_norm: float
    gFg: float
    step_norm: float
    eval_distance: float = float("nan")
    wall_clock: float = 0.0


class Coordinator:
    """Holds the policy/value state and applies one update per round."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.policy = make_task_policy(cfg.log_std_init)
        self.value = ValueParams(np.zeros(wire.VALUE_DIM), cfg.value_ridge)
        self.whiten_frozen = not cfg.whitening
        self._hash = cfg.config_hash()

    def broadcast(self, iteration: int) -> wire.PolicyBroadcast:
        return wire.PolicyBroadcast(
            iteration=iteration,
            config_hash=self._hash,
            theta=flatten(self.policy),
            value_weights=self.value.weights.copy(),
            whiten_mean=self.policy.whiten_mean.copy(),
            whiten_std=self.policy.whiten_std.copy(),
        )

    def process_round(self, iteration: int, reports: list[wire.FisherReport]) -> IterationRow:
        cfg = self.cfg
        agg = aggregate(reports)
        g_std = standardized_gradient(agg)
        F = npg.damp_fisher(agg.F, cfg.npg.fisher_damping)
        try:
            dtheta, q = npg.natural_step_full(g_std, F, cfg.npg.step_size)
        except DegenerateGradient:
            dtheta, q = np.zeros_like(g_std), 0.0
        self.policy = apply_update(self.policy, dtheta)
        np.clip(self.policy.log_std, cfg.log_std_min, None, out=self.policy.log_std)
        if not self.whiten_frozen:
            m, s = whitening_from_neq(agg.value_neq, wire.OBS_DIM)
            self.policy = remap_whitening(self.policy, m, s)
            self.whiten_frozen = True
        self.value = fit(agg.value_neq, cfg.value_ridge)
        return IterationRow(
            iteration=iteration,
            mean_return=agg.mean_return,
            grad_norm=float(np.linalg.norm(g_std)),
            gFg=q,
            step_norm=float(np.linalg.norm(dtheta)),
        )


class LocalChannel:
    """In-process worker channel; frames still pass through encode/decode."""

    def __init__(self, worker: TrainingWorker):
        self.worker = worker
        self._pending: wire.PolicyBroadcast | None = None

    def send(self, frame: bytes) -> None:
        msg_type, iteration, payload = wire.decode_frame(frame)
        if msg_type == wire.BROADCAST:
            self._pending = wire.PolicyBroadcast.from_payload(iteration, payload)
        elif msg_type == wire.SHUTDOWN:
            self._pending = None

    def recv_report(self, deadline: float) -> wire.FisherReport:
        if self._pending is None:
            raise ConnectionLost("no broadcast pending on local channel")
        report = self.worker.round(self._pending)
        msg_type, iteration, payload = wire.decode_frame(report.encode())
        assert msg_type == wire.REPORT
        return wire.FisherReport.from_payload(iteration, payload)

    def close(self) -> None:
        pass


class SocketChannel:
    """One connected worker; a reader thread feeds a queue (the
    collection point), the coordinator blocks on it at the barrier."""

    def __init__(self, sock: socket.socket, worker_id: int):
        self.sock = sock
        self.worker_id = worker_id
        self.q: queue.Queue = queue.Queue()
        self._thread = threading.Thread(target=self._reader, daemon=True)
        self._thread.start()

    def _reader(self) -> None:
        try:
            while True:
                self.q.put(wire.read_frame(self.sock))
        except (ConnectionLost, OSError) as e:
            self.q.put(e)

    def send(self, frame: bytes) -> None:
        wire.send_frame(self.sock, frame)

    def recv_report(self, deadline: float) -> wire.FisherReport:
        timeout = max(0.0, deadline - time.monotonic())
        try:
            item = self.q.get(timeout=timeout)
        except queue.Empty:
            raise WorkerTimeout(f"worker {self.worker_id} did not report in time") from None
        if isinstance(item, Exception):
            raise WorkerTimeout(f"worker {self.worker_id} connection failed: {item}")
        msg_type, iteration, payload = item
        if msg_type != wire.REPORT:
            raise ConnectionLost(f"expected REPORT from worker {self.worker_id}, got type {msg_type}")
        return wire.FisherReport.from_payload(iteration, payload)

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


def make_local_channels(cfg: RunConfig) -> list[LocalChannel]:
    return [LocalChannel(TrainingWorker(cfg, w)) for w in range(cfg.dist.workers)]


def parse_endpoint(ep: str) -> tuple[str, int]:
    host, _, port = ep.rpartition(":")
    if not host or not port:
        raise ConfigError(f"bad endpoint {ep!r}; expected HOST:PORT")
    return host, int(port)


def accept_workers(server: socket.socket, cfg: RunConfig) -> list[SocketChannel]:
    expected = cfg.dist.workers
    want_hash = cfg.config_hash()
    deadline = time.monotonic() + cfg.dist.hello_timeout
    pending: dict[int, SocketChannel] = {}
    while len(pending) < expected:
        timeout = deadline - time.monotonic()
        if timeout <= 0:
            raise WorkerTimeout(f"only {len(pending)}/{expected} workers registered in time")
        server.settimeout(timeout)
        try:
            sock, _addr = server.accept()
        except socket.timeout:
            raise WorkerTimeout(f"only {len(pending)}/{expected} workers registered in time") from None
        sock.settimeout(cfg.dist.hello_timeout)
        msg_type, _it, payload = wire.read_frame(sock)
        if msg_type != wire.HELLO:
            sock.close()
            raise ConnectionLost(f"expected HELLO, got message type {msg_type}")
        hello = wire.Hello.from_payload(payload)
        if hello.config_hash != want_hash:
            sock.close()
            raise ConfigError(
                f"worker {hello.worker_id} registered with a different config "
                f"(hash {hello.config_hash} != {want_hash})"
            )
        sock.settimeout(None)
        pending[hello.worker_id] = SocketChannel(sock, hello.worker_id)
    return [pending[w] for w in sorted(pending)]


def run_coordinator(
    cfg: RunConfig,
    out_dir: str,
    channels: list | None = None,
    listen: str | None = None,
    eval_every: int | None = None,
    progress: bool = False,
) -> tuple[PolicyParams, list[IterationRow]]:
    """K rounds of broadcast/collect/aggregate/step; returns the policy.

    With channels=None a TCP server is started on `listen` (or the config
    endpoint) and cfg.dist.workers HELLOs are awaited.  On WorkerTimeout a
    partial checkpoint is saved before the error propagates.
    """
    os.makedirs(out_dir, exist_ok=True)
    server = None
    owns_channels = channels is None
    if channels is None:
        host, port = parse_endpoint(listen or cfg.dist.listen)
        server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        server.bind((host, port))
        server.listen(cfg.dist.workers)
        channels = accept_workers(server, cfg)

    coord = Coordinator(cfg)
    rows: list[IterationRow] = []
    every = cfg.eval.every if eval_every is None else eval_every
    csv_path = os.path.join(out_dir, "learning_curve.csv")
    t0 = time.monotonic()
    k = 0
    try:
        with open(csv_path, "w") as csv:
            csv.write("iteration,mean_return,grad_norm,gFg,step_norm,eval_distance,wall_clock\n")
            for k in range(1, cfg.dist.iterations + 1):
                frame = coord.broadcast(k).encode()
                for ch in channels:
                    ch.send(frame)
                deadline = time.monotonic() + cfg.dist.round_timeout
                reports = [ch.recv_report(deadline) for ch in channels]
                row = coord.process_round(k, reports)
                if every > 0 and k % every == 0:
                    row.eval_distance = _training_eval(coord.policy, cfg, k)
                row.wall_clock = time.monotonic() - t0
                rows.append(row)
                csv.write(
                    f"{row.iteration},{row.mean_return!r},{row.grad_norm!r},{row.gFg!r},"
                    f"{row.step_norm!r},{row.eval_distance!r},{row.wall_clock:.3f}\n"
                )
                csv.flush()
                if progress:
                    print(
                        f"iter {k:4d}  return {row.mean_return:+.4f}  |g| {row.grad_norm:.3e}"
                        f"  step {row.step_norm:.3e}  eval {row.eval_distance:.4f}",
                        flush=True,
                    )
    except WorkerTimeout:
        save_policy(coord.policy, os.path.join(out_dir, f"policy_{max(k - 1, 0)}.json"), _ckpt_extra(coord, max(k - 1, 0)))
        for ch in channels:
            ch.close()
        if server is not None:
            server.close()
        raise
    shutdown = wire.shutdown_frame()
    for ch in channels:
        try:
            ch.send(shutdown)
        except ConnectionLost:
            pass
        if owns_channels:
            ch.close()
    if server is not None:
        server.close()
    save_policy(
        coord.policy,
        os.path.join(out_dir, f"policy_{cfg.dist.iterations}.json"),
        _ckpt_extra(coord, cfg.dist.iterations),
    )
    return coord.policy, rows


def _ckpt_extra(coord: Coordinator, iteration: int) -> dict:
    return {
        "iteration": iteration,
        "config_hash": coord._hash,
        "value_weights": coord.value.weights.tolist(),
        "value_ridge": coord.value.ridge,
    }


def _training_eval(pol: PolicyParams, cfg: RunConfig, iteration: int) -> float:
    from .evaluation import evaluate

    rng = np.random.default_rng([cfg.dist.base_seed, 0xE7A1, iteration])
    res = evaluate(pol, cfg.model, cfg.eval.rollouts, rng, cfg.env, mean_action=cfg.eval.mean_action)
    return res.mean_distance


def run_worker(endpoint: str, cfg: RunConfig, worker_id: int) -> int:
    """Connect, register, and serve rounds until SHUTDOWN. Returns exit code."""
    host, port = parse_endpoint(endpoint)
    sock = None
    err: Exception | None = None
    for attempt in range(3):
        try:
            sock = socket.create_connection((host, port), timeout=cfg.dist.hello_timeout)
            break
        except OSError as e:
            err = e
            time.sleep(0.5 * 2**attempt)
    if sock is None:
        raise ConnectionLost(f"cannot reach coordinator at {endpoint}: {err}")
    sock.settimeout(None)
    want_hash = cfg.config_hash()
    wire.send_frame(sock, wire.Hello(worker_id, want_hash).encode())
    worker = TrainingWorker(cfg, worker_id)
    try:
        while True:
            msg_type, iteration, payload = wire.read_frame(sock)
            if msg_type == wire.SHUTDOWN:
                return 0
            if msg_type != wire.BROADCAST:
                raise ConnectionLost(f"unexpected message type {msg_type}")
            bc = wire.PolicyBroadcast.from_payload(iteration, payload)
            report = worker.round(bc)  # raises ConfigError on hash drift
            wire.send_frame(sock, report.encode())
    finally:
        sock.close()


def train_serial(cfg: RunConfig, progress: bool = False) -> tuple[PolicyParams, list[IterationRow]]:
    """Plain single-process reference trainer (no runtime plumbing).

    Rolls out the same globally-seeded trajectory set and applies the
    same grid-snapped accumulation in ascending trajectory order, so it
    must produce bit-identical policies to a one-worker runtime.
    """
    env = PushEnv(cfg.model, cfg.env)
    pol = make_task_policy(cfg.log_std_init)
    vp = ValueParams(np.zeros(wire.VALUE_DIM), cfg.value_ridge)
    frozen = not cfg.whitening
    pool: list[Trajectory] | None = None
    n_total = cfg.dist.workers * cfg.dist.rollouts_per_worker
    rows: list[IterationRow] = []
    for k in range(1, cfg.dist.iterations + 1):
        trajs = []
        for gidx in range(n_total):
            rng = np.random.default_rng(trajectory_seed(cfg.dist.base_seed, gidx, k))
            model = sample_model(cfg.model, cfg.env.ensemble, rng)
            trajs.append(env.rollout(pol, model, cfg.env.horizon, rng, pool=pool))
        pool = trajs
        report = build_report(trajs, pol, vp, cfg, k, 0)
        agg = aggregate([report])
        g_std = standardized_gradient(agg)
        F = npg.damp_fisher(agg.F, cfg.npg.fisher_damping)
        try:
            dtheta, q = npg.natural_step_full(g_std, F, cfg.npg.step_size)
        except DegenerateGradient:
            dtheta, q = np.zeros_like(g_std), 0.0
        pol = apply_update(pol, dtheta)
        np.clip(pol.log_std, cfg.log_std_min, None, out=pol.log_std)
        if not frozen:
            m, s = whitening_from_neq(agg.value_neq, wire.OBS_DIM)
            pol = remap_whitening(pol, m, s)
            frozen = True
        vp = fit(agg.value_neq, cfg.value_ridge)
        rows.append(
            IterationRow(
                iteration=k,
                mean_return=agg.mean_return,
                grad_norm=float(np.linalg.norm(g_std)),
                gFg=q,
                step_norm=float(np.linalg.norm(dtheta)),
            )
        )
        if progress:
            print(f"[serial] iter {k:4d}  return {agg.mean_return:+.4f}", flush=True)
    return pol, rows
