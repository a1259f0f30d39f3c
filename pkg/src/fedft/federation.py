"""FedFT protocol orchestration: pre-train, distribute, fine-tune, aggregate.

The server pre-trains the full network on proxy data, then runs communication
rounds: it ships the global parameters to every client, each client fine-tunes
its trailing FC layers on its local shard, and the server merges the returned
tensors with sample-count-weighted averaging and evaluates on a held-out set.
"""

from __future__ import annotations

import threading
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import nn
from .data import DatasetBundle, Partition
from .errors import InputError, ProtocolError, TransportError
from .metrics import (
    ExperimentReport,
    RoundReport,
    estimate_memory,
    time_block,
)
from .transport import (
    ClientUpdateMsg,
    EvalRequest,
    GlobalParams,
    Hello,
    LoopbackChannel,
    Message,
    Shutdown,
    make_loopback_pair,
)

FROZEN_CHUNK_ROWS = 4096
EVAL_CHUNK_ROWS = 8192


@dataclass(frozen=True)
class Seeds:
    init: int = 1
    partition: int = 2
    shuffle: int = 3


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str  # centralized | fedft | fedavg_full
    arch: nn.Architecture
    fine_tune: nn.FineTuneConfig
    n_clients: int = 3
    n_rounds: int = 10
    pretrain_epochs: int = 10
    seeds: Seeds = field(default_factory=Seeds)
    eval_threshold: float = 0.5

    def __post_init__(self) -> None:
        if self.mode not in ("centralized", "fedft", "fedavg_full"):
            raise InputError(f"unknown experiment mode {self.mode!r}")
        if self.n_clients < 1 or self.n_rounds < 1:
            raise InputError("n_clients and n_rounds must be >= 1")
        self.fine_tune.validate_for(self.arch)

    def client_config(self) -> nn.FineTuneConfig:
        """What clients actually train: full model in fedavg_full mode."""
        ft = self.fine_tune
        if self.mode == "fedavg_full":
            return nn.FineTuneConfig.full(
                self.arch, learning_rate=ft.learning_rate, momentum=ft.momentum,
                batch_size=ft.batch_size, local_epochs=ft.local_epochs,
            )
        return ft

    def framework_name(self) -> str:
        if self.mode == "fedft":
            return f"fedft-{self.fine_tune.trainable_fc_tail}"
        return self.mode


@dataclass(frozen=True)
class ClientUpdate:
    """One client's round result: fine-tuned trainable tensors plus stats."""

    client_id: int
    round: int
    tensors: dict[str, np.ndarray]
    num_samples: int
    local_loss: float
    local_time_ms: int

    def __post_init__(self) -> None:
        if self.num_samples <= 0:
            raise InputError("client update must carry num_samples > 0")


def pretrain(
    arch: nn.Architecture,
    X: np.ndarray,
    y: np.ndarray,
    *,
    epochs: int,
    batch_size: int = 32,
    learning_rate: float = 0.01,
    momentum: float = 0.9,
    init_seed: int = 1,
    shuffle_seed: int = 3,
) -> nn.ModelParams:
    """Full-network SGD-momentum training from a fresh seeded initialization."""
    if X.shape[0] == 0:
        raise InputError("cannot pretrain on an empty dataset")
    params = nn.init_params(arch, init_seed)
    if epochs == 0:
        return params
    cfg = nn.FineTuneConfig.full(arch, learning_rate=learning_rate, momentum=momentum,
                                 batch_size=batch_size)
    _train(params, arch, X, y, cfg, epochs, np.random.default_rng(shuffle_seed))
    return params


def _train(
    params: nn.ModelParams,
    arch: nn.Architecture,
    X: np.ndarray,
    y: np.ndarray,
    cfg: nn.FineTuneConfig,
    epochs: int,
    rng: np.random.Generator,
) -> None:
    """In-place mini-batch training; full forward/backward each step."""
    state = nn.OptimizerState.zeros_like(params, nn.trainable_tensor_names(arch, cfg))
    n = X.shape[0]
    for _ in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            probs, cache = nn.forward(params, arch, X[idx], cache_cfg=cfg)
            grads = nn.backward(cache, params, probs, y[idx], cfg)
            nn.sgd_momentum_step(params, grads, state, cfg.learning_rate, cfg.momentum)


def _frozen_features(params: nn.ModelParams, arch: nn.Architecture, X: np.ndarray,
                     cfg: nn.FineTuneConfig) -> np.ndarray:
    """Boundary activations for a whole shard, computed in chunks."""
    parts = [
        nn.frozen_forward(params, arch, X[i:i + FROZEN_CHUNK_ROWS], cfg)
        for i in range(0, X.shape[0], FROZEN_CHUNK_ROWS)
    ]
    return np.vstack(parts)


def local_finetune(
    global_params: nn.ModelParams,
    arch: nn.Architecture,
    shard: Partition,
    cfg: nn.FineTuneConfig,
    round_idx: int,
    seed: int,
) -> ClientUpdate:
    """Train cfg's trainable tail on the shard; frozen tensors stay byte-identical.

    The frozen prefix is evaluated once per round (its parameters cannot
    change mid-round), so fine-tuning costs only the trainable head per step.
    Optimizer state is fresh each round; batch order derives from
    (seed, round, client_id).
    """
    if shard.n_rows == 0:
        raise InputError("cannot fine-tune on an empty shard")
    cfg.validate_for(arch)
    params = global_params.copy()
    rng = np.random.default_rng([seed, round_idx, shard.client_id])
    X, y = shard.features, shard.labels

    with time_block(f"client{shard.client_id}.round{round_idx}") as timer:
        if cfg.train_conv:
            _train(params, arch, X, y, cfg, cfg.local_epochs, rng)
            final_probs = _chunked_probs(params, arch, X)
        else:
            boundary = _frozen_features(params, arch, X, cfg)
            state = nn.OptimizerState.zeros_like(params, nn.trainable_tensor_names(arch, cfg))
            for _ in range(cfg.local_epochs):
                perm = rng.permutation(shard.n_rows)
                for start in range(0, shard.n_rows, cfg.batch_size):
                    idx = perm[start:start + cfg.batch_size]
                    probs, cache = nn.head_forward(params, arch, boundary[idx], cfg, want_cache=True)
                    grads = nn.backward(cache, params, probs, y[idx], cfg)
                    nn.sgd_momentum_step(params, grads, state, cfg.learning_rate, cfg.momentum)
            final_probs = _chunked_head_probs(params, arch, boundary, cfg)
        local_loss = nn.bce_loss(final_probs, y)

    tensors = {name: params.tensors[name] for name in nn.trainable_tensor_names(arch, cfg)}
    return ClientUpdate(
        client_id=shard.client_id,
        round=round_idx,
        tensors=tensors,
        num_samples=shard.n_rows,
        local_loss=local_loss,
        local_time_ms=timer.elapsed_ms,
    )


def _chunked_probs(params: nn.ModelParams, arch: nn.Architecture, X: np.ndarray) -> np.ndarray:
    return np.concatenate([
        nn.sigmoid_probs(params, arch, X[i:i + EVAL_CHUNK_ROWS])
        for i in range(0, X.shape[0], EVAL_CHUNK_ROWS)
    ])


def _chunked_head_probs(params: nn.ModelParams, arch: nn.Architecture, boundary: np.ndarray,
                        cfg: nn.FineTuneConfig) -> np.ndarray:
    return np.concatenate([
        nn.head_forward(params, arch, boundary[i:i + EVAL_CHUNK_ROWS], cfg)[0]
        for i in range(0, boundary.shape[0], EVAL_CHUNK_ROWS)
    ])


def fedavg(global_params: nn.ModelParams, updates: Sequence[ClientUpdate]) -> nn.ModelParams:
    """Sample-count-weighted average of the updates' tensors over the global model.

    Accumulates in float64 and casts back to float32; a single update (or
    unanimous updates) therefore reproduces the client tensors exactly.
    """
    if not updates:
        raise InputError("fedavg needs at least one client update")
    rounds = {u.round for u in updates}
    if len(rounds) != 1:
        raise InputError(f"fedavg received updates from mixed rounds {sorted(rounds)}")
    names = list(updates[0].tensors.keys())
    for u in updates:
        if list(u.tensors.keys()) != names:
            raise InputError(
                f"client {u.client_id} update carries tensors {list(u.tensors)}, expected {names}"
            )
        for name, arr in u.tensors.items():
            if name not in global_params.tensors:
                raise InputError(f"update tensor {name!r} not present in the global model")
            if arr.shape != global_params.tensors[name].shape:
                raise InputError(
                    f"update tensor {name!r} has shape {arr.shape}, "
                    f"global has {global_params.tensors[name].shape}"
                )
    total = sum(u.num_samples for u in updates)
    out = global_params.copy()
    for name in names:
        acc = np.zeros(global_params.tensors[name].shape, dtype=np.float64)
        for u in updates:
            acc += (u.num_samples / total) * u.tensors[name].astype(np.float64)
        out.tensors[name] = acc.astype(np.float32)
    return out


def evaluate(
    params: nn.ModelParams,
    arch: nn.Architecture,
    X: np.ndarray,
    y: np.ndarray,
    threshold: float = 0.5,
) -> tuple[float, float]:
    """(accuracy at the threshold, mean BCE) over a non-empty evaluation set."""
    n = X.shape[0]
    if n == 0:
        raise InputError("cannot evaluate on an empty set")
    if y.shape[0] != n:
        raise InputError("evaluation features/labels row counts differ")
    correct = 0
    loss_sum = 0.0
    for i in range(0, n, EVAL_CHUNK_ROWS):
        probs = nn.sigmoid_probs(params, arch, X[i:i + EVAL_CHUNK_ROWS])
        yc = y[i:i + EVAL_CHUNK_ROWS]
        correct += int(np.sum((probs >= threshold) == (yc == 1)))
        p = np.clip(probs.astype(np.float64), nn.PROB_CLAMP, 1.0 - nn.PROB_CLAMP)
        yf = yc.astype(np.float64)
        loss_sum += float(np.sum(-(yf * np.log(p) + (1.0 - yf) * np.log1p(-p))))
    return correct / n, loss_sum / n


# ---------------------------------------------------------------------------
# Wire adapters between ClientUpdate and the framed protocol.


def update_to_message(update: ClientUpdate) -> ClientUpdateMsg:
    return ClientUpdateMsg(
        round=update.round,
        num_samples=update.num_samples,
        blob=nn.serialize_tensors(update.tensors.items()),
        local_loss=update.local_loss,
        local_time_ms=update.local_time_ms,
    )


def message_to_update(msg: ClientUpdateMsg, client_id: int) -> ClientUpdate:
    tensors = dict(nn.deserialize_tensors(msg.blob))
    return ClientUpdate(
        client_id=client_id,
        round=msg.round,
        tensors=tensors,
        num_samples=msg.num_samples,
        local_loss=msg.local_loss,
        local_time_ms=msg.local_time_ms,
    )


# ---------------------------------------------------------------------------
# Sessions: the client and server halves of the round protocol. Both halves
# speak only Messages, so loopback and TCP runs take the identical code path.


def client_session(channel, arch: nn.Architecture, cfg: nn.FineTuneConfig, shard: Partition,
                   seed: int, recv_timeout: float | None = 600.0) -> None:
    """Run one client: announce, then fine-tune on request until Shutdown."""
    channel.send(Hello(client_id=shard.client_id))
    last_params: nn.ModelParams | None = None
    while True:
        msg: Message = channel.recv(timeout=recv_timeout)
        if isinstance(msg, Shutdown):
            channel.close()
            return
        if isinstance(msg, GlobalParams):
            last_params = nn.deserialize_params(msg.blob, arch)
            update = local_finetune(last_params, arch, shard, cfg, msg.round, seed)
            channel.send(update_to_message(update))
        elif isinstance(msg, EvalRequest):
            if last_params is None:
                raise TransportError(f"client {shard.client_id}: EvalRequest before any GlobalParams")
            with time_block() as timer:
                probs = _chunked_probs(last_params, arch, shard.features)
                loss = nn.bce_loss(probs, shard.labels)
            channel.send(ClientUpdateMsg(
                round=msg.round, num_samples=shard.n_rows,
                blob=nn.serialize_tensors([]), local_loss=loss,
                local_time_ms=timer.elapsed_ms,
            ))
        else:
            raise TransportError(f"client {shard.client_id}: unexpected message {type(msg).__name__}")


def collect_hellos(channels: Sequence, n_clients: int, timeout: float | None = 600.0) -> dict[int, object]:
    """Map client_id -> channel from each connection's Hello."""
    by_id: dict[int, object] = {}
    for ch in channels:
        msg = ch.recv(timeout=timeout)
        if not isinstance(msg, Hello):
            raise TransportError(f"expected Hello, got {type(msg).__name__}")
        if msg.client_id in by_id:
            raise TransportError(f"duplicate client id {msg.client_id}")
        if not 0 <= msg.client_id < n_clients:
            raise TransportError(f"client id {msg.client_id} out of range 0..{n_clients - 1}")
        by_id[msg.client_id] = ch
    return by_id


def server_session(
    channels_by_id: dict[int, object],
    arch: nn.Architecture,
    start_params: nn.ModelParams,
    n_rounds: int,
    eval_set: tuple[np.ndarray, np.ndarray],
    threshold: float = 0.5,
    recv_timeout: float | None = 600.0,
    expected_tensor_names: list[str] | None = None,
) -> tuple[list[RoundReport], nn.ModelParams]:
    """Drive all rounds: distribute, barrier on updates, aggregate, evaluate."""
    params = start_params
    reports: list[RoundReport] = []
    ids = sorted(channels_by_id)
    eval_X, eval_y = eval_set
    for rnd in range(1, n_rounds + 1):
        with time_block(f"round{rnd}") as timer:
            blob = nn.serialize_params(params)
            for cid in ids:
                channels_by_id[cid].send(GlobalParams(round=rnd, blob=blob))
            updates = []
            for cid in ids:
                msg = channels_by_id[cid].recv(timeout=recv_timeout)
                if not isinstance(msg, ClientUpdateMsg):
                    raise TransportError(f"expected ClientUpdateMsg, got {type(msg).__name__}")
                if msg.round != rnd:
                    raise TransportError(f"client {cid} answered round {msg.round} during round {rnd}")
                update = message_to_update(msg, cid)
                if expected_tensor_names is not None and list(update.tensors) != expected_tensor_names:
                    raise ProtocolError(
                        f"client {cid} sent tensors {list(update.tensors)}, "
                        f"expected the trainable set {expected_tensor_names}"
                    )
                updates.append(update)
            params = fedavg(params, updates)
            accuracy, loss = evaluate(params, arch, eval_X, eval_y, threshold)
        reports.append(RoundReport(
            round=rnd,
            accuracy=accuracy,
            loss=loss,
            client_losses=tuple(u.local_loss for u in updates),
            client_times_ms=tuple(u.local_time_ms for u in updates),
            round_time_ms=timer.elapsed_ms,
        ))
    for cid in ids:
        channels_by_id[cid].send(Shutdown())
    return reports, params


def run_experiment(cfg: ExperimentConfig, bundle: DatasetBundle) -> tuple[ExperimentReport, nn.ModelParams]:
    """Execute one full experiment in-process and assemble its report.

    Federated modes run every client on its own thread over loopback
    channels, the same sessions the TCP deployment uses.
    """
    if len(bundle.partitions) != cfg.n_clients:
        raise InputError(f"bundle has {len(bundle.partitions)} partitions, config wants {cfg.n_clients}")
    if bundle.input_dim != cfg.arch.input_dim:
        raise InputError(f"bundle features have {bundle.input_dim} columns, arch wants {cfg.arch.input_dim}")
    ft = cfg.client_config()

    if cfg.mode == "centralized":
        return _run_centralized(cfg, bundle)

    with time_block("experiment") as total:
        if cfg.mode == "fedft":
            proxy_X, proxy_y = bundle.proxy
            params = pretrain(
                cfg.arch, proxy_X, proxy_y,
                epochs=cfg.pretrain_epochs,
                batch_size=ft.batch_size,
                learning_rate=ft.learning_rate,
                momentum=ft.momentum,
                init_seed=cfg.seeds.init,
                shuffle_seed=cfg.seeds.shuffle,
            )
        else:  # fedavg_full: no pre-training
            params = nn.init_params(cfg.arch, cfg.seeds.init)

        server_ends: list[LoopbackChannel] = []
        threads: list[threading.Thread] = []
        failures: list[BaseException] = []

        def _client(chan: LoopbackChannel, shard: Partition) -> None:
            try:
                client_session(chan, cfg.arch, ft, shard, cfg.seeds.shuffle)
            except BaseException as exc:  # surfaced after join
                failures.append(exc)
                chan.close()  # unblocks the server barrier immediately

        for part in bundle.partitions:
            server_end, client_end = make_loopback_pair()
            server_ends.append(server_end)
            t = threading.Thread(target=_client, args=(client_end, part), daemon=True)
            threads.append(t)
            t.start()
        try:
            channels_by_id = collect_hellos(server_ends, cfg.n_clients)
            rounds, params = server_session(
                channels_by_id, cfg.arch, params, cfg.n_rounds, bundle.eval_set, cfg.eval_threshold,
                expected_tensor_names=nn.trainable_tensor_names(cfg.arch, ft),
            )
        except (TransportError, ProtocolError):
            for t in threads:
                t.join(timeout=5.0)
            if failures:
                raise failures[0] from None
            raise
        for t in threads:
            t.join(timeout=60.0)
        if failures:
            raise failures[0]

    return assemble_report(cfg, ft, rounds, total.elapsed_ms), params


def _run_centralized(cfg: ExperimentConfig, bundle: DatasetBundle) -> tuple[ExperimentReport, nn.ModelParams]:
    X = np.vstack([p.features for p in bundle.partitions])
    y = np.concatenate([p.labels for p in bundle.partitions])
    ft = cfg.fine_tune
    with time_block("centralized") as total:
        params = pretrain(
            cfg.arch, X, y,
            epochs=cfg.pretrain_epochs,
            batch_size=ft.batch_size,
            learning_rate=ft.learning_rate,
            momentum=ft.momentum,
            init_seed=cfg.seeds.init,
            shuffle_seed=cfg.seeds.shuffle,
        )
        accuracy, loss = evaluate(params, cfg.arch, *bundle.eval_set, cfg.eval_threshold)
        train_probs = _chunked_probs(params, cfg.arch, X)
        train_loss = nn.bce_loss(train_probs, y)
    rounds = [RoundReport(
        round=1, accuracy=accuracy, loss=loss,
        client_losses=(train_loss,), client_times_ms=(total.elapsed_ms,),
        round_time_ms=total.elapsed_ms,
    )]
    full_cfg = nn.FineTuneConfig.full(cfg.arch, learning_rate=ft.learning_rate,
                                      momentum=ft.momentum, batch_size=ft.batch_size)
    report = assemble_report(cfg, full_cfg, rounds, total.elapsed_ms)
    return report, params


def assemble_report(cfg: ExperimentConfig, client_cfg: nn.FineTuneConfig,
                     rounds: list[RoundReport], total_ms: int) -> ExperimentReport:
    memory = estimate_memory(cfg.arch, client_cfg, client_cfg.batch_size)
    times = [t for r in rounds for t in r.client_times_ms]
    return ExperimentReport(
        framework=cfg.framework_name(),
        config=asdict(cfg),
        rounds=tuple(rounds),
        final_accuracy=rounds[-1].accuracy,
        final_loss=rounds[-1].loss,
        memory=memory,
        mean_client_time_ms=float(np.mean(times)) if times else 0.0,
        total_time_ms=total_ms,
    )
