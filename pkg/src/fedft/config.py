"""JSON configuration: paper-default hyperparameters plus deployment knobs.

A missing file or empty document reproduces the reference setup (batch 32,
5 local epochs, SGD lr 0.01 momentum 0.9, 3 clients, 10 rounds, PCA to 20
dims). The FEDFT_SEED environment variable overrides every seed.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .errors import InputError
from .federation import ExperimentConfig, Seeds
from .nn import Architecture, FineTuneConfig

ENV_SEED = "FEDFT_SEED"

ALGORITHMS = ("fedft", "fedavg_full")


@dataclass
class DatasetSection:
    train_path: str = "data/KDDTrain+.txt"
    test_path: str = "data/KDDTest+.txt"
    pca_k: int = 20
    eval_fraction: float = 0.1
    prepared_dir: str = "prepared"


@dataclass
class ModelSection:
    conv_channels: tuple[int, ...] = (16, 32, 64)
    kernel_size: int = 3
    pool_size: int = 2
    fc_hidden: tuple[int, ...] = (64, 32)


@dataclass
class TrainingSection:
    batch_size: int = 32
    local_epochs: int = 5
    lr: float = 0.01
    momentum: float = 0.9
    pretrain_epochs: int = 10
    rounds: int = 10
    fine_tune_k: int = 3
    algorithm: str = "fedft"


@dataclass
class FederationSection:
    n_clients: int = 3
    seeds: Seeds = field(default_factory=Seeds)


@dataclass
class TransportSection:
    mode: str = "loopback"
    listen: str = "127.0.0.1:8099"
    server: str = "127.0.0.1:8099"
    accept_timeout_s: float = 30.0


@dataclass
class FedftConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    model: ModelSection = field(default_factory=ModelSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    federation: FederationSection = field(default_factory=FederationSection)
    transport: TransportSection = field(default_factory=TransportSection)

    def validate(self) -> None:
        t = self.training
        if t.batch_size < 1 or t.rounds < 1 or t.pretrain_epochs < 0 or t.local_epochs < 0:
            raise InputError("training section: batch_size/rounds must be >= 1, epochs >= 0")
        if t.algorithm not in ALGORITHMS:
            raise InputError(f"training.algorithm must be one of {ALGORITHMS}, got {t.algorithm!r}")
        n_fc = len(self.model.fc_hidden) + 1
        if not 1 <= t.fine_tune_k <= n_fc:
            raise InputError(f"fine_tune_k must be in 1..{n_fc}, got {t.fine_tune_k}")
        if not 0.0 < self.dataset.eval_fraction < 1.0:
            raise InputError("dataset.eval_fraction must be in (0, 1)")
        if self.dataset.pca_k < 1:
            raise InputError("dataset.pca_k must be >= 1")
        if self.federation.n_clients < 1:
            raise InputError("federation.n_clients must be >= 1")
        if self.transport.mode not in ("loopback", "tcp"):
            raise InputError(f"transport.mode must be loopback or tcp, got {self.transport.mode!r}")
        self.architecture()  # validates layer chaining

    def architecture(self) -> Architecture:
        m = self.model
        return Architecture.build(
            input_dim=self.dataset.pca_k,
            conv_channels=m.conv_channels,
            kernel_size=m.kernel_size,
            pool_size=m.pool_size,
            fc_hidden=m.fc_hidden,
        )

    def fine_tune_config(self) -> FineTuneConfig:
        t = self.training
        return FineTuneConfig(
            trainable_fc_tail=t.fine_tune_k,
            learning_rate=t.lr,
            momentum=t.momentum,
            batch_size=t.batch_size,
            local_epochs=t.local_epochs,
        )

    def experiment_config(self, mode: str) -> ExperimentConfig:
        """mode is the algorithm: centralized | fedft | fedavg_full."""
        return ExperimentConfig(
            mode=mode,
            arch=self.architecture(),
            fine_tune=self.fine_tune_config(),
            n_clients=self.federation.n_clients,
            n_rounds=self.training.rounds,
            pretrain_epochs=self.training.pretrain_epochs,
            seeds=self.federation.seeds,
        )


def _apply_section(obj: Any, values: dict[str, Any], section: str) -> Any:
    known = {f.name: f for f in fields(obj)}
    for key, val in values.items():
        if key not in known:
            raise InputError(f"config section {section!r} has unknown key {key!r}")
        current = getattr(obj, key)
        if isinstance(current, Seeds):
            if not isinstance(val, dict):
                raise InputError(f"config {section}.{key} must be an object with init/partition/shuffle")
            unknown = set(val) - {"init", "partition", "shuffle"}
            if unknown:
                raise InputError(f"config {section}.{key} has unknown keys {sorted(unknown)}")
            setattr(obj, key, Seeds(**{**{"init": current.init, "partition": current.partition,
                                           "shuffle": current.shuffle}, **val}))
        elif isinstance(current, tuple):
            try:
                setattr(obj, key, tuple(val))
            except TypeError:
                raise InputError(f"config {section}.{key} must be a list") from None
        else:
            try:
                setattr(obj, key, type(current)(val))
            except (TypeError, ValueError):
                raise InputError(
                    f"config {section}.{key} must be a {type(current).__name__}, got {val!r}"
                ) from None
    return obj


def load_config(path: str | Path | None) -> FedftConfig:
    """Defaults, overridden by the JSON file when given, then by FEDFT_SEED."""
    cfg = FedftConfig()
    if path is not None:
        p = Path(path)
        try:
            doc = json.loads(p.read_text())
        except OSError as exc:
            raise InputError(f"cannot read config {p}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise InputError(f"{p}: not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise InputError(f"{p}: top-level config must be a JSON object")
        sections = {
            "dataset": cfg.dataset,
            "model": cfg.model,
            "training": cfg.training,
            "federation": cfg.federation,
            "transport": cfg.transport,
        }
        for name, values in doc.items():
            if name not in sections:
                raise InputError(f"{p}: unknown config section {name!r}")
            if not isinstance(values, dict):
                raise InputError(f"{p}: section {name!r} must be a JSON object")
            _apply_section(sections[name], values, name)

    env_seed = os.environ.get(ENV_SEED)
    if env_seed is not None:
        try:
            s = int(env_seed)
        except ValueError:
            raise InputError(f"{ENV_SEED} must be an integer, got {env_seed!r}") from None
        cfg.federation.seeds = Seeds(init=s, partition=s, shuffle=s)

    cfg.validate()
    return cfg
