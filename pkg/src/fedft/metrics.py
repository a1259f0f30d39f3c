"""Analytic training-memory model, wall-clock timing, and report emission.

Memory is modeled, not sampled: 4-byte float accounting over parameters,
gradients, momentum buffers, and the activations a training step must hold
(everything from the first trainable layer's input boundary onward, plus the
frozen boundary output itself).
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

from .errors import InputError
from .nn import Architecture, FineTuneConfig, trainable_tensor_names

REPORT_SCHEMA_VERSION = 1

BYTES_PER_VALUE = 4  # float32 everywhere

CSV_COLUMNS = ("round", "accuracy", "loss", "mem_bytes", "round_time_ms")


@dataclass(frozen=True)
class MemoryEstimate:
    weights_bytes: int
    grads_bytes: int
    optimizer_bytes: int
    activations_bytes: int
    total_bytes: int

    def __post_init__(self) -> None:
        parts = (self.weights_bytes, self.grads_bytes, self.optimizer_bytes, self.activations_bytes)
        if any(v < 0 for v in parts):
            raise InputError("memory components must be non-negative")
        if self.total_bytes != sum(parts):
            raise InputError("total_bytes must equal the sum of its components")


def _activation_elements(arch: Architecture, cfg: FineTuneConfig | None) -> int:
    """Per-sample stored activation elements for one training step.

    Counts the frozen-boundary output plus, for each trainable layer, its
    stored outputs: conv pre-activation and pooled output per trainable conv
    block, each trainable FC layer's output, and the final sigmoid output.
    With everything frozen only the network output remains.
    """
    if cfg is None:
        return 1  # inference keeps only the output probability
    cfg.validate_for(arch)
    lengths = arch.conv_output_lengths
    if cfg.train_conv:
        elems = arch.input_dim  # boundary is the raw input
        length = arch.input_dim
        for blk, pooled_len in zip(arch.conv_blocks, lengths):
            elems += blk.out_channels * length  # conv pre-activation
            elems += blk.out_channels * pooled_len  # pooled output
            length = pooled_len
        for fc in arch.fc_layers:
            elems += fc.out_features
        return elems + 1  # sigmoid output
    first = arch.n_fc - cfg.trainable_fc_tail
    elems = arch.fc_layers[first].in_features  # frozen boundary output
    for fc in arch.fc_layers[first:]:
        elems += fc.out_features
    return elems + 1


def estimate_memory(arch: Architecture, cfg: FineTuneConfig | None, batch_size: int) -> MemoryEstimate:
    """Closed-form training memory at the given batch size.

    ``cfg=None`` models the all-frozen (inference) case: no gradients, no
    optimizer state, only the boundary output per sample.
    """
    if batch_size < 1:
        raise InputError("batch_size must be >= 1")
    total_params = arch.n_params()
    if cfg is None:
        trainable = 0
    else:
        specs = dict(arch.param_specs())
        trainable = sum(
            int(_prod(specs[name])) for name in trainable_tensor_names(arch, cfg)
        )
    weights = BYTES_PER_VALUE * total_params
    grads = BYTES_PER_VALUE * trainable
    optimizer = BYTES_PER_VALUE * trainable
    activations = BYTES_PER_VALUE * batch_size * _activation_elements(arch, cfg)
    return MemoryEstimate(
        weights_bytes=weights,
        grads_bytes=grads,
        optimizer_bytes=optimizer,
        activations_bytes=activations,
        total_bytes=weights + grads + optimizer + activations,
    )


def _prod(shape: tuple[int, ...]) -> int:
    out = 1
    for s in shape:
        out *= s
    return out


class time_block:
    """Context manager measuring wall-clock milliseconds on the monotonic clock."""

    def __init__(self, label: str = ""):
        self.label = label
        self.elapsed_ms: int = 0
        self._start: int = 0

    def __enter__(self) -> "time_block":
        self._start = time.monotonic_ns()
        return self

    def __exit__(self, *exc: object) -> None:
        self.elapsed_ms = (time.monotonic_ns() - self._start) // 1_000_000


@dataclass(frozen=True)
class RoundReport:
    """Server-side view of one communication round."""

    round: int
    accuracy: float
    loss: float
    client_losses: tuple[float, ...]
    client_times_ms: tuple[int, ...]
    round_time_ms: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.accuracy <= 1.0:
            raise InputError(f"accuracy out of range: {self.accuracy}")
        if self.loss < 0.0:
            raise InputError(f"negative loss: {self.loss}")


@dataclass(frozen=True)
class ExperimentReport:
    """Full experiment record; serializes losslessly to CSV and JSON."""

    framework: str
    config: dict[str, Any]
    rounds: tuple[RoundReport, ...]
    final_accuracy: float
    final_loss: float
    memory: MemoryEstimate
    mean_client_time_ms: float
    total_time_ms: int
    schema_version: int = REPORT_SCHEMA_VERSION


def report_to_dict(report: ExperimentReport) -> dict[str, Any]:
    return asdict(report)


def report_from_dict(d: dict[str, Any], source: str = "<dict>") -> ExperimentReport:
    try:
        version = d["schema_version"]
        if version != REPORT_SCHEMA_VERSION:
            raise InputError(f"{source}: unsupported report schema version {version}")
        rounds = tuple(
            RoundReport(
                round=r["round"],
                accuracy=r["accuracy"],
                loss=r["loss"],
                client_losses=tuple(r["client_losses"]),
                client_times_ms=tuple(r["client_times_ms"]),
                round_time_ms=r["round_time_ms"],
            )
            for r in d["rounds"]
        )
        return ExperimentReport(
            framework=d["framework"],
            config=d["config"],
            rounds=rounds,
            final_accuracy=d["final_accuracy"],
            final_loss=d["final_loss"],
            memory=MemoryEstimate(**d["memory"]),
            mean_client_time_ms=d["mean_client_time_ms"],
            total_time_ms=d["total_time_ms"],
            schema_version=version,
        )
    except KeyError as exc:
        raise InputError(f"{source}: report missing field {exc}") from exc


def render_json(report: ExperimentReport) -> str:
    """Canonical JSON text: sorted keys, repr-exact floats, stable bytes."""
    return json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n"


def render_csv(report: ExperimentReport) -> str:
    """One row per round; floats via repr so parse-back is exact."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in report.rounds:
        writer.writerow([r.round, repr(r.accuracy), repr(r.loss), report.memory.total_bytes, r.round_time_ms])
    return buf.getvalue()


def emit_report(report: ExperimentReport, fmt: str, path: str | Path) -> Path:
    """Write the report as 'csv' or 'json'; errors carry the path."""
    p = Path(path)
    if fmt == "json":
        text = render_json(report)
    elif fmt == "csv":
        text = render_csv(report)
    else:
        raise InputError(f"unknown report format {fmt!r}")
    try:
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text)
    except OSError as exc:
        raise InputError(f"cannot write report {p}: {exc}") from exc
    return p


def load_report(path: str | Path) -> ExperimentReport:
    """Read a JSON report back, validating the schema version."""
    p = Path(path)
    try:
        d = json.loads(p.read_text())
    except OSError as exc:
        raise InputError(f"cannot read report {p}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{p}: not valid JSON: {exc}") from exc
    if not isinstance(d, dict) or "schema_version" not in d:
        raise InputError(f"{p}: not a report file (missing schema_version)")
    return report_from_dict(d, source=str(p))
