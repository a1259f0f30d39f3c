"""NSL-KDD parsing, encoding, standardization, PCA and client partitioning.

The raw records carry 41 features (38 numeric, 3 categorical) plus a label
string; an optional trailing difficulty column is accepted and dropped.
All downstream matrices are float32; fitted statistics are kept in float64.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContainerError, InputError, ParseError

N_FEATURES = 41
CATEGORICAL_COLUMNS = (1, 2, 3)  # protocol_type, service, flag
N_NUMERIC = N_FEATURES - len(CATEGORICAL_COLUMNS)

NSLKDD_PROTOCOLS = ("tcp", "udp", "icmp")

NSLKDD_SERVICES = (
    "aol", "auth", "bgp", "courier", "csnet_ns", "ctf", "daytime", "discard",
    "domain", "domain_u", "echo", "eco_i", "ecr_i", "efs", "exec", "finger",
    "ftp", "ftp_data", "gopher", "harvest", "hostnames", "http", "http_2784",
    "http_443", "http_8001", "imap4", "IRC", "iso_tsap", "klogin", "kshell",
    "ldap", "link", "login", "mtp", "name", "netbios_dgm", "netbios_ns",
    "netbios_ssn", "netstat", "nnsp", "nntp", "ntp_u", "other", "pm_dump",
    "pop_2", "pop_3", "printer", "private", "red_i", "remote_job", "rje",
    "shell", "smtp", "sql_net", "ssh", "sunrpc", "supdup", "systat", "telnet",
    "tftp_u", "tim_i", "time", "urh_i", "urp_i", "uucp", "uucp_path", "vmnet",
    "whois", "X11", "Z39_50",
)

NSLKDD_FLAGS = ("OTH", "REJ", "RSTO", "RSTOS0", "RSTR", "S0", "S1", "S2", "S3", "SF", "SH")

NORMAL_LABEL = "normal"

DATASET_MAGIC = b"FFTD"
DATASET_VERSION = 1

# Columns whose population std falls below this are emitted as all zeros.
STD_FLOOR = 1e-8


@dataclass(frozen=True)
class RecordSet:
    """Parsed NSL-KDD rows, prior to any encoding.

    ``numeric`` is (n, 38) float64 in original column order (duration first),
    ``categorical`` is (n, 3) strings (protocol_type, service, flag),
    ``labels`` is (n,) strings.
    """

    numeric: np.ndarray
    categorical: np.ndarray
    labels: np.ndarray
    source_name: str = "<bytes>"

    def __len__(self) -> int:
        return self.numeric.shape[0]

    @property
    def n_rows(self) -> int:
        return self.numeric.shape[0]

    def take(self, indices: np.ndarray, source_name: str | None = None) -> "RecordSet":
        """Row subset in the given order."""
        return RecordSet(
            numeric=self.numeric[indices],
            categorical=self.categorical[indices],
            labels=self.labels[indices],
            source_name=source_name if source_name is not None else self.source_name,
        )


@dataclass(frozen=True)
class CategoryVocab:
    """Ordered, duplicate-free token lists for the three categorical columns."""

    protocols: tuple[str, ...] = NSLKDD_PROTOCOLS
    services: tuple[str, ...] = NSLKDD_SERVICES
    flags: tuple[str, ...] = NSLKDD_FLAGS

    def __post_init__(self) -> None:
        for name, toks in (("protocols", self.protocols), ("services", self.services), ("flags", self.flags)):
            if len(set(toks)) != len(toks):
                raise InputError(f"vocab column {name!r} contains duplicate tokens")

    @property
    def sizes(self) -> tuple[int, int, int]:
        return (len(self.protocols), len(self.services), len(self.flags))

    @property
    def encoded_width(self) -> int:
        return N_NUMERIC + sum(self.sizes)


@dataclass(frozen=True)
class Scaler:
    """Per-column mean and population standard deviation."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self) -> None:
        if self.mean.shape != self.std.shape:
            raise InputError("scaler mean/std lengths differ")
        if np.any(self.std < 0):
            raise InputError("scaler std entries must be non-negative")


@dataclass(frozen=True)
class PcaModel:
    """Column mean, orthonormal projection columns, and explained variances."""

    mean: np.ndarray
    components: np.ndarray  # (d, k), columns are principal directions
    explained_variance: np.ndarray  # (k,), non-increasing

    @property
    def input_dim(self) -> int:
        return self.components.shape[0]

    @property
    def k(self) -> int:
        return self.components.shape[1]


@dataclass(frozen=True)
class Partition:
    """One client's shard: projected features plus 0/1 labels."""

    client_id: int
    features: np.ndarray  # (n, k) float32
    labels: np.ndarray  # (n,) uint8

    def __post_init__(self) -> None:
        if self.features.shape[0] != self.labels.shape[0]:
            raise InputError("partition features/labels row counts differ")

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]


def parse_csv(data: bytes, allow_difficulty_column: bool = True, source_name: str = "<bytes>") -> RecordSet:
    """Parse comma-separated NSL-KDD text into a RecordSet.

    Each non-empty line must carry 42 fields (41 features + label) or, when
    ``allow_difficulty_column`` is set, 43 (a trailing difficulty integer that
    is discarded). Numeric fields must parse as finite reals; categorical
    fields and the label must be non-empty. Errors name the 1-based line and
    column. Empty input yields an empty RecordSet.
    """
    text = data.decode("utf-8", errors="strict")
    numeric_rows: list[list[str]] = []
    categorical_rows: list[tuple[str, str, str]] = []
    labels: list[str] = []
    linenos: list[int] = []

    allowed = (42, 43) if allow_difficulty_column else (42,)
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) not in allowed:
            expected = "42 or 43 fields" if allow_difficulty_column else "42 fields"
            raise ParseError(f"{source_name}: line {lineno}: expected {expected}, got {len(fields)}")
        proto, service, flag = (fields[c].strip() for c in CATEGORICAL_COLUMNS)
        for col, val in zip(CATEGORICAL_COLUMNS, (proto, service, flag)):
            if not val:
                raise ParseError(f"{source_name}: line {lineno}: column {col + 1}: empty categorical field")
        label = fields[N_FEATURES].strip()
        if not label:
            raise ParseError(f"{source_name}: line {lineno}: column {N_FEATURES + 1}: empty label")
        numeric_rows.append([fields[0]] + fields[4:N_FEATURES])
        categorical_rows.append((proto, service, flag))
        labels.append(label)
        linenos.append(lineno)

    if not numeric_rows:
        return RecordSet(
            numeric=np.empty((0, N_NUMERIC), dtype=np.float64),
            categorical=np.empty((0, 3), dtype=object),
            labels=np.empty((0,), dtype=object),
            source_name=source_name,
        )

    try:
        numeric = np.array(numeric_rows, dtype=np.float64)
    except ValueError:
        _locate_bad_numeric(numeric_rows, linenos, source_name)
        raise  # unreachable; _locate_bad_numeric always raises
    bad = ~np.isfinite(numeric)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise ParseError(
            f"{source_name}: line {linenos[int(r)]}: column "
            f"{_numeric_source_column(int(c)) + 1}: non-finite numeric value"
        )

    return RecordSet(
        numeric=numeric,
        categorical=np.array(categorical_rows, dtype=object),
        labels=np.array(labels, dtype=object),
        source_name=source_name,
    )


def parse_csv_file(path: str | Path, allow_difficulty_column: bool = True) -> RecordSet:
    """Read and parse an NSL-KDD text file."""
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read dataset file {p}: {exc}") from exc
    return parse_csv(raw, allow_difficulty_column=allow_difficulty_column, source_name=p.name)


def _numeric_source_column(numeric_idx: int) -> int:
    """Map a numeric-matrix column back to its raw CSV column index."""
    return 0 if numeric_idx == 0 else numeric_idx + 3


def _locate_bad_numeric(numeric_rows: list[list[str]], linenos: list[int], source_name: str) -> None:
    for r, row in enumerate(numeric_rows):
        for c, val in enumerate(row):
            try:
                float(val)
            except ValueError:
                raise ParseError(
                    f"{source_name}: line {linenos[r]}: column {_numeric_source_column(c) + 1}: "
                    f"unparseable numeric value {val.strip()!r}"
                ) from None
    raise ParseError(f"{source_name}: unparseable numeric field")


def encode_features(records: RecordSet, vocab: CategoryVocab | None = None) -> np.ndarray:
    """One-hot encode categoricals in place of their columns; numerics pass through.

    Output layout: duration, protocol one-hot block, service block, flag
    block, then the remaining 37 numeric columns. Tokens absent from the
    vocab encode as an all-zero block.
    """
    vocab = vocab if vocab is not None else CategoryVocab()
    n = len(records)
    p, s, f = vocab.sizes
    out = np.zeros((n, vocab.encoded_width), dtype=np.float32)
    out[:, 0] = records.numeric[:, 0]
    offsets = (1, 1 + p, 1 + p + s)
    lookups = (
        {tok: i for i, tok in enumerate(vocab.protocols)},
        {tok: i for i, tok in enumerate(vocab.services)},
        {tok: i for i, tok in enumerate(vocab.flags)},
    )
    for col, (offset, lookup) in enumerate(zip(offsets, lookups)):
        tokens = records.categorical[:, col]
        for row in range(n):
            idx = lookup.get(tokens[row])
            if idx is not None:
                out[row, offset + idx] = 1.0
    out[:, 1 + p + s + f:] = records.numeric[:, 1:]
    return out


def binarize_labels(records: RecordSet) -> np.ndarray:
    """0 for the normal label, 1 for every attack label."""
    return (records.labels != NORMAL_LABEL).astype(np.uint8)


def fit_scaler(X: np.ndarray) -> Scaler:
    """Per-column mean and population standard deviation."""
    if X.shape[0] == 0:
        raise InputError("cannot fit scaler on an empty matrix")
    mean = X.mean(axis=0, dtype=np.float64)
    std = X.std(axis=0, dtype=np.float64)
    return Scaler(mean=mean, std=std)


def apply_scaler(X: np.ndarray, scaler: Scaler) -> np.ndarray:
    """z-score each column; columns with std below the floor emit zeros.

    Output stays float64: PCA consumes it directly, and the projection is
    what gets quantized to float32 for the dataset containers.
    """
    if X.shape[1] != scaler.mean.shape[0]:
        raise InputError(f"scaler fitted for {scaler.mean.shape[0]} columns, matrix has {X.shape[1]}")
    safe = scaler.std >= STD_FLOOR
    z = np.zeros(X.shape, dtype=np.float64)
    z[:, safe] = (X[:, safe].astype(np.float64) - scaler.mean[safe]) / scaler.std[safe]
    return z


def fit_pca(X: np.ndarray, k: int) -> PcaModel:
    """Top-k principal directions of the sample covariance.

    Computed as right-singular vectors of the centered matrix; eigenvalues
    are s^2/(n-1). Sign convention: each component's largest-magnitude entry
    is made positive.
    """
    n, d = X.shape
    if k < 1:
        raise InputError("pca k must be >= 1")
    if n < 2:
        raise InputError("pca requires at least 2 rows")
    if k > min(n, d):
        raise InputError(f"pca k={k} exceeds min(n_rows={n}, n_cols={d})")
    mean = X.mean(axis=0, dtype=np.float64)
    centered = X.astype(np.float64) - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:k].T.copy()
    for j in range(k):
        i = int(np.argmax(np.abs(components[:, j])))
        if components[i, j] < 0:
            components[:, j] = -components[:, j]
    explained = (s[:k] ** 2) / (n - 1)
    return PcaModel(mean=mean, components=components, explained_variance=explained)


def apply_pca(X: np.ndarray, model: PcaModel) -> np.ndarray:
    """Project rows: (X - mean) @ components, float32 output."""
    if X.shape[1] != model.input_dim:
        raise InputError(f"pca fitted for {model.input_dim} columns, matrix has {X.shape[1]}")
    projected = (X.astype(np.float64) - model.mean) @ model.components
    return projected.astype(np.float32)


def partition_iid(X: np.ndarray, y: np.ndarray, n_clients: int, seed: int) -> list[Partition]:
    """Seeded uniform shuffle, then equal-size shards (remainder rows dropped)."""
    n = X.shape[0]
    if n_clients < 1:
        raise InputError("n_clients must be >= 1")
    if n_clients > n:
        raise InputError(f"n_clients={n_clients} exceeds row count {n}")
    perm = np.random.default_rng(seed).permutation(n)
    size = n // n_clients
    parts = []
    for cid in range(n_clients):
        idx = perm[cid * size:(cid + 1) * size]
        parts.append(Partition(client_id=cid, features=np.ascontiguousarray(X[idx]), labels=np.ascontiguousarray(y[idx])))
    return parts


def make_proxy_split(test_records: RecordSet, eval_fraction: float, seed: int) -> tuple[RecordSet, RecordSet]:
    """Seeded shuffle; the last ceil(fraction*n) rows become the eval holdout."""
    if not 0.0 < eval_fraction < 1.0:
        raise InputError(f"eval_fraction must be in (0, 1), got {eval_fraction}")
    n = len(test_records)
    perm = np.random.default_rng(seed).permutation(n)
    n_eval = math.ceil(eval_fraction * n)
    proxy = test_records.take(perm[: n - n_eval], source_name=f"{test_records.source_name}:proxy")
    holdout = test_records.take(perm[n - n_eval:], source_name=f"{test_records.source_name}:eval")
    return proxy, holdout


# ---------------------------------------------------------------------------
# Dataset container ("FFTD"): features as row-major little-endian f32, then
# one u8 label per row.

_DATASET_HEADER = struct.Struct("<4sHQQ")


def write_dataset(path: str | Path, features: np.ndarray, labels: np.ndarray) -> None:
    """Write one feature matrix + label vector as an FFTD container."""
    if features.shape[0] != labels.shape[0]:
        raise InputError("features/labels row counts differ")
    n, d = features.shape
    p = Path(path)
    try:
        with open(p, "wb") as fh:
            fh.write(_DATASET_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, n, d))
            fh.write(np.ascontiguousarray(features, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(labels, dtype=np.uint8).tobytes())
    except OSError as exc:
        raise InputError(f"cannot write dataset container {p}: {exc}") from exc


def read_dataset(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read an FFTD container back into (features f32, labels u8)."""
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as exc:
        raise ContainerError(f"cannot read dataset container {p}: {exc}") from exc
    if len(raw) < _DATASET_HEADER.size:
        raise ContainerError(f"{p}: truncated header ({len(raw)} bytes)")
    magic, version, n, d = _DATASET_HEADER.unpack_from(raw)
    if magic != DATASET_MAGIC:
        raise ContainerError(f"{p}: bad magic {magic!r}")
    if version != DATASET_VERSION:
        raise ContainerError(f"{p}: unsupported container version {version}")
    expected = _DATASET_HEADER.size + n * d * 4 + n
    if len(raw) != expected:
        raise ContainerError(f"{p}: size mismatch, expected {expected} bytes, got {len(raw)}")
    offset = _DATASET_HEADER.size
    features = np.frombuffer(raw, dtype="<f4", count=n * d, offset=offset).reshape(n, d).copy()
    labels = np.frombuffer(raw, dtype=np.uint8, count=n, offset=offset + n * d * 4).copy()
    return features, labels


# ---------------------------------------------------------------------------
# Pipeline glue used by the CLI and the experiment runner.


def prepare_client_partitions(
    train_records: RecordSet,
    vocab: CategoryVocab,
    n_clients: int,
    pca_k: int,
    partition_seed: int,
) -> list[Partition]:
    """Encode, binarize, IID-partition, then standardize + PCA per client shard."""
    X = encode_features(train_records, vocab)
    y = binarize_labels(train_records)
    raw_parts = partition_iid(X, y, n_clients, partition_seed)
    out = []
    for part in raw_parts:
        scaler = fit_scaler(part.features)
        z = apply_scaler(part.features, scaler)
        pca = fit_pca(z, pca_k)
        out.append(Partition(client_id=part.client_id, features=apply_pca(z, pca), labels=part.labels))
    return out


def prepare_server_split(
    test_records: RecordSet,
    vocab: CategoryVocab,
    pca_k: int,
    eval_fraction: float,
    partition_seed: int,
) -> tuple[tuple[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]:
    """Proxy/eval split of the test records, both transformed by the proxy-fitted pipeline.

    Returns ((proxy_X, proxy_y), (eval_X, eval_y)).
    """
    proxy_recs, eval_recs = make_proxy_split(test_records, eval_fraction, partition_seed)
    proxy_X = encode_features(proxy_recs, vocab)
    eval_X = encode_features(eval_recs, vocab)
    scaler = fit_scaler(proxy_X)
    proxy_z = apply_scaler(proxy_X, scaler)
    eval_z = apply_scaler(eval_X, scaler)
    pca = fit_pca(proxy_z, pca_k)
    return (
        (apply_pca(proxy_z, pca), binarize_labels(proxy_recs)),
        (apply_pca(eval_z, pca), binarize_labels(eval_recs)),
    )


@dataclass(frozen=True)
class DatasetBundle:
    """Everything one experiment consumes: client shards plus server-side sets."""

    partitions: list[Partition]
    proxy: tuple[np.ndarray, np.ndarray]
    eval_set: tuple[np.ndarray, np.ndarray]

    @property
    def input_dim(self) -> int:
        return self.proxy[0].shape[1]


def partition_filename(client_id: int) -> str:
    return f"client_{client_id:02d}.fftd"


def write_bundle(bundle: DatasetBundle, out_dir: str | Path) -> list[Path]:
    """Write proxy.fftd, eval.fftd and one container per client shard."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for part in bundle.partitions:
        p = out / partition_filename(part.client_id)
        write_dataset(p, part.features, part.labels)
        written.append(p)
    for name, (X, y) in (("proxy.fftd", bundle.proxy), ("eval.fftd", bundle.eval_set)):
        p = out / name
        write_dataset(p, X, y)
        written.append(p)
    return written


def load_bundle(prepared_dir: str | Path, n_clients: int) -> DatasetBundle:
    """Load a bundle previously written by write_bundle / the prepare command."""
    d = Path(prepared_dir)
    partitions = []
    for cid in range(n_clients):
        X, y = read_dataset(d / partition_filename(cid))
        partitions.append(Partition(client_id=cid, features=X, labels=y))
    proxy = read_dataset(d / "proxy.fftd")
    eval_set = read_dataset(d / "eval.fftd")
    return DatasetBundle(partitions=partitions, proxy=proxy, eval_set=eval_set)


def load_partition(prepared_dir: str | Path, client_id: int) -> Partition:
    """Load a single client shard (used by TCP client processes)."""
    X, y = read_dataset(Path(prepared_dir) / partition_filename(client_id))
    return Partition(client_id=client_id, features=X, labels=y)
