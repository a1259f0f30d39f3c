from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fedft import data
from fedft.errors import ContainerError, InputError, ParseError
from fedft.synthetic import generate_nslkdd_like

# A well-formed 43-field line (41 features, label, difficulty).
SAMPLE_FIELDS = (
    ["0", "tcp", "http", "SF", "181", "5450"]
    + ["0"] * 16
    + ["8", "8", "0.00", "0.00", "0.00", "0.00", "1.00", "0.00", "0.00",
       "9", "9", "1.00", "0.00", "0.11", "0.00", "0.00", "0.00", "0.00", "0.00"]
    + ["normal", "21"]
)
SAMPLE_LINE = ",".join(SAMPLE_FIELDS)


def test_parse_single_line_drops_difficulty():
    rs = data.parse_csv(SAMPLE_LINE.encode())
    assert len(rs) == 1
    assert rs.labels[0] == "normal"
    assert rs.numeric.shape == (1, 38)
    assert rs.categorical[0].tolist() == ["tcp", "http", "SF"]


def test_parse_42_fields_accepted():
    line = ",".join(SAMPLE_FIELDS[:42])
    rs = data.parse_csv(line.encode())
    assert len(rs) == 1


def test_parse_wrong_field_count_names_line():
    bad = ",".join(SAMPLE_FIELDS[:40])
    with pytest.raises(ParseError, match=r"line 1: expected 42 or 43 fields"):
        data.parse_csv(bad.encode())


def test_parse_wrong_field_count_on_later_line():
    text = SAMPLE_LINE + "\n" + ",".join(SAMPLE_FIELDS[:40]) + "\n"
    with pytest.raises(ParseError, match=r"line 2:"):
        data.parse_csv(text.encode())


def test_parse_difficulty_rejected_when_flag_off():
    with pytest.raises(ParseError, match="expected 42 fields"):
        data.parse_csv(SAMPLE_LINE.encode(), allow_difficulty_column=False)


def test_parse_bad_numeric_names_line_and_column():
    fields = SAMPLE_FIELDS.copy()
    fields[4] = "oops"
    with pytest.raises(ParseError, match=r"line 1: column 5"):
        data.parse_csv(",".join(fields).encode())


def test_parse_empty_input_is_empty_recordset():
    rs = data.parse_csv(b"")
    assert len(rs) == 0
    rs = data.parse_csv(b"\n\n")
    assert len(rs) == 0


def test_parse_skips_blank_lines_keeps_source_linenos():
    text = "\n" + SAMPLE_LINE + "\n\n" + SAMPLE_LINE.replace("181", "bogus") + "\n"
    with pytest.raises(ParseError, match=r"line 4: column 5"):
        data.parse_csv(text.encode())


def test_parse_empty_label_rejected():
    fields = SAMPLE_FIELDS.copy()
    fields[41] = " "
    with pytest.raises(ParseError, match="empty label"):
        data.parse_csv(",".join(fields).encode())


def test_vocab_sizes():
    v = data.CategoryVocab()
    assert v.sizes == (3, 70, 11)
    assert v.encoded_width == 38 + 84


def test_vocab_rejects_duplicates():
    with pytest.raises(InputError, match="duplicate"):
        data.CategoryVocab(protocols=("tcp", "tcp", "udp"))


def test_encode_one_hot_layout(vocab):
    rs = data.parse_csv(SAMPLE_LINE.encode())
    X = data.encode_features(rs, vocab)
    assert X.shape == (1, 122)
    assert X[0, 0] == 0.0  # duration passes through as column 0
    assert X[0, 1:4].tolist() == [1.0, 0.0, 0.0]  # tcp first in the protocol block
    service_block = X[0, 4:74]
    assert service_block.sum() == 1.0
    assert service_block[vocab.services.index("http")] == 1.0
    flag_block = X[0, 74:85]
    assert flag_block[vocab.flags.index("SF")] == 1.0
    # src_bytes=181 is numeric column 1, which lands right after the flag block
    assert X[0, 85] == 181.0


def test_encode_unknown_token_zero_block(vocab):
    fields = SAMPLE_FIELDS.copy()
    fields[2] = "not_a_service"
    rs = data.parse_csv(",".join(fields).encode())
    X = data.encode_features(rs, vocab)
    assert X[0, 4:74].sum() == 0.0


def test_binarize_labels():
    fields = SAMPLE_FIELDS.copy()
    lines = [SAMPLE_LINE]
    fields[41] = "neptune"
    lines.append(",".join(fields))
    rs = data.parse_csv("\n".join(lines).encode())
    assert data.binarize_labels(rs).tolist() == [0, 1]


def test_scaler_analytic_cases():
    s = data.fit_scaler(np.array([[1.0], [3.0]]))
    assert s.mean[0] == pytest.approx(2.0)
    assert s.std[0] == pytest.approx(1.0)  # population std
    s = data.fit_scaler(np.array([[5.0], [5.0], [5.0]]))
    assert s.mean[0] == 5.0 and s.std[0] == 0.0
    two = data.fit_scaler(np.array([[1.0, 10.0], [3.0, 30.0]]))
    assert two.mean.tolist() == [2.0, 20.0]
    assert two.std.tolist() == [1.0, 10.0]


def test_scaler_apply_and_guard():
    X = np.array([[1.0, 7.0], [3.0, 7.0]])
    z = data.apply_scaler(X, data.fit_scaler(X))
    assert z[:, 0].tolist() == [-1.0, 1.0]
    assert z[:, 1].tolist() == [0.0, 0.0]  # constant column guard


def test_scaler_empty_matrix_rejected():
    with pytest.raises(InputError):
        data.fit_scaler(np.empty((0, 3)))


def test_scaler_dimension_mismatch():
    s = data.fit_scaler(np.ones((4, 3)))
    with pytest.raises(InputError):
        data.apply_scaler(np.ones((4, 2)), s)


@given(st.integers(0, 2**32 - 1), st.integers(5, 60), st.integers(1, 8))
def test_scaler_self_standardization_property(seed, n, d):
    X = np.random.default_rng(seed).normal(3.0, 2.5, size=(n, d)).astype(np.float32)
    z = data.apply_scaler(X, data.fit_scaler(X))
    mu = z.mean(axis=0)
    sd = z.std(axis=0)
    assert np.all(np.abs(mu) < 1e-9)
    assert np.all((sd == 0.0) | (np.abs(sd - 1.0) < 1e-6))


def test_pca_line_y_equals_x():
    t = np.linspace(-3, 3, 40)
    X = np.stack([t, t], axis=1)
    m = data.fit_pca(X, 1)
    assert np.allclose(np.abs(m.components[:, 0]), 1 / np.sqrt(2), atol=1e-9)
    assert m.components[np.argmax(np.abs(m.components[:, 0])), 0] > 0
    total_var = np.var(X, axis=0, ddof=1).sum()
    assert m.explained_variance[0] / total_var == pytest.approx(1.0, abs=1e-9)


def test_pca_eigenvalue_oracle(rng):
    """Implementation (SVD route) vs dense covariance eigendecomposition."""
    X = rng.normal(size=(50, 10))
    m = data.fit_pca(X, 4)
    centered = X - X.mean(axis=0)
    cov = centered.T @ centered / (X.shape[0] - 1)
    eig = np.sort(np.linalg.eigvalsh(cov))[::-1]
    assert np.allclose(m.explained_variance, eig[:4], atol=1e-8)


def test_pca_orthonormal_components(rng):
    X = rng.normal(size=(60, 12))
    m = data.fit_pca(X, 5)
    gram = m.components.T @ m.components
    assert np.allclose(gram, np.eye(5), atol=1e-6)
    assert np.all(np.diff(m.explained_variance) <= 1e-12)


def test_pca_projection_variances_match_oracle(rng):
    X = rng.normal(size=(80, 6)) @ np.diag([5.0, 3.0, 2.0, 1.0, 0.5, 0.1])
    m = data.fit_pca(X, 6)
    proj = data.apply_pca(X, m)
    var = proj.astype(np.float64).var(axis=0, ddof=1)
    assert np.all(np.diff(var) <= 1e-6)  # non-increasing left to right
    centered = X - X.mean(axis=0)
    eig = np.sort(np.linalg.eigvalsh(centered.T @ centered / (X.shape[0] - 1)))[::-1]
    assert np.allclose(var, eig, rtol=1e-5, atol=1e-4)


def test_pca_full_rank_preserves_distances(rng):
    X = rng.normal(size=(30, 7))
    m = data.fit_pca(X, 7)
    proj = (X - m.mean) @ m.components  # float64 path, no f32 quantization
    d_orig = np.linalg.norm(X[:, None] - X[None, :], axis=2)
    d_proj = np.linalg.norm(proj[:, None] - proj[None, :], axis=2)
    assert np.allclose(d_orig, d_proj, atol=1e-6)


def test_pca_full_rank_reconstruction(rng):
    X = rng.normal(size=(25, 5))
    m = data.fit_pca(X, 5)
    proj = (X - m.mean) @ m.components
    recon = proj @ m.components.T + m.mean
    assert np.allclose(recon, X, atol=1e-6)


def test_pca_centering_gives_zeros(rng):
    X = rng.normal(size=(20, 4))
    m = data.fit_pca(X, 2)
    replicated = np.tile(m.mean, (6, 1))
    assert np.all(data.apply_pca(replicated, m) == 0.0)


def test_pca_k_too_large():
    with pytest.raises(InputError):
        data.fit_pca(np.ones((4, 3)), 4)


def test_pca_dimension_mismatch(rng):
    m = data.fit_pca(rng.normal(size=(10, 4)), 2)
    with pytest.raises(InputError):
        data.apply_pca(rng.normal(size=(5, 3)), m)


def test_partition_floor_and_sizes():
    X = np.arange(10, dtype=np.float32).reshape(10, 1)
    y = np.zeros(10, dtype=np.uint8)
    parts = data.partition_iid(X, y, 3, seed=0)
    assert [p.n_rows for p in parts] == [3, 3, 3]
    ids = np.concatenate([p.features[:, 0] for p in parts])
    assert len(set(ids.tolist())) == 9  # disjoint source rows
    assert set(ids.tolist()) <= set(range(10))


def test_partition_deterministic():
    X = np.random.default_rng(3).normal(size=(50, 4)).astype(np.float32)
    y = (np.arange(50) % 2).astype(np.uint8)
    a = data.partition_iid(X, y, 4, seed=9)
    b = data.partition_iid(X, y, 4, seed=9)
    for pa, pb in zip(a, b):
        assert pa.features.tobytes() == pb.features.tobytes()
        assert pa.labels.tobytes() == pb.labels.tobytes()


def test_partition_errors():
    X = np.ones((3, 2), dtype=np.float32)
    y = np.zeros(3, dtype=np.uint8)
    with pytest.raises(InputError):
        data.partition_iid(X, y, 0, seed=1)
    with pytest.raises(InputError):
        data.partition_iid(X, y, 4, seed=1)


def _numbered_records(n: int) -> data.RecordSet:
    lines = []
    for i in range(n):
        fields = SAMPLE_FIELDS.copy()
        fields[0] = str(i)  # duration marks the source row
        lines.append(",".join(fields))
    return data.parse_csv("\n".join(lines).encode())


def test_proxy_split_counts_and_disjointness():
    rs = _numbered_records(100)
    proxy, holdout = data.make_proxy_split(rs, 0.1, seed=4)
    assert len(proxy) == 90 and len(holdout) == 10
    ids = set(proxy.numeric[:, 0].tolist()) | set(holdout.numeric[:, 0].tolist())
    assert len(ids) == 100


def test_proxy_split_ceil_rule():
    rs = _numbered_records(3)
    proxy, holdout = data.make_proxy_split(rs, 0.5, seed=4)
    assert len(proxy) == 1 and len(holdout) == 2


def test_proxy_split_deterministic():
    rs = _numbered_records(40)
    a = data.make_proxy_split(rs, 0.25, seed=7)
    b = data.make_proxy_split(rs, 0.25, seed=7)
    assert a[0].numeric.tolist() == b[0].numeric.tolist()
    assert a[1].numeric.tolist() == b[1].numeric.tolist()


def test_proxy_split_fraction_range():
    rs = _numbered_records(5)
    for bad in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(InputError):
            data.make_proxy_split(rs, bad, seed=1)


def test_dataset_container_roundtrip(tmp_path, rng):
    X = rng.normal(size=(17, 5)).astype(np.float32)
    y = rng.integers(0, 2, 17).astype(np.uint8)
    p = tmp_path / "x.fftd"
    data.write_dataset(p, X, y)
    X2, y2 = data.read_dataset(p)
    assert X2.tobytes() == X.tobytes()
    assert y2.tobytes() == y.tobytes()


def test_dataset_container_corruption(tmp_path, rng):
    X = rng.normal(size=(4, 3)).astype(np.float32)
    y = np.zeros(4, dtype=np.uint8)
    p = tmp_path / "x.fftd"
    data.write_dataset(p, X, y)
    raw = bytearray(p.read_bytes())

    bad_magic = tmp_path / "bad_magic.fftd"
    bad_magic.write_bytes(b"NOPE" + bytes(raw[4:]))
    with pytest.raises(ContainerError, match="bad magic"):
        data.read_dataset(bad_magic)

    truncated = tmp_path / "trunc.fftd"
    truncated.write_bytes(bytes(raw[:-3]))
    with pytest.raises(ContainerError, match="size mismatch"):
        data.read_dataset(truncated)

    bad_version = tmp_path / "ver.fftd"
    raw2 = bytearray(raw)
    raw2[4] = 99
    bad_version.write_bytes(bytes(raw2))
    with pytest.raises(ContainerError, match="version"):
        data.read_dataset(bad_version)


def test_pipeline_determinism(vocab):
    raw = generate_nslkdd_like(600, seed=21)
    outs = []
    for _ in range(2):
        rs = data.parse_csv(raw)
        parts = data.prepare_client_partitions(rs, vocab, 3, 8, partition_seed=5)
        outs.append([(p.features.tobytes(), p.labels.tobytes()) for p in parts])
    assert outs[0] == outs[1]


def test_pipeline_counts_consistency(vocab, demo_records):
    X = data.encode_features(demo_records, vocab)
    y = data.binarize_labels(demo_records)
    assert X.shape == (len(demo_records), 122)
    normals = int(np.sum(demo_records.labels == "normal"))
    assert int(np.sum(y == 0)) == normals


def test_bundle_roundtrip(tmp_path, demo_bundle):
    written = data.write_bundle(demo_bundle, tmp_path)
    assert len(written) == 5
    loaded = data.load_bundle(tmp_path, 3)
    for a, b in zip(demo_bundle.partitions, loaded.partitions):
        assert a.features.tobytes() == b.features.tobytes()
        assert a.labels.tobytes() == b.labels.tobytes()
    assert loaded.proxy[0].tobytes() == demo_bundle.proxy[0].tobytes()
    assert loaded.eval_set[1].tobytes() == demo_bundle.eval_set[1].tobytes()


# --- real-dataset checks (skip when the files are absent) -------------------


def test_real_train_counts():
    from conftest import require_nslkdd

    train_path, _ = require_nslkdd()
    rs = data.parse_csv_file(train_path)
    assert len(rs) == 125_973
    assert int(np.sum(rs.labels == "normal")) == 67_343
    assert int(np.sum(data.binarize_labels(rs) == 0)) == 67_343


def test_real_test_counts():
    from conftest import require_nslkdd

    _, test_path = require_nslkdd()
    rs = data.parse_csv_file(test_path)
    assert len(rs) == 22_543
