from __future__ import annotations

import hashlib
import json
from pathlib import Path

import pytest

from fedft.cli import main
from fedft.synthetic import generate_nslkdd_like


def write_inputs(root: Path, rounds: int = 2, n_clients: int = 3, extra: dict | None = None) -> Path:
    (root / "data").mkdir(parents=True, exist_ok=True)
    (root / "data/train.txt").write_bytes(generate_nslkdd_like(1800, seed=5))
    (root / "data/test.txt").write_bytes(generate_nslkdd_like(900, seed=6))
    doc = {
        "dataset": {"train_path": "data/train.txt", "test_path": "data/test.txt", "pca_k": 8},
        "training": {"rounds": rounds, "pretrain_epochs": 1, "local_epochs": 1},
        "federation": {"n_clients": n_clients},
    }
    if extra:
        for section, vals in extra.items():
            doc.setdefault(section, {}).update(vals)
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(doc))
    return cfg


def checksums(d: Path) -> dict[str, str]:
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(d.glob("*.fftd"))}


def test_help_exits_zero(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for word in ("prepare", "run", "report"):
        assert word in out


def test_run_help_documents_every_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for flag in ("--config", "--mode", "--listen", "--server", "--client-id", "--out"):
        assert flag in out


def test_invalid_flag_exits_nonzero():
    with pytest.raises(SystemExit) as exc:
        main(["run", "--bogus"])
    assert exc.value.code == 2


def test_missing_dataset_path_exit_2(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"dataset": {"train_path": "nope.txt", "test_path": "also_nope.txt"}}))
    assert main(["prepare", "--config", str(cfg)]) == 2
    assert "nope.txt" in capsys.readouterr().err


def test_unknown_config_key_exit_2(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"training": {"batchsize": 16}}))
    assert main(["prepare", "--config", str(cfg)]) == 2
    assert "batchsize" in capsys.readouterr().err


def test_prepare_writes_partitions_and_manifest(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    cfg = write_inputs(tmp_path)
    assert main(["prepare", "--config", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert "parsed data/train.txt: 1800 rows" in out
    prepared = tmp_path / "prepared"
    names = {p.name for p in prepared.iterdir()}
    assert names == {"client_00.fftd", "client_01.fftd", "client_02.fftd",
                     "proxy.fftd", "eval.fftd", "manifest.json"}
    manifest = json.loads((prepared / "manifest.json").read_text())
    assert manifest["rows"]["client_00.fftd"] == 600
    assert manifest["rows"]["eval.fftd"] == 90


def test_prepare_deterministic_checksums(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    cfg = write_inputs(tmp_path)
    assert main(["prepare", "--config", str(cfg), "--out", "p1"]) == 0
    assert main(["prepare", "--config", str(cfg), "--out", "p2"]) == 0
    assert checksums(tmp_path / "p1") == checksums(tmp_path / "p2")


def test_env_seed_overrides_partitioning(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    cfg = write_inputs(tmp_path)
    monkeypatch.setenv("FEDFT_SEED", "41")
    assert main(["prepare", "--config", str(cfg), "--out", "a"]) == 0
    monkeypatch.setenv("FEDFT_SEED", "42")
    assert main(["prepare", "--config", str(cfg), "--out", "b"]) == 0
    monkeypatch.setenv("FEDFT_SEED", "42")
    assert main(["prepare", "--config", str(cfg), "--out", "c"]) == 0
    assert checksums(tmp_path / "b") == checksums(tmp_path / "c")
    assert checksums(tmp_path / "a") != checksums(tmp_path / "b")


def test_run_simulate_emits_reports(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    cfg = write_inputs(tmp_path, rounds=2)
    assert main(["prepare", "--config", str(cfg)]) == 0
    assert main(["run", "--config", str(cfg), "--mode", "simulate", "--out", "reports"]) == 0
    out = capsys.readouterr().out
    assert "final accuracy" in out
    report = json.loads((tmp_path / "reports/fedft-3.json").read_text())
    assert len(report["rounds"]) == 2
    csv_lines = (tmp_path / "reports/fedft-3.csv").read_text().strip().split("\n")
    assert len(csv_lines) == 3  # header + 2 rounds


def test_run_centralized(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    cfg = write_inputs(tmp_path)
    assert main(["prepare", "--config", str(cfg)]) == 0
    assert main(["run", "--config", str(cfg), "--mode", "centralized", "--out", "reports"]) == 0
    report = json.loads((tmp_path / "reports/centralized.json").read_text())
    assert report["framework"] == "centralized"
    assert len(report["rounds"]) == 1


def test_run_rejects_stale_prepared_data(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    cfg = write_inputs(tmp_path)
    assert main(["prepare", "--config", str(cfg)]) == 0
    cfg2 = write_inputs(tmp_path, n_clients=4)
    assert main(["run", "--config", str(cfg2), "--mode", "simulate"]) == 2
    assert "re-run prepare" in capsys.readouterr().err


def test_serve_times_out_without_clients_exit_3(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    cfg = write_inputs(tmp_path, extra={"transport": {"accept_timeout_s": 0.2}})
    assert main(["prepare", "--config", str(cfg)]) == 0
    rc = main(["run", "--config", str(cfg), "--mode", "serve", "--listen", "127.0.0.1:0"])
    assert rc == 3
    assert "timeout" in capsys.readouterr().err


def test_client_requires_client_id(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    cfg = write_inputs(tmp_path)
    assert main(["prepare", "--config", str(cfg)]) == 0
    assert main(["run", "--config", str(cfg), "--mode", "client"]) == 2
    assert "--client-id" in capsys.readouterr().err


def test_client_refused_connection_exit_3(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    cfg = write_inputs(tmp_path)
    assert main(["prepare", "--config", str(cfg)]) == 0
    rc = main(["run", "--config", str(cfg), "--mode", "client", "--client-id", "0",
               "--server", "127.0.0.1:1"])
    assert rc == 3


def test_report_single_and_multiple(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    cfg = write_inputs(tmp_path)
    assert main(["prepare", "--config", str(cfg)]) == 0
    assert main(["run", "--config", str(cfg), "--mode", "simulate", "--out", "r"]) == 0
    assert main(["run", "--config", str(cfg), "--mode", "centralized", "--out", "r"]) == 0
    capsys.readouterr()
    assert main(["report", "r/fedft-3.json"]) == 0
    out = capsys.readouterr().out
    assert out.count("\n") == 2  # header + one row
    assert main(["report", "r/fedft-3.json", "r/centralized.json", "--csv", "cmp.csv"]) == 0
    out = capsys.readouterr().out
    assert "centralized" in out and "fedft-3" in out
    assert (tmp_path / "cmp.csv").read_text().count("\n") == 3


def test_report_mixed_schema_names_file(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    cfg = write_inputs(tmp_path)
    assert main(["prepare", "--config", str(cfg)]) == 0
    assert main(["run", "--config", str(cfg), "--mode", "simulate", "--out", "r"]) == 0
    doc = json.loads((tmp_path / "r/fedft-3.json").read_text())
    doc["schema_version"] = 9
    (tmp_path / "r/old.json").write_text(json.dumps(doc))
    assert main(["report", "r/fedft-3.json", "r/old.json"]) == 2
    assert "old.json" in capsys.readouterr().err
