"""Command-line entry point: prepare data, run experiments, compare reports.

Exit codes: 0 success, 2 input error (files, config, flags), 3 runtime or
transport failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import federation, nn
from .config import FedftConfig, load_config
from .data import (
    CategoryVocab,
    DatasetBundle,
    load_bundle,
    load_partition,
    parse_csv_file,
    prepare_client_partitions,
    prepare_server_split,
    write_bundle,
)
from .errors import FedftError, InputError
from .metrics import emit_report, load_report, time_block
from .transport import Listener, connect

MANIFEST_NAME = "manifest.json"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedft",
        description="Hybrid server-edge federated fine-tuning for intrusion detection.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_prep = sub.add_parser("prepare", help="parse NSL-KDD files and write client/proxy/eval containers")
    p_prep.add_argument("--config", metavar="PATH", help="JSON config file")
    p_prep.add_argument("--out", metavar="DIR", help="output directory (default: config dataset.prepared_dir)")

    p_run = sub.add_parser("run", help="run an experiment and emit reports")
    p_run.add_argument("--config", metavar="PATH", help="JSON config file")
    p_run.add_argument("--mode", choices=("centralized", "simulate", "serve", "client"),
                       default="simulate", help="deployment role (default: simulate)")
    p_run.add_argument("--listen", metavar="HOST:PORT", help="serve: address to listen on")
    p_run.add_argument("--server", metavar="HOST:PORT", help="client: server address to connect to")
    p_run.add_argument("--client-id", type=int, metavar="N", help="client: which shard this process owns")
    p_run.add_argument("--out", metavar="DIR", default="reports", help="report output directory")

    p_rep = sub.add_parser("report", help="tabulate one or more experiment reports")
    p_rep.add_argument("paths", nargs="+", metavar="REPORT.json")
    p_rep.add_argument("--csv", metavar="PATH", help="also write the table as CSV")
    return parser


def cmd_prepare(cfg: FedftConfig, out_dir: str | None) -> int:
    vocab = CategoryVocab()
    train = parse_csv_file(cfg.dataset.train_path)
    test = parse_csv_file(cfg.dataset.test_path)
    print(f"parsed {cfg.dataset.train_path}: {len(train)} rows")
    print(f"parsed {cfg.dataset.test_path}: {len(test)} rows")

    partitions = prepare_client_partitions(
        train, vocab, cfg.federation.n_clients, cfg.dataset.pca_k, cfg.federation.seeds.partition,
    )
    proxy, eval_set = prepare_server_split(
        test, vocab, cfg.dataset.pca_k, cfg.dataset.eval_fraction, cfg.federation.seeds.partition,
    )
    bundle = DatasetBundle(partitions=partitions, proxy=proxy, eval_set=eval_set)
    target = Path(out_dir) if out_dir else Path(cfg.dataset.prepared_dir)
    written = write_bundle(bundle, target)
    manifest = {
        "n_clients": cfg.federation.n_clients,
        "pca_k": cfg.dataset.pca_k,
        "eval_fraction": cfg.dataset.eval_fraction,
        "seeds": {"init": cfg.federation.seeds.init, "partition": cfg.federation.seeds.partition,
                  "shuffle": cfg.federation.seeds.shuffle},
        "rows": {p.name: int(n) for p, n in zip(
            written,
            [part.n_rows for part in partitions] + [proxy[0].shape[0], eval_set[0].shape[0]],
        )},
    }
    (target / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    for p in written:
        print(f"wrote {p}: {manifest['rows'][p.name]} rows")
    return 0


def _check_manifest(cfg: FedftConfig, prepared: Path) -> None:
    mf = prepared / MANIFEST_NAME
    if not mf.exists():
        return  # bundles written by other tools are fine if the files line up
    doc = json.loads(mf.read_text())
    if doc.get("n_clients") != cfg.federation.n_clients:
        raise InputError(
            f"{mf}: prepared for {doc.get('n_clients')} clients, config wants {cfg.federation.n_clients} "
            "(re-run prepare)"
        )
    if doc.get("pca_k") != cfg.dataset.pca_k:
        raise InputError(f"{mf}: prepared with pca_k={doc.get('pca_k')}, config wants {cfg.dataset.pca_k}")


def _emit(report, out_dir: str, label: str) -> None:
    out = Path(out_dir)
    json_path = emit_report(report, "json", out / f"{label}.json")
    csv_path = emit_report(report, "csv", out / f"{label}.csv")
    print(f"final accuracy {report.final_accuracy:.4f}, loss {report.final_loss:.4f}")
    print(f"wrote {json_path} and {csv_path}")


def cmd_run(cfg: FedftConfig, args: argparse.Namespace) -> int:
    prepared = Path(cfg.dataset.prepared_dir)
    if args.mode in ("centralized", "simulate", "serve"):
        _check_manifest(cfg, prepared)

    if args.mode == "centralized":
        exp = cfg.experiment_config("centralized")
        bundle = load_bundle(prepared, cfg.federation.n_clients)
        report, _ = federation.run_experiment(exp, bundle)
        _emit(report, args.out, "centralized")
        return 0

    if args.mode == "simulate":
        exp = cfg.experiment_config(cfg.training.algorithm)
        bundle = load_bundle(prepared, cfg.federation.n_clients)
        report, _ = federation.run_experiment(exp, bundle)
        _emit(report, args.out, report.framework)
        return 0

    if args.mode == "serve":
        return _cmd_serve(cfg, args)

    return _cmd_client(cfg, args)


def _cmd_serve(cfg: FedftConfig, args: argparse.Namespace) -> int:
    exp = cfg.experiment_config(cfg.training.algorithm)
    bundle = load_bundle(Path(cfg.dataset.prepared_dir), cfg.federation.n_clients)
    endpoint = args.listen or cfg.transport.listen
    listener = Listener(endpoint)
    print(f"listening on {listener.endpoint}, waiting for {exp.n_clients} clients")
    try:
        channels = [listener.accept(timeout=cfg.transport.accept_timeout_s) for _ in range(exp.n_clients)]
        channels_by_id = federation.collect_hellos(channels, exp.n_clients)
        print(f"clients connected: {sorted(channels_by_id)}")
        if exp.mode == "fedft":
            ft = exp.client_config()
            params = federation.pretrain(
                exp.arch, *bundle.proxy, epochs=exp.pretrain_epochs,
                batch_size=ft.batch_size, learning_rate=ft.learning_rate, momentum=ft.momentum,
                init_seed=exp.seeds.init, shuffle_seed=exp.seeds.shuffle,
            )
        else:
            params = nn.init_params(exp.arch, exp.seeds.init)
        with time_block("serve") as total:
            rounds, params = federation.server_session(
                channels_by_id, exp.arch, params, exp.n_rounds, bundle.eval_set, exp.eval_threshold,
                expected_tensor_names=nn.trainable_tensor_names(exp.arch, exp.client_config()),
            )
        report = federation.assemble_report(exp, exp.client_config(), rounds, total.elapsed_ms)
        _emit(report, args.out, report.framework)
        return 0
    finally:
        listener.close()


def _cmd_client(cfg: FedftConfig, args: argparse.Namespace) -> int:
    if args.client_id is None:
        raise InputError("run --mode client requires --client-id")
    exp = cfg.experiment_config(cfg.training.algorithm)
    shard = load_partition(Path(cfg.dataset.prepared_dir), args.client_id)
    endpoint = args.server or cfg.transport.server
    channel = connect(endpoint, retries=25, retry_delay=0.2)
    print(f"client {args.client_id}: connected to {endpoint}, shard of {shard.n_rows} rows")
    federation.client_session(channel, exp.arch, exp.client_config(), shard, exp.seeds.shuffle)
    print(f"client {args.client_id}: done")
    return 0


def cmd_report(paths: list[str], csv_out: str | None) -> int:
    rows = []
    for path in paths:
        rep = load_report(path)
        rows.append((
            rep.framework,
            rep.final_accuracy,
            rep.final_loss,
            rep.memory.total_bytes / 1e6,
            rep.mean_client_time_ms / 1e3,
        ))
    headers = ("framework", "accuracy", "loss", "memory_mb", "client_time_s")
    widths = [max(len(headers[i]), *(len(_cell(r[i])) for r in rows)) for i in range(len(headers))]
    print("  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)))
    for r in rows:
        print("  ".join(_cell(v).ljust(widths[i]) for i, v in enumerate(r)))
    if csv_out:
        lines = [",".join(headers)]
        lines += [",".join(_cell(v) for v in r) for r in rows]
        Path(csv_out).write_text("\n".join(lines) + "\n")
        print(f"wrote {csv_out}")
    return 0


def _cell(v: object) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "prepare":
            cfg = load_config(args.config)
            return cmd_prepare(cfg, args.out)
        if args.command == "run":
            cfg = load_config(args.config)
            return cmd_run(cfg, args)
        return cmd_report(args.paths, args.csv)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FedftError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
