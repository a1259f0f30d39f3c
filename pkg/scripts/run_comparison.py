#!/usr/bin/env python3
"""Run the four-framework comparison on prepared data and print the table.

Runs centralized, full-model FedAvg, and federated fine-tuning with 3 and 1
trainable FC layers over the same prepared bundle, then tabulates accuracy,
loss, modeled memory, and client training time.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from fedft import federation
from fedft.cli import cmd_report
from fedft.config import load_config
from fedft.data import load_bundle
from fedft.metrics import emit_report


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", metavar="PATH", help="JSON config file")
    parser.add_argument("--out", default="reports", help="report directory (default: reports)")
    args = parser.parse_args()

    cfg = load_config(args.config)
    bundle = load_bundle(Path(cfg.dataset.prepared_dir), cfg.federation.n_clients)
    out = Path(args.out)

    paths = []
    for mode, k in (("centralized", None), ("fedavg_full", None), ("fedft", 3), ("fedft", 1)):
        exp = cfg.experiment_config(mode)
        if k is not None:
            exp = replace(exp, fine_tune=replace(exp.fine_tune, trainable_fc_tail=k))
        print(f"running {exp.framework_name()} ...")
        report, _ = federation.run_experiment(exp, bundle)
        path = emit_report(report, "json", out / f"{report.framework}.json")
        emit_report(report, "csv", out / f"{report.framework}.csv")
        paths.append(str(path))
        print(f"  final accuracy {report.final_accuracy:.4f}, loss {report.final_loss:.4f}")

    print()
    return cmd_report(paths, csv_out=str(out / "comparison.csv"))


if __name__ == "__main__":
    sys.exit(main())
