"""Synthetic NSL-KDD-format traffic for demos and data-independent tests.

Rows follow the 43-field file layout (41 features, label, difficulty) with
class-conditional feature distributions: attack rows imitate SYN-flood /
sweep signatures (high connection counts, high SYN-error rates, S0/REJ
flags), normal rows imitate established sessions. The task is learnable but
not degenerate. Real-dataset acceptance numbers are never asserted on this.
"""

from __future__ import annotations

import numpy as np

NORMAL_SERVICES = ("http", "smtp", "ftp_data", "domain_u", "other", "telnet")
NORMAL_SERVICE_P = (0.45, 0.12, 0.12, 0.16, 0.10, 0.05)
ATTACK_SERVICES = ("private", "http", "ecr_i", "ftp", "telnet", "other")
ATTACK_SERVICE_P = (0.50, 0.15, 0.15, 0.05, 0.10, 0.05)

ATTACK_LABELS = ("neptune", "smurf", "ipsweep", "portsweep", "satan")
ATTACK_LABEL_P = (0.60, 0.15, 0.09, 0.08, 0.08)


def generate_nslkdd_like(n_rows: int, seed: int, attack_fraction: float = 0.47,
                         label_noise: float = 0.03, difficulty_column: bool = True) -> bytes:
    """Comma-separated NSL-KDD-format text, one record per line, no header.

    ``label_noise`` relabels that fraction of rows against their generated
    features, bounding attainable accuracy away from 1.0.
    """
    rng = np.random.default_rng(seed)
    is_attack = rng.random(n_rows) < attack_fraction
    n = n_rows

    def pick(options: tuple[str, ...], probs: tuple[float, ...], mask: np.ndarray, out: np.ndarray) -> None:
        k = int(mask.sum())
        if k:
            out[mask] = rng.choice(options, size=k, p=np.asarray(probs) / np.sum(probs))

    labels = np.full(n, "normal", dtype=object)
    pick(ATTACK_LABELS, ATTACK_LABEL_P, is_attack, labels)
    if label_noise > 0.0:
        flip = rng.random(n) < label_noise
        labels[flip & is_attack] = "normal"
        pick(ATTACK_LABELS, ATTACK_LABEL_P, flip & ~is_attack, labels)

    protocol = np.full(n, "tcp", dtype=object)
    pick(("tcp", "udp", "icmp"), (0.70, 0.22, 0.08), ~is_attack, protocol)
    pick(("tcp", "icmp", "udp"), (0.78, 0.17, 0.05), is_attack, protocol)

    service = np.empty(n, dtype=object)
    pick(NORMAL_SERVICES, NORMAL_SERVICE_P, ~is_attack, service)
    pick(ATTACK_SERVICES, ATTACK_SERVICE_P, is_attack, service)

    flag = np.empty(n, dtype=object)
    pick(("SF", "S1", "REJ"), (0.90, 0.05, 0.05), ~is_attack, flag)
    pick(("S0", "REJ", "SF", "RSTO"), (0.55, 0.20, 0.15, 0.10), is_attack, flag)

    def mixed(normal_draw, attack_draw):
        out = np.empty(n)
        out[~is_attack] = normal_draw(int((~is_attack).sum()))
        out[is_attack] = attack_draw(int(is_attack.sum()))
        return out

    duration = mixed(lambda k: rng.exponential(40.0, k), lambda k: rng.exponential(1.0, k)).astype(np.int64)
    src_bytes = mixed(lambda k: rng.lognormal(5.5, 1.2, k), lambda k: rng.lognormal(1.0, 2.0, k)).astype(np.int64)
    dst_bytes = mixed(lambda k: rng.lognormal(6.0, 1.5, k), lambda k: rng.lognormal(0.5, 1.5, k)).astype(np.int64)
    logged_in = mixed(lambda k: rng.random(k) < 0.72, lambda k: rng.random(k) < 0.04).astype(np.int64)
    count = mixed(lambda k: rng.poisson(9.0, k), lambda k: rng.poisson(130.0, k)).astype(np.int64)
    srv_count = mixed(lambda k: rng.poisson(7.0, k), lambda k: rng.poisson(16.0, k)).astype(np.int64)
    serror_rate = mixed(lambda k: rng.beta(1.0, 24.0, k), lambda k: rng.beta(18.0, 2.0, k))
    rerror_rate = mixed(lambda k: rng.beta(1.0, 30.0, k), lambda k: rng.beta(3.0, 8.0, k))
    same_srv_rate = mixed(lambda k: rng.beta(12.0, 2.0, k), lambda k: rng.beta(2.0, 7.0, k))
    diff_srv_rate = mixed(lambda k: rng.beta(1.0, 14.0, k), lambda k: rng.beta(5.0, 6.0, k))
    dst_host_count = mixed(lambda k: rng.integers(1, 256, k).astype(float),
                           lambda k: np.full(k, 255.0) - rng.integers(0, 6, k))
    dst_host_srv_count = mixed(lambda k: rng.integers(1, 256, k).astype(float),
                               lambda k: rng.integers(1, 30, k).astype(float))
    dst_host_serror = mixed(lambda k: rng.beta(1.0, 24.0, k), lambda k: rng.beta(16.0, 2.0, k))
    hot = mixed(lambda k: rng.poisson(0.2, k), lambda k: rng.poisson(0.4, k)).astype(np.int64)

    noise_rate = lambda: np.round(rng.beta(2.0, 6.0, n), 2)
    small_int = lambda lam: rng.poisson(lam, n)

    rate = lambda a: np.round(a, 2)
    columns: list[np.ndarray] = [
        duration,                    # 0 duration
        protocol,                    # 1 protocol_type
        service,                     # 2 service
        flag,                        # 3 flag
        src_bytes,                   # 4 src_bytes
        dst_bytes,                   # 5 dst_bytes
        (rng.random(n) < 0.001).astype(np.int64),  # 6 land
        small_int(0.02),             # 7 wrong_fragment
        small_int(0.005),            # 8 urgent
        hot,                         # 9 hot
        small_int(0.02),             # 10 num_failed_logins
        logged_in,                   # 11 logged_in
        small_int(0.03),             # 12 num_compromised
        small_int(0.002),            # 13 root_shell
        small_int(0.002),            # 14 su_attempted
        small_int(0.01),             # 15 num_root
        small_int(0.01),             # 16 num_file_creations
        small_int(0.005),            # 17 num_shells
        small_int(0.01),             # 18 num_access_files
        np.zeros(n, dtype=np.int64), # 19 num_outbound_cmds, constant zero as in the real files
        np.zeros(n, dtype=np.int64), # 20 is_host_login
        (rng.random(n) < 0.01).astype(np.int64),  # 21 is_guest_login
        count,                       # 22 count
        srv_count,                   # 23 srv_count
        rate(serror_rate),           # 24 serror_rate
        rate(serror_rate * rng.uniform(0.8, 1.0, n)),  # 25 srv_serror_rate
        rate(rerror_rate),           # 26 rerror_rate
        rate(rerror_rate * rng.uniform(0.8, 1.0, n)),  # 27 srv_rerror_rate
        rate(same_srv_rate),         # 28 same_srv_rate
        rate(diff_srv_rate),         # 29 diff_srv_rate
        noise_rate(),                # 30 srv_diff_host_rate
        dst_host_count.astype(np.int64),      # 31 dst_host_count
        dst_host_srv_count.astype(np.int64),  # 32 dst_host_srv_count
        rate(same_srv_rate * rng.uniform(0.7, 1.0, n)),  # 33 dst_host_same_srv_rate
        rate(diff_srv_rate * rng.uniform(0.7, 1.0, n)),  # 34 dst_host_diff_srv_rate
        noise_rate(),                # 35 dst_host_same_src_port_rate
        noise_rate(),                # 36 dst_host_srv_diff_host_rate
        rate(dst_host_serror),       # 37 dst_host_serror_rate
        rate(dst_host_serror * rng.uniform(0.8, 1.0, n)),  # 38 dst_host_srv_serror_rate
        rate(rerror_rate * rng.uniform(0.7, 1.0, n)),      # 39 dst_host_rerror_rate
        noise_rate(),                # 40 dst_host_srv_rerror_rate
        labels,                      # 41 label
    ]
    if difficulty_column:
        columns.append(rng.integers(0, 22, n))

    def fmt(v: object) -> str:
        if isinstance(v, (np.floating, float)):
            return f"{float(v):.2f}"
        return str(v)

    lines = [",".join(fmt(col[i]) for col in columns) for i in range(n)]
    return ("\n".join(lines) + "\n").encode()
