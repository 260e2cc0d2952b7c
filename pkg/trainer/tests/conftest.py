import subprocess
import sys

import numpy as np
import pytest

from matchtrain.config import TrainConfig
from matchtrain import data


def run_primary(args, check=True):
    """Invoke the engine CLI as a subprocess (file formats are the contract)."""
    proc = subprocess.run(
        [sys.executable, "-m", "matchplane.cli", *args],
        capture_output=True,
        text=True,
    )
    if check and proc.returncode != 0:
        raise AssertionError(
            f"primary CLI failed ({proc.returncode}):\n{proc.stdout}\n{proc.stderr}"
        )
    return proc


def write_trace(path, flows):
    """flows: list of (key_tuple, [(time_us, length)], label)."""
    lines = []
    for key, pkts, label in flows:
        src, dst, sport, dport, proto = key
        for t, length in pkts:
            lines.append((t, f"{t} {src} {dst} {sport} {dport} {proto} {length} {label}"))
    lines.sort()
    with open(path, "w") as fp:
        fp.write("# matchplane-trace v1\n")
        for _, line in lines:
            fp.write(line + "\n")


def toy_flows(n_flows=40, n_pkts=12, seed=0):
    rng = np.random.default_rng(seed)
    flows = []
    for i in range(n_flows):
        label = i % 2
        key = (f"10.0.{i >> 8}.{i & 255}", "192.168.0.1", 1024 + i, 443, 6 if label == 0 else 17)
        t = i * 1000
        pkts = []
        for _ in range(n_pkts):
            t += int(rng.integers(500, 3000) if label == 0 else rng.integers(20000, 50000))
            length = int(rng.integers(80, 160) if label == 0 else rng.integers(900, 1300))
            pkts.append((t, length))
        flows.append((key, pkts, label))
    return flows


@pytest.fixture()
def toy_trace(tmp_path):
    path = tmp_path / "toy.txt"
    write_trace(str(path), toy_flows())
    return str(path)


@pytest.fixture()
def small_cfg():
    return TrainConfig(
        window_size=4,
        n_classes=2,
        ev_width=3,
        h_width=4,
        len_embed_width=4,
        ipd_embed_width=4,
        len_input_bits=6,
        ipd_input_bits=6,
        epochs=4,
        seed=0,
    )


def load_segments(trace_path, cfg):
    flows = data.split_flows(data.read_trace(trace_path))
    return data.slice_segments(flows, cfg)
