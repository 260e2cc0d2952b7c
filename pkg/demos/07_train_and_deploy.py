"""Train a real model and deploy it through the engine, via the two CLIs.

The trainer package (matchtrain) and the engine (matchplane) interact
only through files: traces in, bundle out, verified and replayed by the
engine. Takes ~10 s on a laptop CPU.
"""

import json
import subprocess
import sys
import tempfile
from pathlib import Path


def run(*args):
    print("$", " ".join(args))
    proc = subprocess.run(args, capture_output=True, text=True)
    if proc.returncode != 0:
        print(proc.stdout, proc.stderr)
        sys.exit(proc.returncode)
    for line in (proc.stderr or proc.stdout).strip().splitlines()[-3:]:
        print("  " + line)
    return proc


with tempfile.TemporaryDirectory() as tmp:
    d = Path(tmp)
    run(sys.executable, "-m", "matchplane.cli", "synth",
        "--flows", "400", "--seed", "11", "-o", str(d / "raw.txt"))
    run(sys.executable, "-m", "matchplane.cli", "replay",
        "-i", str(d / "raw.txt"), "--load", "1000", "-o", str(d / "t.txt"))
    run(sys.executable, "-m", "matchtrain.cli", "train",
        "--trace", str(d / "t.txt"), "--out", str(d / "bundle.json"),
        "--window", "8", "--ev-width", "4", "--h-width", "5",
        "--epochs", "12", "--seed", "0")
    run(sys.executable, "-m", "matchplane.cli", "verify",
        "--bundle", str(d / "bundle.json"))
    run(sys.executable, "-m", "matchplane.cli", "run",
        "--bundle", str(d / "bundle.json"), "--trace", str(d / "t.txt"),
        "--report", str(d / "report.json"))
    doc = json.loads((d / "report.json").read_text())
    print()
    print(f"deployed model: counts={doc['counts']}")
    print(f"packet-level macro-F1 = {doc['macro_f1']:.4f}")
