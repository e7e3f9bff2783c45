"""The command-line pipeline end to end, driven from Python.

Equivalent shell session:

    firzen synth --out runs/demo --n-users 300 --n-items 150 --n-clusters 6
    firzen build --config runs/demo/config.ini
    firzen train --config runs/demo/config.ini
    firzen eval --config runs/demo/config.ini --setting cold --setting warm --setting normal_cold
    firzen export-embeddings --config runs/demo/config.ini

Run: python demos/04_cli_pipeline.py [workdir]
"""
import sys
import tempfile
from pathlib import Path

from firzen.cli import main

work = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="firzen-"))
config = str(work / "config.ini")
steps = [
    ["synth", "--out", str(work), "--n-users", "300", "--n-items", "150", "--n-clusters", "6"],
    ["build", "--config", config],
    ["train", "--config", config],
    ["eval", "--config", config, "--setting", "cold", "--setting", "warm", "--setting", "normal_cold"],
    ["export-embeddings", "--config", config],
]
for argv in steps:
    print("$ firzen " + " ".join(argv))
    if main(argv) != 0:
        sys.exit(1)
print(f"artifacts in {work / 'out'}")
