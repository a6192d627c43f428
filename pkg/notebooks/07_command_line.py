"""
Running the whole study
=======================

The command line runs five cached stages.  This script drives it with the
small config and shows that a second run has nothing to do.
"""

import json
import tempfile
from pathlib import Path

from xferepi.cli import main

config = Path(__file__).resolve().parents[1] / "configs" / "small.yaml"
out = Path(tempfile.mkdtemp()) / "run"

print("exit code:", main(["validate", "--config", str(config)]))
print("exit code:", main(["all", "--config", str(config), "--out", str(out)]))
print("exit code:", main(["all", "--config", str(config), "--out", str(out)]))

manifest = json.loads((out / "manifest.json").read_text())
for stage, entry in manifest["stages"].items():
    print(f"{stage:<9} {entry['seconds']:7.2f}s  {len(entry['artifacts'])} files")
print((out / "report" / "summary.txt").read_text())
