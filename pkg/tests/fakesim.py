"""Tiny simulator stand-in for launcher/CLI tests.

Writes a four-scalar results.sca whose values depend on the config.  Exits
with $FAKESIM_EXIT when $CAMPAIGN_RUNKEY equals $FAKESIM_FAIL_KEY.
"""
import argparse
import os
import sys
from pathlib import Path

ap = argparse.ArgumentParser()
ap.add_argument("--config", required=True)
ap.add_argument("--out", required=True)
args = ap.parse_args()

key = os.environ["CAMPAIGN_RUNKEY"]
if key == os.environ.get("FAKESIM_FAIL_KEY"):
    sys.exit(int(os.environ.get("FAKESIM_EXIT", "3")))

values = {}
for line in Path(args.config).read_text().splitlines():
    if "=" in line and not line.startswith("#"):
        k, v = line.split("=", 1)
        values[k.strip().rsplit(".", 1)[-1]] = v.strip()
body, rep = key.rsplit("#r=", 1)
seed = int(os.environ["CAMPAIGN_SEED"])
x = sum(float(v) for k, v in values.items() if k.startswith("fact")) + int(rep)
out = Path(args.out)
lines = ["version 3", f"run {key}"]
lines += [f"itervar {item.split('=')[0]} {item.split('=')[1]}" for item in body.split(",") if item]
lines += [
    f"attr seed {seed}",
    f"scalar net.sink meanSojourn {x!r}",
    f"scalar net.sink meanQueueWait {x / 2!r}",
    f"scalar net.sink throughput {1.0 / (1 + x)!r}",
    "scalar net.sink servedCount 10",
]
(out / "results.sca").write_text("\n".join(lines) + "\n")
(out / "results.vec").write_text("vector 0 net.sink sojourn TV\n0 0.5 1.0\n0 1.5 2.0\n")
