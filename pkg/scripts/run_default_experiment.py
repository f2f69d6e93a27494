#!/usr/bin/env python3
"""Run the shipped default scenario and drop all artifacts under runs/default.

Equivalent to:

    fragfield experiment --config configs/default_experiment.json --out runs/default

Expect a few minutes of wall time: the sweep covers 3 prior widths x 2
sampling strategies x 2 update modes, with per-step GP refits in gp mode.
"""

import pathlib
import sys

from fragfield.cli import main

ROOT = pathlib.Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    out = ROOT / "runs" / "default"
    code = main(
        [
            "experiment",
            "--config",
            str(ROOT / "configs" / "default_experiment.json"),
            "--out",
            str(out),
        ]
    )
    if code == 0:
        print(f"metrics:    {out / 'metrics.csv'}")
        print(f"trajectory: {out / 'trajectory.csv'}")
        print(f"fields:     {out / 'fields'}")
        print(f"manifest:   {out / 'manifest.json'}")
    sys.exit(code)
