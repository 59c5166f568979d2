#!/usr/bin/env python3
"""Compare undefended vs defended (epsilon = 16) attack strength on TransE
and print the mean best-F1 drop across the three attacks."""

import argparse
import time
from pathlib import Path

import numpy as np

from fkgelab.cli import output_root
from fkgelab.config import load_config
from fkgelab.experiment import run_experiment, write_artifacts

ATTACKS = ["cip_transe", "cia_transe", "si_transe"]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--configs", default=str(Path(__file__).resolve().parents[1] / "configs"))
    args = ap.parse_args()

    rows = {}
    for kind in ("attack", "defended"):
        for cell in ATTACKS:
            cfg = load_config(Path(args.configs) / f"{kind}_{cell}.cfg")
            t0 = time.time()
            result = run_experiment(cfg)
            write_artifacts(cfg, result, output_root() / f"{kind}_{cell}")
            rows[(kind, cell)] = result.best.best_f1
            print(f"{kind}_{cell:14s} best_f1 {result.best.best_f1:.4f} "
                  f"({time.time() - t0:.0f}s)")
    undef = np.mean([rows[("attack", c)] for c in ATTACKS])
    defended = np.mean([rows[("defended", c)] for c in ATTACKS])
    print(f"mean best_f1: undefended {undef:.4f}, defended {defended:.4f}, "
          f"drop {undef - defended:.4f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
