"""
Compute a reference probability for a PDE benchmark and store it in the config.

The reference is the mean of several high-budget standard-CE estimates; the
config's p_ref is then used for the SCV column of runs.csv and compare.csv.

Usage:
    python scripts/build_reference.py config/experiments/pde_standard.json --repetitions 10 --m 20000
    python scripts/build_reference.py config/experiments/pde_standard.json --write config/experiments/pde_*.json
"""

import argparse
import json
import logging
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from config.experiment import load_config
from config.settings import Settings
from services.experiment_service import build_reference


def main():
    parser = argparse.ArgumentParser(description="High-budget reference probability for a benchmark config")
    parser.add_argument("config", help="Experiment config (JSON)")
    parser.add_argument("--repetitions", type=int, default=10)
    parser.add_argument("--m", type=int, default=20000)
    parser.add_argument("--write", nargs="*", default=[], help="Configs whose p_ref should be updated")
    args = parser.parse_args()

    logging.basicConfig(level=Settings().MFCE_LOG_LEVEL.upper())
    config = load_config(args.config)

    print(f"[1/2] Averaging {args.repetitions} standard-CE estimates at m={args.m}...")
    p_ref = build_reference(config, args.repetitions, args.m)
    print(f"      p_ref = {p_ref:.6e}")

    print(f"[2/2] Updating {len(args.write)} config(s)...")
    for path in args.write:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        data["p_ref"] = p_ref
        Path(path).write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")
        print(f"      {path}")


if __name__ == "__main__":
    main()
