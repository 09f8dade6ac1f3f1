"""
Plot a compare.csv: SCV, wall-clock and iterations per level for each engine.

Usage:
    python scripts/plot_compare.py runs/compare_pde/compare.csv [--out compare.png]
"""

import argparse
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd


def plot_compare(csv_path: Path, out_path: Path) -> Path:
    table = pd.read_csv(csv_path)
    names = [f"{row.algorithm}\n{row.levels}" for row in table.itertuples()]
    iter_cols = [c for c in table.columns if c.startswith("iters_d")]

    fig, axes = plt.subplots(1, 3, figsize=(15, 4.5))

    axes[0].bar(names, table["scv"].fillna(0.0), color="#4c72b0")
    axes[0].set_yscale("log")
    axes[0].set_title("Empirical SCV")

    axes[1].bar(names, table["wall_clock_s"], color="#55a868")
    axes[1].set_title("Mean wall-clock (s)")

    bottom = pd.Series(0.0, index=table.index)
    for col in iter_cols:
        values = table[col].fillna(0.0)
        axes[2].bar(names, values, bottom=bottom, label=col.replace("iters_d", "d = "))
        bottom = bottom + values
    axes[2].set_title("Mean iterations per level")
    axes[2].legend(fontsize=8)

    for ax in axes:
        ax.tick_params(axis="x", labelsize=8)
        ax.grid(axis="y", alpha=0.3)

    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def main():
    parser = argparse.ArgumentParser(description="Plot a compare.csv")
    parser.add_argument("csv", help="compare.csv produced by 'mfce.py compare'")
    parser.add_argument("--out", help="Image path (default: next to the CSV)")
    args = parser.parse_args()

    csv_path = Path(args.csv)
    out_path = Path(args.out) if args.out else csv_path.with_suffix(".png")
    print(f"Wrote {plot_compare(csv_path, out_path)}")


if __name__ == "__main__":
    main()
