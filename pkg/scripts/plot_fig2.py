"""Render the three storage-sweep panels from a ``sweep-storage`` output directory.

Usage: python scripts/plot_fig2.py OUT_DIR [-o figure.png]

Needs matplotlib (``pip install artifact[plot]``). The simulator itself never
draws; this script only reads the CSV/JSON files it emits.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np


def load(out: Path):
    norm = np.genfromtxt(out / "fig2a_normalized.csv", delimiter=",", names=True)
    peaks = np.genfromtxt(out / "fig2b_peaks.csv", delimiter=",", names=True)
    g2 = np.genfromtxt(out / "fig2c_g2.csv", delimiter=",", names=True)
    fit_path = out / "fig2b_lossfit.json"
    fit = json.loads(fit_path.read_text()) if fit_path.exists() else None
    return norm, np.atleast_1d(peaks), np.atleast_1d(g2), fit


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("out_dir", type=Path)
    parser.add_argument("-o", "--output", type=Path, help="image file (default: show a window)")
    args = parser.parse_args(argv)

    import matplotlib.pyplot as plt

    norm, peaks, g2, fit = load(args.out_dir)
    fig, (ax_a, ax_b, ax_c) = plt.subplots(1, 3, figsize=(14, 4))

    t = norm["bin_start_ps"]
    for name in norm.dtype.names[1:]:
        ax_a.plot(t, norm[name], lw=0.8, label=name)
    lo = peaks["k"].min() * 100 + 800
    ax_a.set_xlim(lo, lo + (peaks["k"].max() - peaks["k"].min() + 4) * 100)
    ax_a.set_xlabel("time after trigger (ps)")
    ax_a.set_ylabel("normalised counts")
    ax_a.legend(fontsize="small")

    k = peaks["k"]
    y = -10 * np.log10(peaks["normalized_amplitude"])
    ax_b.plot(k, y, "o")
    if fit:
        ax_b.plot(k, fit["slope_db_per_trip"] * k + fit["intercept_db"],
                  label=f"{fit['slope_db_per_trip']:.3f} dB/trip")
        ax_b.legend()
    ax_b.set_xlabel("round trips k")
    ax_b.set_ylabel("loss relative to max peak (dB)")

    ax_c.errorbar(g2["storage_time_ps"], g2["g2"], yerr=g2["stderr"], fmt="o", capsize=3)
    ax_c.axhline(1.0, color="grey", lw=0.8)
    ax_c.set_xlabel("storage time (ps)")
    ax_c.set_ylabel("g2(0)")

    fig.tight_layout()
    if args.output:
        fig.savefig(args.output, dpi=150)
    else:
        plt.show()


if __name__ == "__main__":
    main()
