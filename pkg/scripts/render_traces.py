#!/usr/bin/env python3
"""Render evaluation trace dumps over the maze layout.

The core package writes plot data, not images: `horizonplan dump-maze
--json` produces the grid file and `horizonplan eval --dump-traces N`
writes per-instance trace CSVs. This script turns those into PNGs.

Usage:
    python scripts/render_traces.py out/umaze.json out/traces/ -o figures/
"""

import argparse
import csv
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def load_maze(path):
    import json

    with open(path) as f:
        dump = json.load(f)
    return np.asarray(dump["grid"], dtype=np.uint8), dump["cell_size"], dump["name"]


def load_trace(path):
    xs, ys, seg = [], [], []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            xs.append(float(row["x"]))
            ys.append(float(row["y"]))
            seg.append(int(row["segment_id"]) if row["segment_id"] else 0)
    return np.array(xs), np.array(ys), np.array(seg)


def draw_maze(ax, grid, cell_size):
    ny, nx = grid.shape
    img = np.where(grid, 0.25, 1.0)
    ax.imshow(img, cmap="gray", vmin=0, vmax=1, origin="lower",
              extent=(0, nx * cell_size, 0, ny * cell_size))
    ax.set_xticks([])
    ax.set_yticks([])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("maze_json", help="grid dump from `dump-maze --json`")
    ap.add_argument("trace_dir", help="traces/ directory from `eval`")
    ap.add_argument("-o", "--out", default="figures", help="output directory")
    args = ap.parse_args()

    grid, cell_size, name = load_maze(args.maze_json)
    os.makedirs(args.out, exist_ok=True)
    files = sorted(f for f in os.listdir(args.trace_dir) if f.endswith(".csv"))
    if not files:
        raise SystemExit(f"no trace CSVs in {args.trace_dir}")

    for fname in files:
        xs, ys, seg = load_trace(os.path.join(args.trace_dir, fname))
        fig, ax = plt.subplots(figsize=(5, 5))
        draw_maze(ax, grid, cell_size)
        # one color per replanning segment
        for sid in np.unique(seg):
            m = seg == sid
            # include the handoff point so segments join up
            idx = np.flatnonzero(m)
            if idx[0] > 0:
                idx = np.r_[idx[0] - 1, idx]
            ax.plot(xs[idx], ys[idx], lw=1.4,
                    color=plt.cm.viridis(sid / max(1, seg.max())))
        ax.plot(xs[0], ys[0], "o", color="tab:green", ms=7, label="start")
        ax.plot(xs[-1], ys[-1], "*", color="tab:red", ms=11, label="end")
        ax.set_title(f"{name}: {fname[:-4]}")
        ax.legend(loc="upper right", fontsize=8)
        out = os.path.join(args.out, fname[:-4] + ".png")
        fig.savefig(out, dpi=150, bbox_inches="tight")
        plt.close(fig)
        print(f"wrote {out}")


if __name__ == "__main__":
    main()
