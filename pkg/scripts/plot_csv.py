"""Quick look at a CSV artifact written by main.py (needs matplotlib)."""
import argparse
import csv
import sys

import matplotlib.pyplot as plt
import numpy as np


# x column, y columns and log axes per artifact header
LAYOUTS = {
    ("k", "T_N"): ("k", ["T_N"], False),
    ("x", "re_psi"): ("x", ["re_psi", "im_psi", "abs_psi"], False),
    ("epsilon", "peak_k"): ("epsilon", ["one_minus_T"], True),
    ("epsilon", "re_ka"): ("epsilon", ["re_ka", "re_kb", "im_ka", "im_kb"], False),
    ("re_k", "im_k"): ("re_k", ["im_k"], False),
}


def load(path):
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    header, body = rows[0], rows[1:]
    columns = {name: np.array([float(r[i]) for r in body]) for i, name in enumerate(header)
               if body and body[0][i] not in ("true", "false", "bloch", "accidental")}
    return tuple(header[:2]), columns


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("csv")
    parser.add_argument("--save", help="write the figure instead of showing it")
    args = parser.parse_args(argv)

    key, columns = load(args.csv)
    if key not in LAYOUTS:
        print(f"don't know how to plot a file starting with columns {key}", file=sys.stderr)
        return 2
    x_name, y_names, loglog = LAYOUTS[key]

    fig, ax = plt.subplots(figsize=(8, 5))
    for name in y_names:
        style = "o" if x_name == "re_k" else "-"
        ax.plot(columns[x_name], columns[name], style, label=name)
    if loglog:
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel(x_name)
    ax.grid(True)
    ax.legend()
    plt.tight_layout()
    if args.save:
        fig.savefig(args.save, dpi=150)
    else:
        plt.show()
    return 0


if __name__ == "__main__":
    sys.exit(main())
